"""Experiment orchestration and machine-readable reports."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from egpu.apu.runtime import LaunchRecord
from egpu.bench.energy import Energy, device_energy, host_energy
from egpu.bench.workloads import STAGES, DeviceExecutor, HostExecutor, gemm_tile, tinybio, tinybio_reference
from egpu.config import SimConfig, load_config
from egpu.errors import EgpuError
from egpu.kernels import TinyBioParams, load_params, oracles, signals
from egpu.sim import engine as E

GEMM_SIZES = (32, 64, 128, 256)
ALL_PRESETS = ("egpu-4t", "egpu-8t", "egpu-16t")

RUN_COLUMNS = ("preset", "benchmark", "size", "cycles_transfer", "cycles_scheduling", "cycles_compute",
               "cycles_total", "instructions", "lane_instructions", "dcache_hits", "dcache_misses",
               "icache_hits", "icache_misses", "bus_transactions", "idle_cycles_per_cu",
               "energy_nj_total", "energy_nj_leakage", "energy_nj_dynamic")
COMPARISON_COLUMNS = ("stage", "preset", "host_cycles", "host_energy_nj", "egpu_cycles", "egpu_energy_nj",
                      "speedup", "energy_reduction")


class ReportError(EgpuError):
    pass


class IoError(ReportError):
    pass


@dataclass
class RunReport:
    preset: str
    benchmark: str
    size: int
    cycles: dict[str, int]
    counters: dict[str, object]
    energy_nj: dict[str, float]
    energy_fj: dict[str, int] = field(repr=False)
    wall_clock_s: float = 0.0

    @classmethod
    def from_record(cls, cfg: SimConfig, benchmark: str, size: int, rec: LaunchRecord,
                    wall: float = 0.0) -> "RunReport":
        pc = rec.phase_cycles
        # startup is firmware overhead like dispatch, so it is booked with scheduling
        cycles = {"transfer": pc["transfer"], "scheduling": pc["startup"] + pc["sched"],
                  "compute": pc["kernel"], "total": rec.cycles}
        tot = rec.totals()
        counters = {
            "instructions": tot["instructions"], "lane_instructions": tot["lane_instructions"],
            "dcache_hits": tot["dcache_hits"] + tot["dcache_merges"], "dcache_misses": tot["dcache_misses"],
            "icache_hits": tot["icache_hits"], "icache_misses": tot["icache_misses"],
            "bus_transactions": tot["bus_reads"] + tot["bus_writes"],
            "idle_cycles_per_cu": [int(x) for x in rec.cu_counters[:, E.CU_IDLE]],
        }
        e = device_energy({**tot, "cycles": rec.cycles}, cfg)
        return cls(cfg.preset, benchmark, size, cycles, counters, _energy_dict(e), dict(e.components_fj), wall)

    @property
    def share(self) -> dict[str, float]:
        t = self.cycles["total"] or 1
        return {k: self.cycles[k] / t for k in ("transfer", "scheduling", "compute")}

    def row(self) -> dict[str, object]:
        c, n = self.cycles, self.counters
        return {"preset": self.preset, "benchmark": self.benchmark, "size": self.size,
                "cycles_transfer": c["transfer"], "cycles_scheduling": c["scheduling"],
                "cycles_compute": c["compute"], "cycles_total": c["total"],
                "instructions": n["instructions"], "lane_instructions": n["lane_instructions"],
                "dcache_hits": n["dcache_hits"], "dcache_misses": n["dcache_misses"],
                "icache_hits": n["icache_hits"], "icache_misses": n["icache_misses"],
                "bus_transactions": n["bus_transactions"],
                "idle_cycles_per_cu": ";".join(str(x) for x in n["idle_cycles_per_cu"]),
                "energy_nj_total": self.energy_nj["total"], "energy_nj_leakage": self.energy_nj["leakage"],
                "energy_nj_dynamic": round(self.energy_nj["total"] - self.energy_nj["leakage"], 6)}

    def to_json(self, wall: bool = False) -> dict:
        d = {"preset": self.preset, "benchmark": self.benchmark, "size": self.size, "cycles": dict(self.cycles),
             "counters": dict(self.counters), "energy_nj": dict(self.energy_nj)}
        if wall:
            d["wall_clock_s"] = self.wall_clock_s
        return d


@dataclass
class ComparisonRow:
    stage: str
    preset: str
    host_cycles: int
    host_energy_nj: float
    egpu_cycles: int
    egpu_energy_nj: float
    verified: bool = True

    @property
    def speedup(self) -> float:
        return self.host_cycles / self.egpu_cycles

    @property
    def energy_reduction(self) -> float:
        return self.host_energy_nj / self.egpu_energy_nj

    def row(self) -> dict[str, object]:
        d = {k: getattr(self, k) for k in COMPARISON_COLUMNS}
        d["speedup"] = round(self.speedup, 6)
        d["energy_reduction"] = round(self.energy_reduction, 6)
        return d

    def to_json(self) -> dict:
        return {**self.row(), "verified": self.verified}


def _energy_dict(e: Energy) -> dict[str, float]:
    return {**e.nj(), "total": e.total_nj}


def _canon(preset: str) -> str:
    return load_config(preset=preset).preset


def expand_presets(names) -> list[str]:
    if isinstance(names, str):
        names = [n for n in names.split(",") if n]
    if list(names) == ["all"]:
        return list(ALL_PRESETS)
    return [_canon(n) for n in names]


# -- experiments -----------------------------------------------------------------

def gemm_inputs(n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed + n)
    return rng.integers(-128, 128, (n, n)), rng.integers(-128, 128, (n, n))


def run_gemm(cfg: SimConfig, n: int, static: bool = False, seed: int = 0, verify: bool = True) -> RunReport:
    A, B = gemm_inputs(n, seed)
    t = time.perf_counter()
    C, rec = gemm_tile(DeviceExecutor(cfg, static=static), A, B)
    wall = time.perf_counter() - t
    if verify and not np.array_equal(C, oracles.gemm(A, B)):
        raise ReportError(f"GeMM {n}x{n} on {cfg.preset} disagrees with the reference product")
    return RunReport.from_record(cfg, "gemm", n, rec, wall)


def run_gemm_sweep(sizes=GEMM_SIZES, presets=ALL_PRESETS, allow_any_size: bool = False,
                   static: bool = False, overrides=(), verify_limit: int = 128) -> list[RunReport]:
    """One report per (size, preset), work-items matching hardware threads."""
    sizes = [int(s) for s in sizes]
    bad = [s for s in sizes if s not in GEMM_SIZES]
    if bad and not allow_any_size:
        raise ReportError(f"sizes {bad} are outside {list(GEMM_SIZES)}; pass allow_any_size to run them")
    out = []
    for preset in expand_presets(presets):
        cfg = load_config(preset=preset, overrides=overrides)
        for n in sizes:
            out.append(run_gemm(cfg, n, static=static, verify=n <= verify_limit))
    return sorted(out, key=lambda r: (r.preset, r.size))


def _stage_costs(costs: dict[str, list], energy) -> tuple[dict[str, int], dict[str, int]]:
    cyc, fj = {}, {}
    for s in STAGES:
        pairs = [energy(r) for r in costs[s]]
        cyc[s] = sum(c for c, _ in pairs)
        fj[s] = sum(e for _, e in pairs)
    return cyc, fj


def run_tinybio(presets=ALL_PRESETS, params: TinyBioParams | None = None, signal=None,
                overrides=()) -> list[ComparisonRow]:
    """Per-stage host-versus-accelerator comparison with warm caches and static dispatch.

    Only the computation phase of each launch is charged to the accelerator.
    """
    p = params or load_params()
    sig = signals.breathing(p.signal_length, 0) if signal is None else np.asarray(signal)
    ref = tinybio_reference(p, sig)

    hcfg = load_config(preset=ALL_PRESETS[0], overrides=overrides)
    host = tinybio(HostExecutor(hcfg), p, sig)

    def host_cost(r):
        return r.cycles, host_energy(r, hcfg).total_fj

    hc, he = _stage_costs(host.costs, host_cost)
    rows = []
    for preset in expand_presets(presets):
        cfg = load_config(preset=preset, overrides=overrides)
        dev = tinybio(DeviceExecutor(cfg, static=True, prefill=True), p, sig)
        ok = _same_outputs(dev, ref) and _same_outputs(host, ref)

        def dev_cost(r, cfg=cfg):
            k = r.counters["kernel"]
            return k["cycles"], device_energy(k, cfg).total_fj

        dc, de = _stage_costs(dev.costs, dev_cost)
        for s in STAGES:
            rows.append(ComparisonRow(s, preset, hc[s], he[s] / 1e6, dc[s], de[s] / 1e6, ok))
    return sorted(rows, key=lambda r: (STAGES.index(r.stage), r.preset))


def _same_outputs(a, b) -> bool:
    return (np.array_equal(a.filtered, b.filtered) and np.array_equal(a.flags, b.flags)
            and a.peaks == b.peaks and a.troughs == b.troughs
            and np.array_equal(a.features, b.features) and a.label == b.label)


# -- output ------------------------------------------------------------------------

def report_schema() -> dict:
    return json.loads(resources.files("egpu.bench").joinpath("report.schema.json").read_text())


def check_report(doc: dict) -> None:
    """Validate a report document against the shipped schema."""
    import jsonschema
    jsonschema.validate(doc, report_schema())


def report_document(reports, wall: bool = False) -> dict:
    reports = list(reports)
    if not reports:
        raise ReportError("nothing to report")
    if isinstance(reports[0], RunReport):
        return {"kind": "runs", "reports": [r.to_json(wall) for r in reports]}
    return {"kind": "comparison", "rows": [r.to_json() for r in reports]}


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _gnuplot_runs(reports: list[RunReport]) -> dict[str, str]:
    files: dict[str, str] = {}
    for preset in sorted({r.preset for r in reports}):
        lines = ["# size transfer scheduling compute total"]
        for r in sorted((r for r in reports if r.preset == preset), key=lambda r: r.size):
            c = r.cycles
            lines.append(f"{r.size} {c['transfer']} {c['scheduling']} {c['compute']} {c['total']}")
        files[f"{reports[0].benchmark}_{preset}.dat"] = "\n".join(lines) + "\n"
    return files


def _gnuplot_rows(rows: list[ComparisonRow]) -> dict[str, str]:
    lines = ["# stage preset speedup energy_reduction"]
    for r in rows:
        lines.append(f"{r.stage} {r.preset} {r.speedup:.6f} {r.energy_reduction:.6f}")
    return {"tinybio.dat": "\n".join(lines) + "\n"}


def emit_report(reports, out_dir, formats=("csv", "json", "gnuplot"), stem: str | None = None,
                wall: bool = False) -> list[Path]:
    """Write CSV, JSON and gnuplot data files; returns the paths written."""
    reports = list(reports)
    doc = report_document(reports, wall)
    runs = doc["kind"] == "runs"
    stem = stem or (reports[0].benchmark if runs else "tinybio")
    files: dict[str, str] = {}
    if "csv" in formats:
        if runs:
            files[f"{stem}.csv"] = _csv_text(RUN_COLUMNS, [r.row() for r in reports])
        else:
            files[f"{stem}.csv"] = _csv_text(COMPARISON_COLUMNS, [r.row() for r in reports])
    if "json" in formats:
        files[f"{stem}.json"] = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if "gnuplot" in formats:
        files.update(_gnuplot_runs(reports) if runs else _gnuplot_rows(reports))
    out = Path(out_dir)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in sorted(files.items()):
            path = out / name
            path.write_text(text)
            written.append(path)
    except OSError as exc:
        raise IoError(f"cannot write reports to {out}: {exc}") from exc
    return written


__all__ = ["RunReport", "ComparisonRow", "ReportError", "IoError", "GEMM_SIZES", "ALL_PRESETS", "RUN_COLUMNS",
           "COMPARISON_COLUMNS", "run_gemm", "run_gemm_sweep", "run_tinybio", "emit_report", "check_report",
           "report_schema", "report_document", "expand_presets", "gemm_inputs"]
