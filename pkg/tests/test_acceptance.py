"""Acceptance criteria 1 to 9, one verdict line each.

Run with pytest (the lines appear in the terminal summary) or directly with
``python tests/test_acceptance.py``.
"""

import math
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from egpu.apu.runtime import Runtime
from egpu.bench.energy import unit_energy
from egpu.bench.report import emit_report, run_gemm_sweep, run_tinybio
from egpu.bench.workloads import STAGES
from egpu.config import load_config, static_report
from egpu.isa import Instruction, assemble, decode, disassemble, encode, format_instruction
from egpu.sim import engine as E

import test_cache
import test_engine
import test_isa
import test_kernels
from conftest import PRESETS
from experiments import gemm_sweep, tinybio_rows

RESULTS: dict[int, tuple[bool, str]] = {}


def record(n, ok, detail):
    RESULTS[n] = (bool(ok), detail)
    return ok


# 1 ------------------------------------------------------------------------

def criterion_1():
    t0 = time.perf_counter()
    failures = [f for p in PRESETS for f in test_kernels.equivalence(p)]
    dt = time.perf_counter() - t0
    return record(1, not failures and dt <= 300,
                  f"{len(test_kernels.KERNEL_NAMES)} kernels x {test_kernels.CASES} inputs x 3 presets, "
                  f"{len(failures)} mismatches, {dt:.0f} s (limit 300 s)")


# 2 and 3 ------------------------------------------------------------------

def _sweep_by_preset():
    t0 = time.perf_counter()
    reps = gemm_sweep()
    dt = time.perf_counter() - t0
    by = {}
    for r in reps:
        by.setdefault(r.preset, {})[r.size] = r
    return by, dt


def criterion_2():
    by, dt = _sweep_by_preset()
    ok = dt <= 600
    parts = []
    for p in PRESETS:
        rows = by[p]
        sched = [rows[n].cycles["scheduling"] for n in sorted(rows)]
        spread = (max(sched) - min(sched)) / min(sched)
        shares = [rows[n].share["scheduling"] for n in sorted(rows)]
        dec = all(a > b for a, b in zip(shares, shares[1:]))
        ok &= spread <= 0.01 and shares[-1] < 0.01 and dec
        parts.append(f"{p}: sched {min(sched)}..{max(sched)} ({100 * spread:.2f}%), "
                     f"share@256 {100 * shares[-1]:.3f}%{'' if dec else ' not decreasing'}")
    return record(2, ok, "; ".join(parts) + f"; sweep {dt:.0f} s")


def criterion_3():
    by, _ = _sweep_by_preset()
    ok = True
    parts = []
    for p in PRESETS:
        s128, s256 = (by[p][n].share["transfer"] for n in (128, 256))
        band = all(0.15 <= s <= 0.35 for s in (s128, s256))
        drift = abs(s256 - s128) <= 0.05
        ok &= band and drift
        parts.append(f"{p}: {100 * s128:.1f}% -> {100 * s256:.1f}%")
    mono = all(by["egpu-4t"][n].cycles["transfer"] >= by["egpu-8t"][n].cycles["transfer"]
               >= by["egpu-16t"][n].cycles["transfer"] for n in (32, 64, 128, 256))
    ok &= mono
    parts.append("transfer cycles non-increasing 4T->16T" if mono else "transfer cycles rise from 4T to 16T")
    return record(3, ok, "; ".join(parts) + " (band 15-35%, drift <= 5 pp)")


# 4 and 5 ------------------------------------------------------------------

def _rows():
    out = {}
    for r in tinybio_rows():
        out[(r.stage, r.preset)] = r
    return out


def criterion_4():
    rows = _rows()
    ok = all(r.verified for r in rows.values())
    parts = []
    for s in STAGES:
        sp = [rows[(s, p)].speedup for p in PRESETS]
        ok &= sp[2] > sp[1] > sp[0] > 1
        parts.append(f"{s} " + "/".join(f"{v:.2f}" for v in sp))
    for p in PRESETS:
        ok &= rows[("delineation", p)].speedup < rows[("preprocessing", p)].speedup
    fir16 = rows[("preprocessing", "egpu-16t")].speedup
    ok &= 7.5 <= fir16 <= 30
    return record(4, ok, "speedup 4T/8T/16T: " + "; ".join(parts) + f"; FIR 16T {fir16:.2f} in [7.5, 30]")


def _gated_unit_dynamic_fj():
    cfg = load_config(preset="16t")
    rt = Runtime(cfg)
    big = rt.alloc_array(np.zeros(8192))
    a, b, c = rt.alloc_array([1, 2]), rt.alloc_array([3, 4]), rt.alloc_array([0, 0])
    rt.load(test_kernels.image_for("vecadd", cfg))
    rt.set_args((2,), (1,), [a, b, c], warm=[a, b, c, big])
    rt.launch()
    ctl = rt.controller
    snap, step = {}, 0
    while ctl.regs.busy:
        step += 25
        ctl.advance(step)
        for cu, g in enumerate(ctl.gated_at):
            if g is not None and cu not in snap:
                snap[cu] = rt.device.st.cu_cnt[cu].copy()
    rec = rt.wait()
    deltas = np.array([rec.cu_counters[cu] - before for cu, before in snap.items()])
    gated = int(deltas[:, E.CU_GATED].sum())
    return gated, sum(e.dynamic_fj for e in unit_energy(deltas, cfg))


def criterion_5():
    rows = _rows()
    ok = True
    parts = []
    for s in STAGES:
        er = [rows[(s, p)].energy_reduction for p in PRESETS]
        ok &= min(er) > 1 and er[0] <= er[1] <= er[2]
        parts.append(f"{s} " + "/".join(f"{v:.2f}" for v in er))
    exact = all(r.energy_nj["total"] == sum(r.energy_fj.values()) / 1e6 and
                all(isinstance(v, int) for v in r.energy_fj.values()) for r in gemm_sweep())
    gated_cycles, gated_fj = _gated_unit_dynamic_fj()
    ok &= exact and gated_cycles > 0 and gated_fj == 0
    return record(5, ok, "energy reduction 4T/8T/16T: " + "; ".join(parts)
                  + f"; identity exact: {exact}; gated unit: {gated_cycles} cycles, {gated_fj} fJ dynamic")


# 6 ------------------------------------------------------------------------

def criterion_6():
    rng = np.random.default_rng(6)
    n = test_cache.N_ACCESSES
    ok = True
    for p in PRESETS:
        cfg = load_config(preset=p)
        for kind in ("d", "i"):
            dev = test_cache.Device(cfg)
            if kind == "d":
                addrs = test_cache._addresses(rng, 4 * cfg.dcache_size, n)
                hits = np.zeros(n, np.int64)
                test_cache._drive_dcache(dev.st, addrs >> int(math.log2(cfg.dcache_line)),
                                         (rng.random(n) < 0.3).astype(np.int64), hits)
                ref = test_cache._reference(addrs, cfg.dcache_line, cfg.dcache_size // cfg.dcache_line)
            else:
                addrs = test_cache._addresses(rng, 4 * cfg.icache_size_per_cu, n)
                hits = np.zeros(n, np.int64)
                test_cache._drive_icache(dev.st, addrs, hits)
                ref = test_cache._reference(addrs, cfg.icache_line, cfg.icache_size_per_cu // cfg.icache_line)
            ok &= np.array_equal(hits, ref)
    seq_ok = bool(ok)
    txn_ok = _passes(test_cache.test_line_miss_is_serialized_into_word_transactions)
    grant_ok = all(_passes(test_cache.test_bus_grants_at_most_one_per_cycle, p) for p in ("4t", "8t", "16t"))
    return record(6, seq_ok and txn_ok and grant_ok,
                  f"hit/miss sequences over {n} accesses x 2 caches x 3 presets: {'match' if seq_ok else 'DIFFER'}; "
                  f"32 B miss = 8 word transactions: {txn_ok}; <= 1 grant/cycle: {grant_ok}")


def _passes(fn, *args):
    try:
        fn(*args)
        return True
    except AssertionError:
        return False


# 7 ------------------------------------------------------------------------

def criterion_7():
    masks = all(_passes(test_engine.test_split_conserves_masks, p) for p in ("4t", "8t", "16t"))
    cover = _passes(test_engine.test_gid_coverage_exactly_once)
    empty = all(_passes(test_engine.test_empty_launch_runs_no_kernel_code, load_config(preset=p)) for p in PRESETS)
    import test_controller
    irq = all(_passes(test_controller.test_irq_once_after_every_sleep_event, load_config(preset=p))
              for p in PRESETS)
    return record(7, masks and cover and empty and irq,
                  f"mask conservation: {masks}; gid exactly-once over 200 launches: {cover}; "
                  f"empty launch: {empty}; single IRQ after all sleep events: {irq}")


# 8 ------------------------------------------------------------------------

def _random_instructions(count, seed):
    rng = np.random.default_rng(seed)
    names = sorted(test_isa.SPECS)
    imm = {"I": (-2048, 2048, 1), "L": (-2048, 2048, 1), "JALR": (-2048, 2048, 1), "S": (-2048, 2048, 1),
           "IS": (0, 32, 1), "B": (-2048, 2048, 2), "XB": (-2048, 2048, 2), "U": (0, 1 << 20, 1),
           "J": (-(1 << 19), 1 << 19, 2), "CSR": (0, 4096, 1), "CSRI": (0, 4096, 1)}
    out = []
    for _ in range(count):
        name = names[rng.integers(0, len(names))]
        fmt = test_isa.SPECS[name].fmt
        u = test_isa.USES[fmt]
        lo, hi, scale = imm.get(fmt, (0, 1, 1))
        v = 0x0FF if fmt == "FENCE" else int(rng.integers(lo, hi)) * scale
        r = [int(x) for x in rng.integers(0, 32, 3)]
        out.append(Instruction(name, r[0] if "d" in u else 0, r[1] if "s" in u else 0, r[2] if "t" in u else 0, v))
    return out


def _report_bytes():
    with tempfile.TemporaryDirectory() as d:
        emit_report(run_gemm_sweep((32, 64)), Path(d) / "g")
        emit_report(run_tinybio(), Path(d) / "t")
        return {str(p.relative_to(d)): p.read_bytes() for p in sorted(Path(d).rglob("*")) if p.is_file()}


def criterion_8():
    b = assemble(test_isa.CORPUS, base=0x8000)
    corpus = len(b.words) >= 50 and assemble(disassemble(b)).words == b.words
    ins = _random_instructions(5000, 8)
    rand = all(decode(encode(i)) == i and assemble(format_instruction(i), base=0).words == [encode(i)] for i in ins)
    golden = all(assemble(t, base=0).words == [w] for t, w in test_isa.GOLDEN)
    same = _report_bytes() == _report_bytes()
    return record(8, corpus and rand and golden and same,
                  f"corpus of {len(b.words)} round-trips: {corpus}; 5000 random instructions: {rand}; "
                  f"{len(test_isa.GOLDEN)} reference encodings: {golden}; byte-identical reports: {same}")


# 9 ------------------------------------------------------------------------

def criterion_9():
    want = {"4t": (0.24, 130.13), "16t": (0.38, 305.32), "host-only": (0.15, 29.50)}
    got = {k: (static_report(k)["area_mm2"], static_report(k)["leakage_uw"]) for k in want}
    return record(9, got == want, ", ".join(f"{k} {a} mm2 / {l} uW" for k, (a, l) in got.items()))


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7,
            criterion_8, criterion_9]


def verdict(n):
    ok, detail = RESULTS[n]
    return f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"


def verdict_lines():
    return [verdict(n) for n in sorted(RESULTS)]


@pytest.mark.parametrize("n", range(1, 10))
def test_criterion(n):
    ok = CRITERIA[n - 1]()
    print(verdict(n))
    assert ok, RESULTS[n][1]


if __name__ == "__main__":
    for n, fn in enumerate(CRITERIA, 1):
        fn()
        print(verdict(n), flush=True)
