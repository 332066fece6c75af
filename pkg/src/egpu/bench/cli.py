"""``egpu-sim`` command line."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from egpu.config import load_config, static_report
from egpu.errors import EgpuError
from egpu.sim.device import DeviceTrap


def _sizes(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x)
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {text!r}") from None


def _config(preset, config_file, sets):
    doc = Path(config_file).read_text() if config_file else None
    return load_config(doc, sets, preset=preset)


def _parse_arg(spec: str, rt, rng):
    """``int:V``, ``buf:N`` (zeros), ``rand:N`` (random words) or ``file:PATH`` (little-endian int32)."""
    kind, _, rest = spec.partition(":")
    if kind == "int":
        return int(rest, 0)
    if kind == "buf":
        return rt.alloc_array(np.zeros(int(rest, 0), np.int32))
    if kind == "rand":
        return rt.alloc_array(rng.integers(-1000, 1000, int(rest, 0)))
    if kind == "file":
        return rt.alloc_array(np.fromfile(rest, dtype="<i4"))
    raise click.BadParameter(f"unknown argument form {spec!r}")


@click.group()
def main():
    """Cycle-level e-GPU simulator and benchmark harness."""


def _fail(exc: Exception):
    click.echo(f"error: {exc}", err=True)
    sys.exit(2 if isinstance(exc, DeviceTrap) else 1)


@main.command()
@click.option("--preset", default="4t", show_default=True)
@click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--set", "sets", multiple=True, help="Override one configuration key (key=value).")
@click.option("--kernel", "kernel_file", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--global", "global_size", required=True, help="GX[,GY]")
@click.option("--local", "local_size", default="1", show_default=True, help="LX[,LY]")
@click.option("--arg", "args", multiple=True, help="Kernel argument: int:V, buf:N, rand:N or file:PATH.")
@click.option("--dispatch", type=click.Choice(["static", "dynamic"]), default="dynamic", show_default=True)
@click.option("--trace", is_flag=True, help="Print the retired-instruction trace to stderr.")
@click.option("--seed", default=0, show_default=True)
def run(preset, config_file, sets, kernel_file, global_size, local_size, args, dispatch, trace, seed):
    """Compile and launch one kernel, then print its report as JSON."""
    from egpu.apu.runtime import Buffer, Runtime
    from egpu.bench.report import RunReport
    from egpu.kernelc.link import build_simt

    try:
        cfg = _config(preset, config_file, sets)
        image = build_simt(Path(kernel_file).read_text(), cfg)
        rt = Runtime(cfg, trace_cap=1 << 20 if trace else 0)
        rng = np.random.default_rng(seed)
        values = [_parse_arg(a, rt, rng) for a in args]
        rec = rt.run(image, _sizes(global_size), _sizes(local_size), values, static=dispatch == "static")
    except (EgpuError, OSError) as exc:
        _fail(exc)
    if trace:
        for line in rt.device.trace_lines():
            click.echo(line, err=True)
    rep = RunReport.from_record(cfg, Path(kernel_file).stem, int(np.prod(_sizes(global_size))), rec)
    doc = rep.to_json()
    doc["buffers"] = {str(i): rt.buffer_read(v).tolist() for i, v in enumerate(values)
                      if isinstance(v, Buffer) and v.size <= 4096}
    click.echo(json.dumps(doc, indent=2, sort_keys=True))


@main.group()
def sweep():
    """Parameter sweeps."""


@sweep.command("gemm")
@click.option("--sizes", default="32,64,128,256", show_default=True)
@click.option("--presets", default="4t,8t,16t", show_default=True)
@click.option("--dispatch", type=click.Choice(["static", "dynamic"]), default="dynamic", show_default=True)
@click.option("--any-size", is_flag=True, help="Allow sizes outside the standard sweep.")
@click.option("--set", "sets", multiple=True)
@click.option("--wall-clock", is_flag=True, help="Include simulation wall-clock time (not reproducible).")
@click.option("-o", "--out", "out_dir", default="out", show_default=True, type=click.Path(file_okay=False))
def sweep_gemm(sizes, presets, dispatch, any_size, sets, wall_clock, out_dir):
    """GeMM execution-time breakdown for each size and preset."""
    from egpu.bench.report import emit_report, run_gemm_sweep

    try:
        reps = run_gemm_sweep(_sizes(sizes), presets, allow_any_size=any_size, static=dispatch == "static",
                              overrides=sets)
        paths = emit_report(reps, out_dir, wall=wall_clock)
    except (EgpuError, OSError) as exc:
        _fail(exc)
    for r in reps:
        s = r.share
        click.echo(f"{r.preset:9s} {r.size:4d}  total {r.cycles['total']:>10d}  transfer {100 * s['transfer']:6.2f}%"
                   f"  scheduling {100 * s['scheduling']:6.3f}%  compute {100 * s['compute']:6.2f}%")
    for p in paths:
        click.echo(f"wrote {p}")


@main.command()
@click.option("--presets", default="all", show_default=True)
@click.option("--signal", "signal_spec", default=None, help="sine:FREQ,AMP,N | breath:N[,SEED] | file:PATH")
@click.option("--set", "sets", multiple=True)
@click.option("-o", "--out", "out_dir", default="out", show_default=True, type=click.Path(file_okay=False))
def tinybio(presets, signal_spec, sets, out_dir):
    """Per-stage speedup and energy reduction of the bio-signal pipeline."""
    from egpu.bench.report import emit_report, run_tinybio
    from egpu.kernels import signals

    try:
        sig = None
        if signal_spec:
            sig = (signals.read_samples(signal_spec[5:]) if signal_spec.startswith("file:")
                   else signals.parse_signal(signal_spec))
        rows = run_tinybio(presets, signal=sig, overrides=sets)
        paths = emit_report(rows, out_dir)
    except (EgpuError, OSError, ValueError) as exc:
        _fail(exc)
    for r in rows:
        click.echo(f"{r.stage:14s} {r.preset:9s} speedup {r.speedup:6.2f}  energy reduction "
                   f"{r.energy_reduction:5.2f}{'' if r.verified else '  OUTPUT MISMATCH'}")
    for p in paths:
        click.echo(f"wrote {p}")
    if not all(r.verified for r in rows):
        sys.exit(1)


@main.command("static-report")
@click.option("--preset", required=True)
def static_report_cmd(preset):
    """Published area and leakage of a configuration."""
    try:
        click.echo(json.dumps(static_report(preset), sort_keys=True))
    except EgpuError as exc:
        _fail(exc)


if __name__ == "__main__":
    main()
