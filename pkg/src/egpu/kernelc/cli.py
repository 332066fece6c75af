"""``kernelc`` command line."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from egpu.config import load_config
from egpu.errors import EgpuError


@click.group()
def main():
    """Kernel compiler for the e-GPU."""


@main.command()
@click.option("--target", type=click.Choice(["simt", "scalar"]), default="simt", show_default=True)
@click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--preset", default=None)
@click.option("--set", "sets", multiple=True, help="Override one configuration key (key=value).")
@click.option("-S", "--asm", "asm_only", is_flag=True, help="Write the kernel assembly instead of an image.")
@click.option("-o", "--out", "out", required=True, type=click.Path(dir_okay=False))
@click.argument("source", type=click.Path(exists=True, dir_okay=False))
def compile(target, config_file, preset, sets, asm_only, out, source):
    """Compile SOURCE into a flat little-endian image plus a symbol listing (OUT.sym)."""
    from egpu.kernelc.link import build_scalar, build_simt

    try:
        doc = Path(config_file).read_text() if config_file else None
        cfg = load_config(doc, sets, preset=preset)
        text = Path(source).read_text()
        image = build_simt(text, cfg) if target == "simt" else build_scalar(text, cfg)
        if asm_only:
            Path(out).write_text(image.kernel.asm)
        else:
            binary = image.binary()
            Path(out).write_bytes(binary.to_bytes())
            Path(out + ".sym").write_text(binary.symbol_listing())
    except (EgpuError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(f"{source}: {image.size} bytes at {image.base:#x}, entry {image.entry:#x}")


if __name__ == "__main__":
    main()
