"""Firmware assembly, kernel placement and the final flat image."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from egpu.config import RegionOverlap, SimConfig
from egpu.isa import KernelBinary, assemble
from egpu.kernelc.check import check_split_join
from egpu.kernelc.codegen import LoweredKernel, lower_kernel_scalar, lower_simt, scalar_driver
from egpu.kernelc.frontend import KernelAst, KernelcError, parse
from egpu.layout import ArgsLayout

PHASE_STARTUP, PHASE_TRANSFER, PHASE_SCHED, PHASE_KERNEL = range(4)
KERNEL_ALIGN = 16
KERNEL_SYMBOL = "__kernel_entry"


class EntryMissing(KernelcError):
    pass


@dataclass
class MemoryImage:
    base: int
    words: list[int]
    entry: int
    symbols: dict[str, int]
    regions: np.ndarray = field(repr=False)
    target: str = "simt"
    kernel: LoweredKernel | None = None

    @property
    def size(self) -> int:
        return 4 * len(self.words)

    @property
    def end(self) -> int:
        return self.base + self.size

    @property
    def kernel_range(self) -> tuple[int, int]:
        return self.symbols.get(KERNEL_SYMBOL, self.base), self.symbols.get("__image_end", self.end)

    def binary(self) -> KernelBinary:
        return KernelBinary(self.base, list(self.words), dict(self.symbols), self.entry)


def firmware_source() -> str:
    return resources.files("egpu.firmware").joinpath("firmware.S").read_text()


def firmware_symbols(cfg: SimConfig, kernel_entry: int) -> dict[str, int]:
    return {"__fw_stack_base": cfg.stack_base, "__fw_stack_size": cfg.stack_size_per_thread,
            "__fw_dcache_line": cfg.dcache_line, KERNEL_SYMBOL: kernel_entry}


def assemble_firmware(cfg: SimConfig, kernel_entry: int | None = None) -> KernelBinary:
    entry = cfg.kernel_base if kernel_entry is None else kernel_entry
    return assemble(firmware_source(), base=cfg.kernel_base, symbols=firmware_symbols(cfg, entry),
                    entry="__fw_start")


def _align(x: int, a: int) -> int:
    return (x + a - 1) // a * a


def _overlap(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return a[0] < b[1] and b[0] < a[1]


def link_image(kernel: KernelBinary, firmware: KernelBinary, cfg: SimConfig,
               args_layout: ArgsLayout | None = None) -> MemoryImage:
    """Join firmware and kernel into one image booting at the kernel base address."""
    if firmware.base_address != cfg.kernel_base or firmware.entry_point != cfg.kernel_base:
        raise EntryMissing(f"firmware must start and enter at {cfg.kernel_base:#x}")
    if KERNEL_SYMBOL not in kernel.symbols:
        raise EntryMissing(f"kernel defines no {KERNEL_SYMBOL}")
    if kernel.base_address < firmware.end_address:
        raise RegionOverlap("kernel text overlaps the firmware")
    end = kernel.end_address
    code = (cfg.kernel_base, end)
    if end > cfg.kernel_base + cfg.kernel_region_size:
        raise RegionOverlap(f"image ends at {end:#x}, past the kernel region")
    stacks = cfg.stack_region
    args = (cfg.args_base, cfg.args_base + cfg.args_size)
    for name, rng in (("stacks", stacks), ("argument region", args)):
        if _overlap(code, rng):
            raise RegionOverlap(f"{name} [{rng[0]:#x}, {rng[1]:#x}) overlap the image")
    if _overlap(stacks, args):
        raise RegionOverlap("stacks overlap the argument region")
    if stacks[1] > cfg.main_mem_size:
        raise RegionOverlap("stacks extend past main memory")
    if args_layout is not None and args_layout.size_bytes() > cfg.args_size:
        raise RegionOverlap(f"arguments need {args_layout.size_bytes()} bytes, region holds {cfg.args_size}")

    gap = (kernel.base_address - firmware.end_address) // 4
    words = list(firmware.words) + [0] * gap + list(kernel.words)
    symbols = {**firmware.symbols, **kernel.symbols, "__image_end": end}
    regions = np.full(cfg.kernel_region_size // 4, PHASE_KERNEL, np.int32)
    fs = firmware.symbols

    def mark(lo: str, hi: str, cls: int):
        a, b = (fs[lo] - cfg.kernel_base) // 4, (fs[hi] - cfg.kernel_base) // 4
        regions[a:b] = cls

    mark("__fw_start", "__fw_transfer", PHASE_STARTUP)
    mark("__fw_transfer", "__fw_sched", PHASE_TRANSFER)
    mark("__fw_sched", "__fw_retire", PHASE_SCHED)
    # the kernel return path and the final sleep close the processing phase
    mark("__fw_retire", "__fw_end", PHASE_KERNEL)
    return MemoryImage(cfg.kernel_base, words, cfg.kernel_base, symbols, regions)


def build_simt(source: str | KernelAst, cfg: SimConfig, args_layout: ArgsLayout | None = None) -> MemoryImage:
    """Compile, place after the firmware, verify divergence balance and link."""
    ast = parse(source) if isinstance(source, str) else source
    lowered = lower_simt(ast, cfg)
    fw = assemble_firmware(cfg)
    kbase = _align(fw.end_address, KERNEL_ALIGN)
    kbin = assemble(lowered.asm, base=kbase, entry=KERNEL_SYMBOL)
    fw = assemble_firmware(cfg, kbin.symbols[KERNEL_SYMBOL])
    image = link_image(kbin, fw, cfg, args_layout)
    check_split_join(image.binary(), [image.entry])
    image.kernel = lowered
    return image


def build_scalar(source: str | KernelAst, cfg: SimConfig) -> MemoryImage:
    """Host baseline: driver loop plus kernel at the kernel base address."""
    ast = parse(source) if isinstance(source, str) else source
    lowered = lower_kernel_scalar(ast)
    stack_top = cfg.stack_base + cfg.stack_size_per_thread
    text = scalar_driver(lowered, cfg.args_base, stack_top) + lowered.asm
    binary = assemble(text, base=cfg.kernel_base, entry="_start")
    if binary.end_address > cfg.kernel_base + cfg.kernel_region_size:
        raise RegionOverlap("scalar program exceeds the kernel region")
    regions = np.full(cfg.kernel_region_size // 4, PHASE_KERNEL, np.int32)
    syms = {**binary.symbols, "__image_end": binary.end_address}
    return MemoryImage(binary.base_address, list(binary.words), binary.entry_point, syms, regions,
                       target="scalar", kernel=lowered)
