"""Scalar host core running the sequential baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from egpu.config import SimConfig
from egpu.isa.encoding import CSR_NAMES
from egpu.kernelc.link import MemoryImage
from egpu.sim import engine as E
from egpu.sim.device import TRAP_NAMES, DeviceTrap, predecode


@dataclass(frozen=True)
class HostResult:
    cycles: int
    instructions: int
    loads: int
    stores: int
    muls: int
    divs: int
    taken_branches: int

    @property
    def mem_accesses(self) -> int:
        return self.loads + self.stores


def _csr_table(cfg: SimConfig) -> np.ndarray:
    vals = {"thread_id": 0, "warp_id": 0, "core_id": 0, "num_threads": 1, "num_warps": 1,
            "num_cores": 1, "kernel_args": cfg.args_base}
    return np.array([[CSR_NAMES[n], v] for n, v in vals.items()], np.int64)


def host_run_scalar(image: MemoryImage, mem8: np.ndarray, cfg: SimConfig,
                    max_cycles: int = 1 << 40) -> HostResult:
    """Execute a scalar image in place on ``mem8`` until it halts."""
    mem32 = mem8.view(np.uint32)
    words = np.asarray(image.words, np.uint32)
    mem32[image.base // 4:image.base // 4 + len(words)] = words
    op, rd, rs1, rs2, imm = predecode(words)
    regs = np.zeros(32, np.int64)
    cpi = np.array([cfg.host_cpi_alu, cfg.host_cpi_mem, cfg.host_cpi_mul, cfg.host_cpi_div,
                    cfg.host_cpi_branch_taken], np.int64)
    counters = np.zeros(7, np.int64)
    status, pc, info = E.run_host(mem8, mem32, op, rd, rs1, rs2, imm, image.base, image.entry, regs,
                                  cpi, counters, max_cycles, _csr_table(cfg))
    if status == E.TRAPPED:
        raise DeviceTrap(TRAP_NAMES.get(int(info), f"trap{info}"), 0, 0, int(pc), 0, int(counters[E.H_CYCLES]))
    if status == E.TIMEOUT:
        raise DeviceTrap("Timeout", 0, 0, int(pc), 0, int(counters[E.H_CYCLES]))
    c = counters.tolist()
    return HostResult(c[E.H_CYCLES], c[E.H_INSTR], c[E.H_LOADS], c[E.H_STORES], c[E.H_MUL], c[E.H_DIV],
                      c[E.H_TAKEN])
