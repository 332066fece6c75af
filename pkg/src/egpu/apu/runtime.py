"""Host-side runtime: buffers in unified memory, argument setup, launch and wait."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from egpu.apu.controller import ARGS_BASE, CTRL, CTRL_START, IRQ_PENDING, KERNEL_BASE, Controller
from egpu.apu.host import HostResult, host_run_scalar
from egpu.config import CONTROLLER_BASE, SimConfig
from egpu.errors import EgpuError
from egpu.kernelc.link import MemoryImage
from egpu.layout import ArgsLayout
from egpu.sim import engine as E
from egpu.sim.device import PHASES, Device, DeviceTrap

BUFFER_ALIGN = 64


class RuntimeError_(EgpuError):
    pass


class OutOfMemory(RuntimeError_):
    pass


class LaunchWithoutArgs(RuntimeError_):
    pass


class NoKernelPending(RuntimeError_):
    pass


class LocalSizeTooLarge(RuntimeError_):
    pass


class InvalidWorkSize(RuntimeError_):
    pass


@dataclass(frozen=True)
class Buffer:
    addr: int
    size: int


@dataclass
class LaunchRecord:
    index: int
    irq_cycle: int
    phase_cycles: dict[str, int]
    counters: dict[str, dict[str, int]]
    cu_done: list[int]
    cu_counters: np.ndarray = field(repr=False)
    lane_instructions: np.ndarray = field(repr=False)

    @property
    def cycles(self) -> int:
        return self.irq_cycle

    # Phase boundaries laid end to end in attribution order; every device cycle
    # belongs to exactly one phase, so the last boundary is the interrupt.
    @property
    def transfer_start(self) -> int:
        return self.phase_cycles["startup"]

    @property
    def transfer_end(self) -> int:
        return self.transfer_start + self.phase_cycles["transfer"]

    @property
    def schedule_start(self) -> int:
        return self.transfer_end

    @property
    def schedule_end(self) -> int:
        return self.schedule_start + self.phase_cycles["sched"]

    @property
    def compute_start(self) -> int:
        return self.schedule_end

    @property
    def compute_end(self) -> int:
        return self.compute_start + self.phase_cycles["kernel"]

    def totals(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for ph in self.counters.values():
            for k, v in ph.items():
                out[k] = out.get(k, 0) + v
        return out


class Runtime:
    def __init__(self, cfg: SimConfig, trace_cap: int = 0, txn_cap: int = 0):
        self.cfg = cfg
        self.device = Device(cfg, trace_cap=trace_cap, txn_cap=txn_cap)
        self.controller = Controller(self.device)
        self._heap = cfg.heap_base
        self.buffers: list[Buffer] = []
        self.image: MemoryImage | None = None
        self.layout: ArgsLayout | None = None
        self._pending = False
        self.launches = 0

    @property
    def mem8(self) -> np.ndarray:
        return self.device.mem8

    # -- buffers ------------------------------------------------------------------
    def buffer_alloc(self, size: int) -> Buffer:
        if size < 0:
            raise OutOfMemory("negative buffer size")
        addr = -(-self._heap // BUFFER_ALIGN) * BUFFER_ALIGN
        if addr + size > self.cfg.main_mem_size:
            raise OutOfMemory(f"{size} bytes do not fit above {addr:#x}")
        self._heap = addr + size
        buf = Buffer(addr, size)
        self.buffers.append(buf)
        return buf

    def release_all(self) -> None:
        """Forget every buffer; the next allocation starts at the heap base again."""
        self._heap = self.cfg.heap_base
        self.buffers.clear()

    def buffer_write(self, buf: Buffer, data, offset: int = 0) -> None:
        raw = np.ascontiguousarray(data).view(np.uint8).ravel() if isinstance(data, np.ndarray) else bytes(data)
        if offset + len(raw) > buf.size:
            raise OutOfMemory("write past the end of the buffer")
        self.device.write(buf.addr + offset, raw)

    def buffer_read(self, buf: Buffer, dtype=np.int32, count: int | None = None) -> np.ndarray:
        dt = np.dtype(dtype)
        n = buf.size // dt.itemsize if count is None else count
        return np.frombuffer(self.device.read(buf.addr, n * dt.itemsize), dt).copy()

    def alloc_array(self, values) -> Buffer:
        arr = np.ascontiguousarray(values, dtype=np.int32)
        buf = self.buffer_alloc(arr.nbytes)
        self.buffer_write(buf, arr)
        return buf

    # -- launch -------------------------------------------------------------------
    def load(self, image: MemoryImage) -> None:
        if image.target != "simt":
            raise RuntimeError_("device images must be built for the SIMT target")
        self.device.write_words(image.base, image.words)
        self.device.set_regions(image.regions)
        self.image = image

    def make_layout(self, global_size, local_size=(1, 1), args=(), static: bool = False,
                    warm=None) -> ArgsLayout:
        gs = tuple(global_size) + (1,) * (2 - len(tuple(global_size)))
        ls = tuple(local_size) + (1,) * (2 - len(tuple(local_size)))
        if min(gs) < 0 or min(ls) < 1:
            raise InvalidWorkSize("global sizes must be >= 0 and local sizes >= 1")
        if gs[0] % ls[0] or gs[1] % ls[1]:
            raise InvalidWorkSize(f"global size {gs} is not a multiple of local size {ls}")
        cfg = self.cfg
        per_cu = cfg.warps_per_cu * cfg.threads_per_cu
        lt = ls[0] * ls[1]
        if lt > per_cu:
            raise LocalSizeTooLarge(f"work-group of {lt} items exceeds {per_cu} threads per compute unit")
        if static and (gs[0] * gs[1] > cfg.total_threads or per_cu % lt):
            raise InvalidWorkSize("static dispatch needs one item per thread and whole groups per unit")
        words = [a.addr if isinstance(a, Buffer) else int(a) for a in args]
        if warm is None:
            warm = [a for a in args if isinstance(a, Buffer)]
        ranges = tuple((b.addr, b.size) for b in warm if b.size > 0)
        return ArgsLayout(gs, ls, tuple(words), static, ranges, cfg.num_cus)

    def set_args(self, global_size, local_size=(1, 1), args=(), static: bool = False, warm=None) -> ArgsLayout:
        layout = self.make_layout(global_size, local_size, args, static, warm)
        if layout.size_bytes() > self.cfg.args_size:
            raise OutOfMemory("arguments overflow the argument region")
        self.device.write_words(self.cfg.args_base, layout.words())
        self.layout = layout
        return layout

    def launch(self) -> None:
        if self.image is None or self.layout is None:
            raise LaunchWithoutArgs("load an image and set arguments before launching")
        c = self.controller
        c.write(CONTROLLER_BASE + KERNEL_BASE, self.image.entry)
        c.write(CONTROLLER_BASE + ARGS_BASE, self.cfg.args_base)
        c.write(CONTROLLER_BASE + CTRL, CTRL_START)
        self._pending = True

    def wait(self, max_cycles: int = 1 << 40) -> LaunchRecord:
        if not self._pending:
            raise NoKernelPending("no kernel has been launched")
        c = self.controller
        try:
            status = c.advance(max_cycles)
        finally:
            if not c.regs.busy:
                self._pending = False
        if status != E.DONE:
            raise DeviceTrap("Timeout", 0, 0, 0, 0, self.device.cycle)
        c.write(CONTROLLER_BASE + IRQ_PENDING, 0)
        counters = self.device.counters()
        rec = LaunchRecord(self.launches, c.irq_cycle, {ph: counters[ph]["cycles"] for ph in PHASES},
                           counters, [int(x) for x in c.gated_at], self.device.st.cu_cnt.copy(),
                           self.device.st.lane_kinstr.copy())
        self.launches += 1
        return rec

    def run(self, image: MemoryImage, global_size, local_size=(1, 1), args=(), static: bool = False,
            warm=None, max_cycles: int = 1 << 40) -> LaunchRecord:
        if self.image is not image:
            self.load(image)
        self.set_args(global_size, local_size, args, static, warm)
        self.launch()
        return self.wait(max_cycles)

    # -- host baseline ------------------------------------------------------------
    def run_scalar(self, image: MemoryImage, global_size, args=(), max_cycles: int = 1 << 40) -> HostResult:
        """Run a scalar image on the host core over the same unified memory."""
        layout = self.make_layout(global_size, (1, 1), args, warm=[])
        self.device.write_words(self.cfg.args_base, layout.words())
        return host_run_scalar(image, self.device.mem8, self.cfg, max_cycles)
