"""Memory-mapped controller and power controller in front of a :class:`Device`."""

from __future__ import annotations

from dataclasses import dataclass, field

from egpu.config import CONTROLLER_BASE, SimConfig
from egpu.errors import EgpuError
from egpu.sim import engine as E
from egpu.sim.device import Device

CTRL, KERNEL_BASE, ARGS_BASE, STATUS, POWER, IRQ_PENDING = 0x0, 0x4, 0x8, 0xC, 0x10, 0x14
APERTURE = 0x100
CTRL_RESET, CTRL_START, CTRL_HALT = 1, 2, 4
STATUS_BUSY = 1 << 31
GATE_ON, GATE_CLOCK, GATE_POWER = 0, 1, 2


class ControllerError(EgpuError):
    pass


class BusError(ControllerError):
    pass


class StartWhileBusy(ControllerError):
    pass


class DuplicateEvent(ControllerError):
    pass


@dataclass
class ControllerRegs:
    kernel_base: int = 0
    args_base: int = 0
    done: int = 0
    busy: bool = False
    power: list[int] = field(default_factory=list)
    irq_pending: bool = False

    def status_word(self) -> int:
        return self.done | (STATUS_BUSY if self.busy else 0)

    def power_word(self) -> int:
        return sum(g << (2 * i) for i, g in enumerate(self.power))


class Controller:
    """Register file plus end-of-execution handling.

    The device posts one sleep event per compute unit; each gates that unit.
    The completion flush and the interrupt are sequenced by the device itself
    once every unit is gated.
    """

    def __init__(self, device: Device):
        self.device = device
        self.cfg: SimConfig = device.cfg
        self.regs = ControllerRegs(kernel_base=self.cfg.kernel_base, args_base=self.cfg.args_base,
                                   power=[GATE_ON] * self.cfg.num_cus)
        self.gated_at: list[int | None] = [None] * self.cfg.num_cus
        self._seen_events = 0
        self.halted = False

    # -- register access ----------------------------------------------------
    def _offset(self, addr: int) -> int:
        off = addr - CONTROLLER_BASE
        if not 0 <= off < APERTURE or off % 4:
            raise BusError(f"no controller register at {addr:#x}")
        return off

    def read(self, addr: int) -> int:
        off = self._offset(addr)
        r = self.regs
        if off == KERNEL_BASE:
            return r.kernel_base
        if off == ARGS_BASE:
            return r.args_base
        if off == STATUS:
            return r.status_word()
        if off == POWER:
            return r.power_word()
        if off == IRQ_PENDING:
            return int(r.irq_pending)
        return 0

    def write(self, addr: int, value: int) -> None:
        off = self._offset(addr)
        r = self.regs
        if off == KERNEL_BASE:
            r.kernel_base = value & 0xFFFFFFFF
        elif off == ARGS_BASE:
            r.args_base = value & 0xFFFFFFFF
        elif off == IRQ_PENDING:
            if value & 1 == 0:
                r.irq_pending = False
        elif off == CTRL:
            if value & CTRL_RESET:
                self.reset()
            if value & CTRL_HALT:
                self.halt()
            if value & CTRL_START:
                self.start()
        elif off not in (STATUS, POWER):
            raise BusError(f"no controller register at {addr:#x}")

    # -- effects ------------------------------------------------------------
    def reset(self) -> None:
        self.device.reset()
        n = self.cfg.num_cus
        self.regs.done, self.regs.busy, self.regs.irq_pending = 0, False, False
        self.regs.power = [GATE_ON] * n
        self.gated_at = [None] * n
        self._seen_events = 0
        self.halted = False

    def start(self) -> None:
        if self.regs.busy:
            raise StartWhileBusy("accelerator is still running")
        self.reset()
        self.device.boot(self.regs.kernel_base, self.regs.args_base)
        self.regs.busy = True

    def halt(self) -> None:
        self.regs.busy = False
        self.halted = True

    def power_event(self, cu: int, cycle: int) -> None:
        """End-of-execution event from one compute unit."""
        if not 0 <= cu < self.cfg.num_cus:
            raise ControllerError(f"event from unknown compute unit {cu}")
        if self.regs.done >> cu & 1:
            raise DuplicateEvent(f"compute unit {cu} reported completion twice")
        self.regs.done |= 1 << cu
        self.regs.power[cu] = GATE_POWER if self.cfg.gating == "power" else GATE_CLOCK
        self.gated_at[cu] = cycle

    def advance(self, max_cycles: int) -> int:
        """Run the device up to an absolute cycle bound and absorb its events."""
        if not self.regs.busy:
            return self.device.status
        status = self.device.run(max_cycles)
        events = self.device.events()
        for cycle, cu in events[self._seen_events:]:
            self.power_event(cu, cycle)
        self._seen_events = len(events)
        if status == E.DONE:
            self.regs.busy = False
            self.regs.irq_pending = True
        elif status == E.TRAPPED:
            self.regs.busy = False
            raise self.device.trap_error()
        return status

    @property
    def irq_cycle(self) -> int | None:
        """Device cycles from start until the interrupt is visible to the host."""
        if self.device.status != E.DONE:
            return None
        return int(self.device.st.S[E.S_IRQ_CYCLE]) + 1
