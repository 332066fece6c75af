"""Controller registers, completion events and the interrupt."""

import numpy as np
import pytest

from egpu.apu.controller import (ARGS_BASE, CTRL, CTRL_START, GATE_CLOCK, GATE_POWER, IRQ_PENDING, KERNEL_BASE,
                                 POWER, STATUS, STATUS_BUSY, BusError, DuplicateEvent, StartWhileBusy)
from egpu.apu.runtime import LaunchWithoutArgs, NoKernelPending, Runtime
from egpu.config import CONTROLLER_BASE, load_config

from conftest import image_for


def _vecadd(rt, n=64):
    rng = np.random.default_rng(n)
    a, b = rt.alloc_array(rng.integers(-9, 9, n)), rt.alloc_array(rng.integers(-9, 9, n))
    c = rt.alloc_array(np.zeros(n))
    rt.load(image_for("vecadd", rt.cfg))
    rt.set_args((n,), (1,), [a, b, c])
    return c


def test_irq_once_after_every_sleep_event(cfg):
    rt = Runtime(cfg)
    _vecadd(rt)
    rt.launch()
    c = rt.controller
    rises = 0
    seen = False
    step = 0
    while c.regs.busy:
        step += 37
        c.advance(step)
        pending = c.read(CONTROLLER_BASE + IRQ_PENDING)
        if pending and not seen:
            rises += 1
            # every unit reported completion before the interrupt became visible
            assert c.regs.done == (1 << cfg.num_cus) - 1
            assert all(g is not None and g < c.irq_cycle for g in c.gated_at)
        seen = bool(pending)
    for _ in range(3):
        c.advance(step + 1000)
    assert rises == 1
    assert len(rt.device.events()) == cfg.num_cus
    assert c.read(CONTROLLER_BASE + STATUS) & STATUS_BUSY == 0
    rec = rt.wait()
    assert rec.irq_cycle == c.irq_cycle
    assert c.read(CONTROLLER_BASE + IRQ_PENDING) == 0


def test_power_register_reflects_gating():
    for mode, code in (("clock", GATE_CLOCK), ("power", GATE_POWER)):
        cfg = load_config(preset="4t", overrides=[f"gating={mode}"])
        rt = Runtime(cfg)
        _vecadd(rt)
        rt.launch()
        rt.wait()
        word = rt.controller.read(CONTROLLER_BASE + POWER)
        assert word == sum(code << (2 * i) for i in range(cfg.num_cus))


def test_register_file(cfg4):
    rt = Runtime(cfg4)
    c = rt.controller
    c.write(CONTROLLER_BASE + KERNEL_BASE, 0x8000)
    c.write(CONTROLLER_BASE + ARGS_BASE, 0x1000)
    assert c.read(CONTROLLER_BASE + KERNEL_BASE) == 0x8000
    assert c.read(CONTROLLER_BASE + ARGS_BASE) == 0x1000
    with pytest.raises(BusError):
        c.read(CONTROLLER_BASE + 0x200)
    with pytest.raises(BusError):
        c.write(CONTROLLER_BASE + 2, 0)


def test_start_while_busy(cfg4):
    rt = Runtime(cfg4)
    _vecadd(rt)
    rt.launch()
    with pytest.raises(StartWhileBusy):
        rt.controller.write(CONTROLLER_BASE + CTRL, CTRL_START)


def test_duplicate_event_rejected(cfg4):
    rt = Runtime(cfg4)
    rt.controller.power_event(0, 10)
    with pytest.raises(DuplicateEvent):
        rt.controller.power_event(0, 11)


def test_runtime_protocol_errors(cfg4):
    rt = Runtime(cfg4)
    with pytest.raises(LaunchWithoutArgs):
        rt.launch()
    with pytest.raises(NoKernelPending):
        rt.wait()


def test_back_to_back_launches_are_independent(cfg4):
    rt = Runtime(cfg4)
    c = _vecadd(rt)
    rt.launch()
    first = rt.wait()
    rt.launch()
    second = rt.wait()
    assert second.index == first.index + 1
    assert second.irq_cycle > 0 and sum(second.phase_cycles.values()) == second.irq_cycle
    assert rt.buffer_read(c).shape == (64,)


def test_phases_partition_the_run(cfg):
    rt = Runtime(cfg)
    _vecadd(rt, 128)
    rt.launch()
    rec = rt.wait()
    assert rec.compute_end == rec.irq_cycle
    assert rec.transfer_start <= rec.schedule_start <= rec.compute_start <= rec.compute_end
