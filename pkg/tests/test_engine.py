"""Instruction semantics, divergence and work-item dispatch on the device."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egpu.apu.runtime import InvalidWorkSize, LocalSizeTooLarge, Runtime
from egpu.config import load_config
from egpu.isa import Op, assemble
from egpu.kernelc.link import build_simt
from egpu.sim import engine as E
from egpu.sim.device import DeviceTrap

M = 0xFFFFFFFF


def sx(v):
    return v - (1 << 32) if v >> 31 else v


def trunc_div(a, b):
    q = abs(a) // abs(b)
    return q if (a < 0) == (b < 0) else -q


REFERENCE = {
    Op.ADD: lambda a, b: a + b, Op.SUB: lambda a, b: a - b, Op.SLL: lambda a, b: a << (b & 31),
    Op.SLT: lambda a, b: int(sx(a) < sx(b)), Op.SLTU: lambda a, b: int(a < b), Op.XOR: lambda a, b: a ^ b,
    Op.SRL: lambda a, b: a >> (b & 31), Op.SRA: lambda a, b: sx(a) >> (b & 31), Op.OR: lambda a, b: a | b,
    Op.AND: lambda a, b: a & b, Op.MUL: lambda a, b: a * b, Op.MULH: lambda a, b: (sx(a) * sx(b)) >> 32,
    Op.MULHSU: lambda a, b: (sx(a) * b) >> 32, Op.MULHU: lambda a, b: (a * b) >> 32,
    Op.DIV: lambda a, b: -1 if b == 0 else (a if sx(a) == -2**31 and sx(b) == -1 else trunc_div(sx(a), sx(b))),
    Op.DIVU: lambda a, b: M if b == 0 else a // b,
    Op.REM: lambda a, b: a if b == 0 else (0 if sx(a) == -2**31 and sx(b) == -1
                                           else sx(a) - trunc_div(sx(a), sx(b)) * sx(b)),
    Op.REMU: lambda a, b: a if b == 0 else a % b,
}

words = st.one_of(st.integers(0, M), st.sampled_from([0, 1, M, 0x80000000, 0x7FFFFFFF]))


@settings(max_examples=3000, deadline=None)
@given(st.sampled_from(sorted(REFERENCE)), words, words)
def test_register_ops_match_reference(op, a, b):
    assert E.alu(int(op), a, b, 0, 0) == REFERENCE[op](a, b) & M


@settings(max_examples=500, deadline=None)
@given(words, st.integers(-2048, 2047))
def test_immediate_ops(a, imm):
    assert E.alu(int(Op.ADDI), a, 0, imm, 0) == (a + imm) & M
    assert E.alu(int(Op.SLTI), a, 0, imm, 0) == int(sx(a) < imm)
    assert E.alu(int(Op.SLTIU), a, 0, imm, 0) == int(a < (imm & M))


# --------------------------------------------------------------------------
# divergence

NESTED = """
__kernel void nested(__global int* x, __global int* y) {
    int i = get_global_id(0);
    int v = x[i];
    int r = 0;
    if (v & 1) {
        if (v & 2) { r = 1; } else { r = 2; }
    } else {
        for (int k = 0; k < 7; k++) { if (k < (v & 7)) { r = r + 3; } }
    }
    if (v > 100) { r = r + 1000; }
    y[i] = r;
}
"""


def nested_reference(v):
    r = (1 if v & 2 else 2) if v & 1 else 3 * (v & 7)
    return r + (1000 if v > 100 else 0)


def check_mask_conservation(trace):
    """Replays every warp's trace with its own divergence stack.

    Outside SPLIT, JOIN and TMC the mask must not change.  After a SPLIT the
    two paths must be disjoint and together cover the incoming mask, and the
    JOIN closing the region must restore exactly that mask.
    """
    splits = 0
    by_warp = {}
    for row in trace.tolist():
        by_warp.setdefault((row[1], row[2]), []).append(row)
    for rows in by_warp.values():
        stack = []
        for cur, nxt in zip(rows, rows[1:]):
            _, _, _, pc, mask, op = cur
            if op == Op.SPLIT:
                splits += 1
                stack.append(("restore", mask))
                if nxt[3] == pc + 4:
                    taken = nxt[4]
                    assert taken and taken & ~mask == 0
                    stack.append(("else", mask & ~taken))
                else:
                    assert nxt[4] == mask
            elif op == Op.JOIN:
                kind, m = stack.pop()
                assert nxt[4] == m
            elif op != Op.TMC:
                assert nxt[4] == mask
        assert not stack
    return splits


@pytest.mark.parametrize("preset", ["4t", "8t", "16t"])
def test_split_conserves_masks(preset):
    cfg = load_config(preset=preset)
    rt = Runtime(cfg, trace_cap=1 << 20)
    rng = np.random.default_rng(5)
    n = 3 * cfg.total_threads
    x = rng.integers(-50, 200, n)
    xb, yb = rt.alloc_array(x), rt.alloc_array(np.zeros(n))
    rt.run(build_simt(NESTED, cfg), (n,), (1,), [xb, yb])
    assert int(rt.device.st.S[E.S_TRACE_N]) <= 1 << 20
    assert check_mask_conservation(rt.device.trace_records()) > n // cfg.threads_per_cu
    assert rt.buffer_read(yb).tolist() == [nested_reference(int(v)) for v in x]


def test_ipdom_overflow_traps():
    cfg = load_config(preset="4t", overrides=["ipdom_depth=2"])
    src = NESTED
    rt = Runtime(cfg)
    xb, yb = rt.alloc_array(np.arange(16) * 3), rt.alloc_array(np.zeros(16))
    with pytest.raises(DeviceTrap) as err:
        rt.run(build_simt(src, cfg), (16,), (1,), [xb, yb])
    assert "overflow" in str(err.value).lower()


# --------------------------------------------------------------------------
# dispatch

COVER = """
__kernel void cover(__global int* out, __global int* chk) {
    int i = get_global_id(1) * get_global_size(0) + get_global_id(0);
    out[i] = out[i] + 1;
    chk[i] = get_group_id(0) * get_local_size(0) + get_local_id(0) - get_global_id(0)
           + get_group_id(1) * get_local_size(1) + get_local_id(1) - get_global_id(1)
           + (get_num_groups(0) * get_local_size(0) - get_global_size(0));
}
"""

_cover_cache = {}


def _cover_runtime(preset):
    if preset not in _cover_cache:
        cfg = load_config(preset=preset)
        _cover_cache[preset] = (cfg, Runtime(cfg, trace_cap=1 << 16), build_simt(COVER, cfg))
    return _cover_cache[preset]


def _random_launch(rng):
    preset = ["4t", "8t", "16t"][rng.integers(0, 3)]
    cfg, rt, img = _cover_runtime(preset)
    per_cu = cfg.warps_per_cu * cfg.threads_per_cu
    two_d = rng.random() < 0.5
    while True:
        lx = int(rng.integers(1, per_cu + 1))
        ly = int(rng.integers(1, per_cu // lx + 1)) if two_d else 1
        if lx * ly <= per_cu:
            break
    gx = lx * int(rng.integers(0 if rng.random() < 0.05 else 1, 7))
    gy = ly * int(rng.integers(1, 4)) if two_d else 1
    static = bool(rng.random() < 0.3 and gx * gy <= cfg.total_threads and per_cu % (lx * ly) == 0)
    return cfg, rt, img, (gx, gy), (lx, ly), static


def test_gid_coverage_exactly_once():
    rng = np.random.default_rng(2024)
    for case in range(200):
        cfg, rt, img, gs, ls, static = _random_launch(rng)
        rt.release_all()
        n = gs[0] * gs[1]
        out, chk = rt.alloc_array(np.zeros(max(n, 1))), rt.alloc_array(np.full(max(n, 1), 7))
        rec = rt.run(img, gs, ls, [out, chk], static=static)
        entry = img.symbols["__kernel_entry"]
        tr = rt.device.trace_records()
        assert int(rt.device.st.S[E.S_TRACE_N]) <= len(rt.device.st.trace)
        invocations = sum(bin(m).count("1") for pc, m in zip(tr[:, 3], tr[:, 4]) if pc == entry)
        ctx = f"case {case}: {cfg.preset} global {gs} local {ls} static {static}"
        assert invocations == n, ctx
        if n:
            assert rt.buffer_read(out).tolist() == [1] * n, ctx
            assert rt.buffer_read(chk).tolist() == [0] * n, ctx
        assert rec.irq_cycle is not None


def test_empty_launch_runs_no_kernel_code(cfg):
    rt = Runtime(cfg, trace_cap=1 << 16)
    img = build_simt(COVER, cfg)
    out = rt.alloc_array(np.zeros(4))
    rec = rt.run(img, (0,), (1,), [out, out])
    lo, hi = img.kernel_range
    pcs = rt.device.trace_records()[:, 3]
    assert not ((pcs >= lo) & (pcs < hi)).any()
    assert rec.phase_cycles["kernel"] >= 0 and rec.irq_cycle > 0
    assert rt.controller.regs.irq_pending is False  # acknowledged by wait()
    assert rt.buffer_read(out).tolist() == [0] * 4


def test_work_size_validation(cfg4):
    rt = Runtime(cfg4)
    img = build_simt(COVER, cfg4)
    with pytest.raises(InvalidWorkSize):
        rt.run(img, (10,), (4,), [0, 0])
    with pytest.raises(LocalSizeTooLarge):
        rt.run(img, (64,), (64,), [0, 0])
    with pytest.raises(InvalidWorkSize):
        rt.run(img, (64,), (1,), [0, 0], static=True)


def test_unaligned_access_traps(cfg4):
    src = "__kernel void bad(__global int* p) { p[0] = 1; }"
    rt = Runtime(cfg4)
    with pytest.raises(DeviceTrap):
        rt.run(build_simt(src, cfg4), (1,), (1,), [0x20002])
