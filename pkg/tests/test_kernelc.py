"""Front end, code generation, divergence balance and linking."""

import numpy as np
import pytest
from click.testing import CliRunner

from egpu.apu.runtime import Runtime
from egpu.config import load_config
from egpu.isa import KernelBinary, assemble, disassemble
from egpu.kernelc import (KernelSyntaxError, NotAKernel, RegisterPressure, SplitJoinImbalance, UnsupportedConstruct,
                          UnsupportedType, build_scalar, build_simt, check_split_join, parse)
from egpu.kernelc.cli import main as kernelc_main
from egpu.kernels import KERNEL_NAMES, kernel_source


@pytest.mark.parametrize("src, exc", [
    ("int f() { return 1; }", UnsupportedConstruct),
    ("__kernel void k(__global float* a) {}", UnsupportedType),
    ("__kernel void k(__global int* a) { a[0] = ; }", KernelSyntaxError),
    ("__kernel void k(__global int* a) { switch (a[0]) {} }", UnsupportedConstruct),
    ("__kernel void k(__global int* a) { int i = get_global_id(0); while (i < 3) { i++; } }", UnsupportedConstruct),
    ("__kernel void k(__global int* a) { int i = get_global_id(0); if (i) { return; } }", UnsupportedConstruct),
    ("__kernel void k(__global int* a) { if (get_global_id(0)) { barrier(CLK_GLOBAL_MEM_FENCE); } }",
     UnsupportedConstruct),
])
def test_rejected_sources(src, exc, cfg4):
    with pytest.raises(exc):
        build_simt(src, cfg4)


def test_error_positions():
    with pytest.raises(KernelSyntaxError) as err:
        parse("__kernel void k(__global int* a) {\n  a[0] = 1 +;\n}")
    assert err.value.args[0].startswith("2:")


def test_not_a_kernel():
    with pytest.raises((NotAKernel, UnsupportedConstruct)):
        parse("void helper(int x) { }")


def test_register_pressure(cfg4):
    expr = "0"
    for k in range(40):
        expr = f"a[i + {k}] + ({expr})"
    with pytest.raises(RegisterPressure):
        build_simt(f"__kernel void k(__global int* a) {{ int i = get_global_id(0); a[i] = {expr}; }}", cfg4)


def test_uniform_buffer_bound_is_a_legal_loop(cfg4):
    src = """
    __kernel void k(__global int* n, __global int* out) {
        int s = 0;
        for (int j = 0; j < n[0]; j++) { s = s + j; }
        out[get_global_id(0)] = s;
    }"""
    rt = Runtime(cfg4)
    nb, ob = rt.alloc_array([6]), rt.alloc_array(np.zeros(8))
    rt.run(build_simt(src, cfg4), (8,), (1,), [nb, ob])
    assert rt.buffer_read(ob).tolist() == [15] * 8


@pytest.mark.parametrize("name", KERNEL_NAMES)
def test_benchmark_kernels_are_balanced(name, cfg):
    img = build_simt(kernel_source(name), cfg)
    assert check_split_join(img.binary(), [img.entry]) >= 0
    assert img.kernel.n_joins == 2 * img.kernel.n_splits


def test_unbalanced_code_is_rejected():
    for text in ("split a0, done\njoin\ndone:\nsleep_req",      # missing second join
                 "join\nsleep_req",                          # pop on an empty stack
                 "split a0, e\njoin\ne:\njoin\njoin\nsleep_req"):
        with pytest.raises(SplitJoinImbalance):
            check_split_join(assemble(text, base=0x8000))
    assert check_split_join(assemble("split a0, e\njoin\ne:\njoin\nsleep_req", base=0x8000)) == 2


def test_barrier_orders_work_group(cfg):
    src = """
    __kernel void rot(__global int* x, __global int* tmp, __global int* y) {
        int i = get_global_id(0);
        int l = get_local_id(0);
        int n = get_local_size(0);
        tmp[i] = x[i] * 3;
        barrier(CLK_GLOBAL_MEM_FENCE);
        y[i] = tmp[i - l + (l + 1) % n];
    }"""
    per_cu = cfg.warps_per_cu * cfg.threads_per_cu
    rt = Runtime(cfg)
    n = 4 * per_cu
    x = np.arange(n) * 7 - 50
    xb, tb, yb = rt.alloc_array(x), rt.alloc_array(np.zeros(n)), rt.alloc_array(np.zeros(n))
    rt.run(build_simt(src, cfg), (n,), (per_cu,), [xb, tb, yb])
    g = x.reshape(-1, per_cu) * 3
    assert rt.buffer_read(yb).tolist() == np.roll(g, -1, axis=1).ravel().tolist()


def test_scalar_target_matches_simt(cfg4):
    src = kernel_source("vecadd")
    rt = Runtime(cfg4)
    a, b = rt.alloc_array(np.arange(40)), rt.alloc_array(np.arange(40) * -3)
    c1, c2 = rt.alloc_array(np.zeros(40)), rt.alloc_array(np.zeros(40))
    rt.run(build_simt(src, cfg4), (40,), (1,), [a, b, c1])
    res = rt.run_scalar(build_scalar(src, cfg4), (40,), [a, b, c2])
    assert res.instructions > 0
    assert rt.buffer_read(c1).tolist() == rt.buffer_read(c2).tolist() == (np.arange(40) * -2).tolist()


def test_image_layout(cfg4):
    img = build_simt(kernel_source("fir"), cfg4)
    lo, hi = img.kernel_range
    assert img.base == cfg4.kernel_base == img.entry
    assert img.base < lo < hi <= cfg4.kernel_base + cfg4.kernel_region_size
    assert "__fw_sched" in img.symbols and "__kernel_entry" in img.symbols


def test_cli_compile(tmp_path):
    src = tmp_path / "k.cl"
    src.write_text(kernel_source("vecadd"))
    out = tmp_path / "k.bin"
    r = CliRunner().invoke(kernelc_main, ["compile", "--preset", "16t", "-o", str(out), str(src)])
    assert r.exit_code == 0, r.output
    syms = KernelBinary.parse_symbol_listing((tmp_path / "k.bin.sym").read_text())
    b = KernelBinary.from_bytes(out.read_bytes(), 0x8000, syms)
    assert "__kernel_entry" in disassemble(b)
    r = CliRunner().invoke(kernelc_main, ["compile", "-S", "--target", "scalar", "-o", str(tmp_path / "k.s"),
                                          str(src)])
    assert r.exit_code == 0 and "__kernel_entry" in (tmp_path / "k.s").read_text()
    src.write_text("__kernel void k(__global float* a) {}")
    r = CliRunner().invoke(kernelc_main, ["compile", "-o", str(out), str(src)])
    assert r.exit_code == 1 and "float" in r.output
