"""The egpu-sim command line."""

import json

import numpy as np
from click.testing import CliRunner

from egpu.bench.cli import main
from egpu.kernels import kernel_source


def invoke(*args):
    return CliRunner().invoke(main, list(args))


def test_static_report():
    r = invoke("static-report", "--preset", "16t")
    assert r.exit_code == 0
    assert json.loads(r.output) == {"preset": "egpu-16t", "area_mm2": 0.38, "leakage_uw": 305.32,
                                    "estimated": False}
    assert invoke("static-report", "--preset", "nope").exit_code == 1


def test_run_kernel(tmp_path):
    k = tmp_path / "vecadd.cl"
    k.write_text(kernel_source("vecadd"))
    data = tmp_path / "a.bin"
    np.arange(16, dtype="<i4").tofile(data)
    r = invoke("run", "--preset", "8t", "--kernel", str(k), "--global", "16", "--arg", f"file:{data}",
               "--arg", "rand:16", "--arg", "buf:16", "--dispatch", "static")
    assert r.exit_code == 0, r.output
    doc = json.loads(r.output)
    a, b, c = (doc["buffers"][str(i)] for i in range(3))
    assert a == list(range(16)) and c == [x + y for x, y in zip(a, b)]
    assert doc["cycles"]["total"] == sum(doc["cycles"][k] for k in ("transfer", "scheduling", "compute"))


def test_run_trap_exit_code(tmp_path):
    k = tmp_path / "bad.cl"
    k.write_text("__kernel void bad(__global int* p) { p[0] = 1; }")
    r = invoke("run", "--kernel", str(k), "--global", "1", "--arg", "int:3")
    assert r.exit_code == 2


def test_run_bad_argument(tmp_path):
    k = tmp_path / "vecadd.cl"
    k.write_text(kernel_source("vecadd"))
    r = invoke("run", "--kernel", str(k), "--global", "4", "--arg", "float:1.5")
    assert r.exit_code != 0


def test_sweep_and_tinybio(tmp_path):
    r = invoke("sweep", "gemm", "--sizes", "32", "--presets", "4t,16t", "-o", str(tmp_path))
    assert r.exit_code == 0, r.output
    assert (tmp_path / "gemm.csv").read_text().count("\n") == 3
    r = invoke("sweep", "gemm", "--sizes", "40", "--presets", "4t", "-o", str(tmp_path))
    assert r.exit_code == 1
    r = invoke("tinybio", "--presets", "16t", "--signal", "sine:0.01,1000,1024", "-o", str(tmp_path))
    assert r.exit_code == 0, r.output
    assert "preprocessing" in r.output and (tmp_path / "tinybio.json").exists()
