import pytest

from egpu.config import load_config
from egpu.kernelc.link import build_simt
from egpu.kernels import kernel_source

PRESETS = ("egpu-4t", "egpu-8t", "egpu-16t")

_images = {}


def image_for(name, cfg):
    key = (name, cfg.preset)
    if key not in _images:
        _images[key] = build_simt(kernel_source(name), cfg)
    return _images[key]


@pytest.fixture(params=PRESETS)
def cfg(request):
    return load_config(preset=request.param)


@pytest.fixture
def cfg4():
    return load_config(preset="4t")


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.verdict_lines():
            terminalreporter.write_line(line)
