"""Benchmark kernel sources, default parameters and their scalar references."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

KERNEL_NAMES = ("vecadd", "gemm", "gemm_tile", "fir", "delineate", "alternate", "fft", "features", "svm")


def kernel_source(name: str) -> str:
    if name not in KERNEL_NAMES:
        raise KeyError(f"no kernel named {name!r}")
    return resources.files(__name__).joinpath(f"{name}.cl").read_text()


@dataclass(frozen=True)
class TinyBioParams:
    signal_length: int
    fir_taps: tuple[int, ...]
    fir_shift: int
    window: int
    fft_size: int
    fft_windows: int
    fft_input_shift: int
    band_split: int
    svm_weights: tuple[int, ...]
    svm_bias: int


def load_params(text: str | None = None) -> TinyBioParams:
    """Parse ``key = value`` lines; list values are comma separated."""
    if text is None:
        text = resources.files(__name__).joinpath("tinybio.cfg").read_text()
    vals: dict[str, object] = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        k, v = (s.strip() for s in line.split("=", 1))
        vals[k] = tuple(int(x) for x in v.split(",")) if "," in v else int(v)
    for k in ("fir_taps", "svm_weights"):
        if isinstance(vals.get(k), int):
            vals[k] = (vals[k],)
    return TinyBioParams(**vals)
