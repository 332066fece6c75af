"""Synthetic input signals and int32 sample files."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np


def sine(freq: float, amp: float, n: int, rate: float = 1.0, phase: float = 0.0) -> np.ndarray:
    """Integer sine with ``freq`` cycles per ``rate`` samples."""
    t = np.arange(n) / rate
    return np.round(amp * np.sin(2 * math.pi * freq * t + phase)).astype(np.int32)


def breathing(n: int, seed: int = 0, period: float = 96.0, amp: int = 1500, noise: int = 120) -> np.ndarray:
    """Respiration-like test signal: fundamental, a harmonic, slow drift and noise."""
    rng = np.random.default_rng(seed)
    t = np.arange(n)
    x = (amp * np.sin(2 * math.pi * t / period)
         + 0.3 * amp * np.sin(4 * math.pi * t / period + 0.7)
         + 0.2 * amp * np.sin(2 * math.pi * t / (7.3 * period))
         + rng.normal(0, noise, n))
    return np.clip(np.round(x), -2048, 2047).astype(np.int32)


def parse_signal(spec: str) -> np.ndarray:
    """``sine:freq,amp,n`` (freq in cycles per sample) or ``breath:n[,seed]``."""
    kind, _, rest = spec.partition(":")
    vals = [v for v in rest.split(",") if v]
    if kind == "sine" and len(vals) == 3:
        return sine(float(vals[0]), float(vals[1]), int(vals[2]))
    if kind == "breath" and 1 <= len(vals) <= 2:
        return breathing(int(vals[0]), int(vals[1]) if len(vals) > 1 else 0)
    raise ValueError(f"unrecognised signal spec {spec!r}")


def write_samples(path: str | Path, samples) -> None:
    Path(path).write_bytes(np.asarray(samples, dtype="<i4").tobytes())


def read_samples(path: str | Path) -> np.ndarray:
    return np.frombuffer(Path(path).read_bytes(), dtype="<i4").astype(np.int32)
