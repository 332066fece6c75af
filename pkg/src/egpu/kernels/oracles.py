"""Independent scalar references for every benchmark kernel."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from egpu.errors import EgpuError
from egpu.kernels.fixed import as_i32, isqrt, qmul, qmul_wrap, sat32, wrap32


class DimensionMismatch(EgpuError):
    pass


class TooFewEvents(EgpuError):
    pass


def gemm(A, B) -> np.ndarray:
    """Wrapping int32 matrix product."""
    a = np.asarray(A, np.int64)
    b = np.asarray(B, np.int64)
    n, k = a.shape
    out = np.zeros((n, b.shape[1]), np.int64)
    for i in range(k):  # accumulate in int64 then wrap, identical to wrapping per step
        out += np.outer(a[:, i], b[i, :])
    return as_i32(out)


def fir(x, h, shift: int = 0) -> np.ndarray:
    """y[i] = (sum_k h[k] x[i-k]) >> shift with zero history, wrapping accumulator."""
    x = [int(v) for v in x]
    h = [int(v) for v in h]
    y = []
    for i in range(len(x)):
        acc = sum(h[k] * x[i - k] for k in range(len(h)) if i - k >= 0)
        y.append(wrap32(acc) >> shift)
    return np.asarray(y, np.int32)


def fir_padded(x, ntaps: int) -> np.ndarray:
    return np.concatenate([np.zeros(ntaps - 1, np.int32), np.asarray(x, np.int32)])


def delineation_candidates(x, window: int) -> np.ndarray:
    """Brute-force windowed argmax/argmin: 1 peak, -1 trough, 0 otherwise.

    Sample i is a peak when it is the maximum of the window centred on it and
    the lowest index holding that maximum; troughs mirror this.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and at least 3")
    x = [int(v) for v in x]
    r = window // 2
    out = np.zeros(len(x), np.int32)
    for i in range(r, len(x) - r):
        w = x[i - r:i + r + 1]
        hi, lo = max(w), min(w)
        if x[i] == hi and w.index(hi) == r and hi != lo:
            out[i] = 1
        elif x[i] == lo and w.index(lo) == r and hi != lo:
            out[i] = -1
    return out


def alternate(x, flags) -> tuple[list[int], list[int]]:
    """Keep alternating events; same-kind neighbours keep the more extreme (earlier on ties)."""
    kept: list[tuple[int, int]] = []
    for i, f in enumerate(int(v) for v in flags):
        if f == 0:
            continue
        if kept and kept[-1][1] == f:
            j = kept[-1][0]
            if (f > 0 and x[i] > x[j]) or (f < 0 and x[i] < x[j]):
                kept[-1] = (i, f)
        else:
            kept.append((i, f))
    return [i for i, f in kept if f > 0], [i for i, f in kept if f < 0]


@dataclass(frozen=True)
class IntervalFeatures:
    mean: int
    median: int
    rms: int
    valid: bool


def interval_features(peaks) -> IntervalFeatures:
    """Mean, median and RMS of successive peak intervals in Q16.16.

    RMS keeps 4 fractional bits of the root: isqrt((sum d^2 << 8) / m) << 12.
    The device computes these in 32 bits, so inputs must keep sum d below 2^15
    and sum d^2 below 2^23.
    """
    p = [int(v) for v in peaks]
    if len(p) < 2:
        return IntervalFeatures(0, 0, 0, False)
    d = sorted(b - a for a, b in zip(p, p[1:]))
    m = len(d)
    mean = (sum(d) << 16) // m
    median = d[m // 2] << 16 if m % 2 else (d[m // 2 - 1] + d[m // 2]) << 15
    rms = isqrt((sum(v * v for v in d) << 8) // m) << 12
    return IntervalFeatures(mean, median, rms, True)


def require_events(peaks) -> IntervalFeatures:
    f = interval_features(peaks)
    if not f.valid:
        raise TooFewEvents(f"{len(peaks)} peaks, need at least 2")
    return f


def twiddles(n: int) -> np.ndarray:
    """Interleaved Q16.16 exp(-2 pi i k / n) for k < n / 2."""
    out = []
    for k in range(n // 2):
        a = -2.0 * math.pi * k / n
        out += [int(round(math.cos(a) * 65536)), int(round(math.sin(a) * 65536))]
    return np.asarray(out, np.int32)


def fft_stockham(re, im) -> tuple[np.ndarray, np.ndarray]:
    """Bit-exact model of the device transform: radix-2 Stockham, >>1 per stage."""
    n = len(re)
    if n < 2 or n & (n - 1):
        raise ValueError("length must be a power of two")
    tw = twiddles(n)
    xr, xi = [int(v) for v in re], [int(v) for v in im]
    s = 1
    while s < n:
        yr, yi = [0] * n, [0] * n
        for t in range(n // 2):
            k = t & -s
            ar, ai, br, bi = xr[t], xi[t], xr[t + n // 2], xi[t + n // 2]
            o = t + k
            yr[o] = wrap32(ar + br) >> 1
            yi[o] = wrap32(ai + bi) >> 1
            dr, di = wrap32(ar - br) >> 1, wrap32(ai - bi) >> 1
            wr, wi = int(tw[2 * k]), int(tw[2 * k + 1])
            yr[o + s] = wrap32(qmul_wrap(dr, wr) - qmul_wrap(di, wi))
            yi[o + s] = wrap32(qmul_wrap(dr, wi) + qmul_wrap(di, wr))
        xr, xi = yr, yi
        s *= 2
    return np.asarray(xr, np.int32), np.asarray(xi, np.int32)


def dft(re, im) -> np.ndarray:
    """Double-precision DFT of Q16.16 input, in real units."""
    x = (np.asarray(re, np.float64) + 1j * np.asarray(im, np.float64)) / 65536.0
    n = len(x)
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) @ x


def band_powers(re, im, split: int) -> tuple[int, int]:
    """Wrapping sums of |X_k|^2 (Q16.16) over bins [1, split) and [split, n/2)."""
    lo = hi = 0
    n = len(re)
    for k in range(1, n // 2):
        p = wrap32(qmul_wrap(int(re[k]), int(re[k])) + qmul_wrap(int(im[k]), int(im[k])))
        if k < split:
            lo = wrap32(lo + p)
        else:
            hi = wrap32(hi + p)
    return lo, hi


def svm(x, w, bias: int) -> int:
    """1 when w . x + bias >= 0 with saturating Q16.16 products and a wrapping sum."""
    if len(x) != len(w):
        raise DimensionMismatch(f"{len(x)} features against {len(w)} weights")
    acc = bias
    for a, b in zip(x, w):
        acc = wrap32(acc + qmul(int(a), int(b)))
    return int(acc >= 0)


__all__ = ["gemm", "fir", "fir_padded", "delineation_candidates", "alternate", "IntervalFeatures",
           "interval_features", "require_events", "twiddles", "fft_stockham", "dft", "band_powers",
           "svm", "DimensionMismatch", "TooFewEvents", "sat32"]
