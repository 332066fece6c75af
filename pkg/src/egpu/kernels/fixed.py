"""Q16.16 fixed-point arithmetic on plain Python ints.

Values are signed 32-bit integers with 16 fractional bits.  ``qmul`` keeps the
full 64-bit product and saturates, ``qmul_wrap`` truncates to 32 bits the way
the kernels do where overflow cannot happen.
"""

from __future__ import annotations

import numpy as np

FRAC = 16
ONE = 1 << FRAC
QMAX = (1 << 31) - 1
QMIN = -(1 << 31)


def wrap32(v: int) -> int:
    v &= 0xFFFFFFFF
    return v - (1 << 32) if v & 0x80000000 else v


def sat32(v: int) -> int:
    return QMAX if v > QMAX else QMIN if v < QMIN else v


def to_q(x: float) -> int:
    return sat32(int(round(x * ONE)))


def from_q(q: int) -> float:
    return q / ONE


def qmul(a: int, b: int) -> int:
    return sat32((a * b) >> FRAC)


def qmul_wrap(a: int, b: int) -> int:
    return wrap32((a * b) >> FRAC)


def qadd(a: int, b: int) -> int:
    return sat32(a + b)


def qdiv(a: int, b: int) -> int:
    if b == 0:
        raise ZeroDivisionError("Q16.16 division by zero")
    q = abs(a << FRAC) // abs(b)
    return sat32(-q if (a < 0) != (b < 0) else q)


def isqrt(v: int) -> int:
    """Floor square root of a non-negative int."""
    if v < 0:
        raise ValueError("negative operand")
    r, bit = 0, 1 << 30
    while bit > v:
        bit >>= 2
    while bit:
        if v >= r + bit:
            v -= r + bit
            r = (r >> 1) + bit
        else:
            r >>= 1
        bit >>= 2
    return r


def as_i32(values) -> np.ndarray:
    """Wrap arbitrary integers into an int32 array."""
    return (np.asarray(values, dtype=np.int64) & 0xFFFFFFFF).astype(np.uint32).view(np.int32)
