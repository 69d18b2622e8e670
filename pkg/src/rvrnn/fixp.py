"""Q3.12 fixed-point arithmetic.

Values are carried as plain Python ints holding the raw two's-complement
pattern (16-bit for data, 32-bit for accumulators). The ``*_array``
variants operate on numpy integer arrays with identical semantics.
"""
from __future__ import annotations

import numpy as np

FRAC_BITS = 12
SCALE = 1 << FRAC_BITS
Q_MIN = -(1 << 15)
Q_MAX = (1 << 15) - 1
ONE = SCALE


def s16(v: int) -> int:
    """Wrap an integer to signed 16 bits."""
    return ((v & 0xFFFF) ^ 0x8000) - 0x8000


def s32(v: int) -> int:
    """Wrap an integer to signed 32 bits."""
    return ((v & 0xFFFFFFFF) ^ 0x80000000) - 0x80000000


def saturate16(v: int) -> int:
    return Q_MIN if v < Q_MIN else Q_MAX if v > Q_MAX else v


def from_real(x: float) -> int:
    """Nearest Q3.12 raw value, saturated to the representable range."""
    return saturate16(int(round(x * SCALE)))


def to_real(raw: int) -> float:
    return raw / SCALE


def q_mul(a: int, b: int) -> int:
    """Full-precision product of two Q3.12 raws (implicit scale 2**-24)."""
    return s16(a) * s16(b)


def requantize(acc: int, shift: int = FRAC_BITS) -> int:
    """Arithmetic right shift with truncation, then saturate to 16 bits."""
    if not 0 <= shift <= 31:
        raise ValueError(f"shift must be in [0, 31], got {shift}")
    return saturate16(s32(acc) >> shift)


def pack(lo: int, hi: int) -> int:
    """Pack two 16-bit halves into an unsigned 32-bit word (lo = element 0)."""
    return (lo & 0xFFFF) | ((hi & 0xFFFF) << 16)


def unpack(word: int) -> tuple[int, int]:
    return s16(word), s16(word >> 16)


def sdotp(a: int, b: int, acc: int) -> int:
    """acc + a0*b0 + a1*b1 over packed pairs, wrapping at 32 bits."""
    a0, a1 = unpack(a)
    b0, b1 = unpack(b)
    return s32(acc + a0 * b0 + a1 * b1)


# -- vectorised forms ---------------------------------------------------------

def wrap32_array(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.int64)
    return ((v + (1 << 31)) & 0xFFFFFFFF) - (1 << 31)


def requantize_array(acc: np.ndarray, shift: int = FRAC_BITS) -> np.ndarray:
    if not 0 <= shift <= 31:
        raise ValueError(f"shift must be in [0, 31], got {shift}")
    return np.clip(wrap32_array(acc) >> shift, Q_MIN, Q_MAX).astype(np.int64)


def from_real_array(x) -> np.ndarray:
    return np.clip(np.rint(np.asarray(x, dtype=np.float64) * SCALE), Q_MIN, Q_MAX).astype(np.int64)


def to_real_array(raw) -> np.ndarray:
    return np.asarray(raw, dtype=np.float64) / SCALE
