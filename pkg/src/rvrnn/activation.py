"""Piecewise-linear tanh / sigmoid in Q3.12.

Only the positive half-axis is tabulated: ``M`` uniform intervals of
``2**N`` raw units each. Negative inputs are folded through the odd
(tanh) or complement (sigmoid) symmetry and inputs beyond ``M * 2**N``
saturate to -1, 0 or 1.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import fixp

FUNCS = ("tanh", "sig")


def _reference(func: str):
    if func == "tanh":
        return math.tanh
    if func == "sig":
        return lambda v: 1.0 / (1.0 + math.exp(-v))
    raise ValueError(f"unknown activation {func!r}; expected one of {FUNCS}")


def reference_array(func: str, x: np.ndarray) -> np.ndarray:
    """Double-precision reference over real-valued inputs."""
    if func == "tanh":
        return np.tanh(x)
    if func == "sig":
        return 1.0 / (1.0 + np.exp(-x))
    raise ValueError(f"unknown activation {func!r}; expected one of {FUNCS}")


@dataclass(frozen=True)
class PlaTable:
    func: str
    n_log2: int
    m_count: int
    slopes: tuple[int, ...]
    offsets: tuple[int, ...]

    def __post_init__(self):
        if len(self.slopes) != self.m_count or len(self.offsets) != self.m_count:
            raise ValueError("slope/offset tables must have m_count entries")

    @property
    def range_raw(self) -> int:
        return self.m_count << self.n_log2

    @property
    def range_bound(self) -> float:
        return self.range_raw / fixp.SCALE


def _is_pow2(v: int) -> bool:
    return v > 0 and v & (v - 1) == 0


def build_table(func: str, range_bound: float, m_count: int) -> PlaTable:
    """Secant-fit slope/offset LUTs over ``[0, range_bound)``."""
    f = _reference(func)
    if not _is_pow2(m_count):
        raise ValueError(f"m_count must be a power of two, got {m_count}")
    span = range_bound * fixp.SCALE / m_count
    if span != int(span) or not _is_pow2(int(span)):
        raise ValueError(
            f"interval width {range_bound}*4096/{m_count} = {span} raw units is not a power of two")
    if range_bound * fixp.SCALE > 1 << 15:
        raise ValueError(f"range_bound {range_bound} exceeds the Q3.12 domain")
    n_log2 = int(span).bit_length() - 1
    width = 1 << n_log2
    slopes, offsets = [], []
    for i in range(m_count):
        # secant through the quantised endpoints; for widths <= 4096 raw units
        # m*(x - x0) >> 12 is then exact at both ends, which keeps the
        # approximation monotone across interval boundaries
        y0 = fixp.from_real(f(i * width / fixp.SCALE))
        y1 = fixp.from_real(f((i + 1) * width / fixp.SCALE))
        m_raw = round((y1 - y0) * fixp.SCALE / width)
        slopes.append(m_raw)
        offsets.append(y0 - ((m_raw * i * width) >> fixp.FRAC_BITS))
    return PlaTable(func, n_log2, m_count, tuple(slopes), tuple(offsets))


@lru_cache(maxsize=None)
def default_table(func: str) -> PlaTable:
    """The hardwired [-4, 4), 32-interval table used by ``pl.tanh``/``pl.sig``."""
    return build_table(func, 4.0, 32)


def pla_eval(table: PlaTable, x: int) -> int:
    x = fixp.s16(x)
    neg = x < 0
    ax = min(-x, fixp.Q_MAX) if neg else x
    idx = ax >> table.n_log2
    if idx >= table.m_count:
        if table.func == "tanh":
            return -fixp.ONE if neg else fixp.ONE
        return 0 if neg else fixp.ONE
    y = fixp.requantize(table.slopes[idx] * ax) + table.offsets[idx]
    if neg:
        y = -y if table.func == "tanh" else fixp.ONE - y
    return fixp.saturate16(y)


def pla_eval_array(table: PlaTable, x) -> np.ndarray:
    """Vectorised :func:`pla_eval`; bit-identical to the scalar form."""
    x = np.asarray(x, dtype=np.int64)
    x = ((x & 0xFFFF) ^ 0x8000) - 0x8000
    neg = x < 0
    ax = np.where(neg, np.minimum(-x, fixp.Q_MAX), x)
    idx = ax >> table.n_log2
    inside = idx < table.m_count
    safe = np.where(inside, idx, 0)
    m = np.asarray(table.slopes, dtype=np.int64)[safe]
    q = np.asarray(table.offsets, dtype=np.int64)[safe]
    y = fixp.requantize_array(m * ax) + q
    if table.func == "tanh":
        y = np.where(neg, -y, y)
        sat = np.where(neg, -fixp.ONE, fixp.ONE)
    else:
        y = np.where(neg, fixp.ONE - y, y)
        sat = np.where(neg, 0, fixp.ONE)
    return np.clip(np.where(inside, y, sat), fixp.Q_MIN, fixp.Q_MAX)


ALL_INPUTS = np.arange(fixp.Q_MIN, fixp.Q_MAX + 1, dtype=np.int64)


@dataclass(frozen=True)
class ErrorSweepPoint:
    func: str
    range_bound: float
    m_count: int
    mse: float
    max_abs_err: float


def table_error(table: PlaTable, inputs: np.ndarray | None = None) -> tuple[float, float]:
    """(MSE, max |error|) against the double-precision reference.

    ``inputs`` defaults to every Q3.12 raw value, i.e. the domain [-8, 8).
    """
    raw = ALL_INPUTS if inputs is None else np.asarray(inputs, dtype=np.int64)
    approx = fixp.to_real_array(pla_eval_array(table, raw))
    err = approx - reference_array(table.func, fixp.to_real_array(raw))
    return float(np.mean(err * err)), float(np.max(np.abs(err)))


def error_sweep(func: str, ranges, m_counts) -> list[ErrorSweepPoint]:
    points = []
    for r in ranges:
        for m in m_counts:
            mse, mx = table_error(build_table(func, r, m))
            points.append(ErrorSweepPoint(func, float(r), int(m), mse, mx))
    return points


SWEEP_FIELDS = ("func", "range", "M", "mse", "max_abs_err")


def sweep_to_csv(points) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_FIELDS)
    for p in points:
        w.writerow([p.func, repr(p.range_bound), p.m_count, repr(p.mse), repr(p.max_abs_err)])
    return buf.getvalue()
