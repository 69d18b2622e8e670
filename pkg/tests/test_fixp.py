import numpy as np
import pytest
from hypothesis import given, strategies as st

from rvrnn import fixp

raw16 = st.integers(fixp.Q_MIN, fixp.Q_MAX)
any_int = st.integers(-(1 << 40), 1 << 40)


def test_format_constants():
    assert fixp.SCALE == 4096
    assert (fixp.Q_MIN, fixp.Q_MAX) == (-32768, 32767)
    assert fixp.to_real(fixp.ONE) == 1.0


@pytest.mark.parametrize("v, want", [(0x7FFF, 32767), (0x8000, -32768), (0xFFFF, -1), (0x1_0005, 5)])
def test_s16_wraps(v, want):
    assert fixp.s16(v) == want


@pytest.mark.parametrize("v, want", [(1 << 31, -(1 << 31)), ((1 << 32) + 7, 7), (-1, -1)])
def test_s32_wraps(v, want):
    assert fixp.s32(v) == want


def test_from_real_rounds_and_saturates():
    assert fixp.from_real(0.5) == 2048
    assert fixp.from_real(1 / 8192 * 1.01) == 1
    assert fixp.from_real(100.0) == fixp.Q_MAX
    assert fixp.from_real(-100.0) == fixp.Q_MIN


def test_requantize_truncates_toward_minus_infinity():
    assert fixp.requantize(4095) == 0
    assert fixp.requantize(-1) == -1
    assert fixp.requantize(-4096) == -1
    assert fixp.requantize(2048 * 2048) == 1024


def test_requantize_saturates():
    assert fixp.requantize(1 << 30) == fixp.Q_MAX
    assert fixp.requantize(-(1 << 30)) == fixp.Q_MIN


@pytest.mark.parametrize("shift", [-1, 32])
def test_requantize_rejects_bad_shift(shift):
    with pytest.raises(ValueError):
        fixp.requantize(0, shift)


def test_requantize_wraps_accumulator_first():
    # bit 32 is discarded before the shift
    assert fixp.requantize((1 << 32) + 8192) == 2


@given(raw16, raw16)
def test_pack_unpack_roundtrip(lo, hi):
    w = fixp.pack(lo, hi)
    assert 0 <= w < 1 << 32
    assert fixp.unpack(w) == (lo, hi)
    assert w & 0xFFFF == lo & 0xFFFF  # element 0 in the low half


@given(raw16, raw16, raw16, raw16, st.integers(-(1 << 31), (1 << 31) - 1))
def test_sdotp_matches_wide_sum(a0, a1, b0, b1, acc):
    want = (acc + a0 * b0 + a1 * b1 + (1 << 31)) % (1 << 32) - (1 << 31)
    assert fixp.sdotp(fixp.pack(a0, a1), fixp.pack(b0, b1), acc) == want


@given(st.lists(any_int, min_size=1, max_size=40), st.integers(0, 31))
def test_array_forms_match_scalar(vals, shift):
    arr = np.array(vals, dtype=np.int64)
    assert fixp.wrap32_array(arr).tolist() == [fixp.s32(v) for v in vals]
    assert fixp.requantize_array(arr, shift).tolist() == [fixp.requantize(v, shift) for v in vals]


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=20))
def test_from_real_array_matches_scalar(vals):
    # numpy rounds half to even like Python's round()
    assert fixp.from_real_array(vals).tolist() == [fixp.from_real(v) for v in vals]
