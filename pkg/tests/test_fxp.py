from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quantrt.fxp import (
    OCT_ANGLE_BOUND,
    FixedP,
    FixedPointError,
    FixedPointOverflow,
    FormatError,
    FxVec3,
    cross3,
    dot3,
    oct_decode,
    oct_decode_array,
    oct_decode_float,
    oct_encode,
    oct_encode_array,
    oct_unpack,
)


@st.composite
def fixedp(draw, max_r=20, max_q=20):
    R = draw(st.integers(0, max_r))
    Q = draw(st.integers(0, max_q))
    lim = 1 << (R + Q)
    val = draw(st.integers(-lim + 1, lim - 1))  # most negative value excluded
    return FixedP(val, R, Q)


def test_add_same_q():
    r = FixedP(5, 4, 2) + FixedP(3, 4, 2)
    assert (r.val, r.R, r.Q) == (8, 5, 2)
    assert r.as_fraction() == 2


def test_add_rescales_lower_q():
    r = FixedP(1, 2, 1) + FixedP(1, 2, 2)
    assert (r.val, r.R, r.Q) == (3, 3, 2)
    assert r.as_fraction() == Fraction(1, 2) + Fraction(1, 4)


def test_self_subtraction():
    x = FixedP(-77, 9, 3)
    r = x - x
    assert (r.val, r.R, r.Q) == (0, 10, 3)


def test_mul_examples():
    r = FixedP(3, 2, 1) * FixedP(2, 2, 1)
    assert (r.val, r.R, r.Q) == (6, 4, 2)
    r = FixedP(-4, 3, 2) * FixedP(6, 3, 2)
    assert (r.val, r.R, r.Q) == (-24, 6, 4)
    assert r.as_fraction() == Fraction(-3, 2)
    b = FixedP(123, 7, 5)
    r = FixedP(0, 1, 0) * b
    assert (r.val, r.R, r.Q) == (0, 8, 5)


def test_mul_rejects_most_negative():
    with pytest.raises(FixedPointError):
        FixedP(-8, 3, 0) * FixedP(1, 3, 0)
    with pytest.raises(FixedPointError):
        FixedP(1, 3, 0) * FixedP(-(1 << 5), 3, 2)


def test_div_examples():
    r = FixedP(4, 2, 2).div(FixedP(8, 2, 2))
    assert (r.val, r.R, r.Q) == (8, 4, 4)
    assert r.as_fraction() == Fraction(1, 2)
    r = FixedP(1, 4, 0) / FixedP(3, 4, 0)
    assert (r.val, r.R, r.Q) == (5, 4, 4)
    assert r.as_fraction() == Fraction(5, 16)


def test_div_self_is_one():
    x = FixedP(13, 5, 3)
    r = x / x
    assert (r.R, r.Q) == (8, 8)
    assert r.as_fraction() == 1


def test_div_truncates_toward_zero_and_directed_modes():
    a, b = FixedP(-1, 4, 0), FixedP(3, 4, 0)
    assert a.div(b).val == -5
    assert a.div(b, "floor").val == -6
    assert a.div(b, "ceil").val == -5
    assert FixedP(1, 4, 0).div(b, "ceil").val == 6


def test_div_by_zero():
    with pytest.raises(ZeroDivisionError):
        FixedP(1, 2, 0) / FixedP(0, 2, 0)


def test_rescale():
    r = FixedP(3, 2, 1).rescale(4)
    assert (r.val, r.R, r.Q) == (24, 2, 4)
    x = FixedP(3, 2, 1)
    assert x.rescale(1) == x
    r = FixedP(-1, 1, 0).rescale(8)
    assert (r.val, r.R, r.Q) == (-256, 1, 8)
    with pytest.raises(FormatError):
        FixedP(3, 2, 2).rescale(1)


def test_format_violation_and_backing_overflow():
    with pytest.raises(FormatError):
        FixedP(8, 3, 0)
    FixedP(-8, 3, 0)  # two's complement minimum is representable
    with pytest.raises(FixedPointOverflow):
        FixedP(1 << 127, 200, 0)
    big = FixedP((1 << 100) - 1, 100, 0)
    with pytest.raises(FixedPointOverflow):
        big * big


def test_cross_and_dot_examples():
    ex = FxVec3.from_ints((1, 0, 0), 2)
    ey = FxVec3.from_ints((0, 1, 0), 2)
    c = cross3(ex, ey)
    assert c.raw() == (0, 0, 1)
    assert c.formats() == ((5, 0),) * 3
    a = FxVec3.from_ints((3, -2, 7), 4, 1)
    assert cross3(a, a).raw() == (0, 0, 0)
    assert dot3(ex, ey).val == 0
    v = FxVec3.from_ints((1, 2, 3), 3)
    d = dot3(v, v)
    assert d.as_fraction() == 14
    assert (d.R, d.Q) == (8, 0)


def test_cross_matches_rational_oracle():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        qa, qb = rng.integers(0, 6, 2)
        a_raw = rng.integers(-(1 << 12), 1 << 12, 3)
        b_raw = rng.integers(-(1 << 12), 1 << 12, 3)
        a = FxVec3.from_ints(a_raw, 12 - int(qa) + 1, int(qa))
        b = FxVec3.from_ints(b_raw, 12 - int(qb) + 1, int(qb))
        fa, fb = a.as_fractions(), b.as_fractions()
        ref = (
            fa[1] * fb[2] - fa[2] * fb[1],
            fa[2] * fb[0] - fa[0] * fb[2],
            fa[0] * fb[1] - fa[1] * fb[0],
        )
        assert cross3(a, b).as_fractions() == ref


@settings(max_examples=300, deadline=None)
@given(fixedp(), fixedp())
def test_add_sub_mul_exact(a, b):
    fa, fb = a.as_fraction(), b.as_fraction()
    s, d, p = a + b, a - b, a * b
    assert s.as_fraction() == fa + fb and (s.R, s.Q) == (max(a.R, b.R) + 1, max(a.Q, b.Q))
    assert d.as_fraction() == fa - fb and (d.R, d.Q) == (max(a.R, b.R) + 1, max(a.Q, b.Q))
    assert p.as_fraction() == fa * fb and (p.R, p.Q) == (a.R + b.R, a.Q + b.Q)


@settings(max_examples=300, deadline=None)
@given(fixedp(), fixedp())
def test_div_is_truncated_rational(a, b):
    if b.val == 0:
        return
    q = a / b
    assert (q.R, q.Q) == (a.R + b.Q, b.R + a.Q)
    exact = a.as_fraction() / b.as_fraction() * (1 << q.Q)
    t = abs(exact.numerator) // abs(exact.denominator)
    assert q.val == (t if exact >= 0 else -t)


@settings(max_examples=200, deadline=None)
@given(fixedp(12, 6), fixedp(12, 6), fixedp(12, 6))
def test_addition_associative_in_value(a, b, c):
    assert ((a + b) + c).value_eq(a + (b + c))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-999, 999), min_size=6, max_size=6), st.integers(0, 4))
def test_dot_symmetric(xs, q):
    a = FxVec3.from_ints(xs[:3], 10, q)
    b = FxVec3.from_ints(xs[3:], 10, q)
    assert dot3(a, b).val == dot3(b, a).val


# ---------------------------------------------------------------------------
# octahedral codec


def _angle(a, b):
    return 2.0 * np.arcsin(np.clip(np.linalg.norm(a - b, axis=-1) / 2.0, 0.0, 1.0))


def test_oct_apex_and_axes_exact():
    assert np.array_equal(oct_decode_float(oct_encode((0, 0, 1))), [0.0, 0.0, 1.0])
    for axis in range(3):
        for s in (1.0, -1.0):
            d = np.zeros(3)
            d[axis] = s
            assert np.array_equal(np.abs(oct_decode_float(oct_encode(d)) - d), np.zeros(3))
            fx = oct_decode(oct_encode(d), 10)
            assert fx.raw() == tuple(int(v) << 10 for v in d)
            assert fx.formats() == ((1, 10),) * 3


def test_oct_zero_vector_rejected():
    with pytest.raises(ValueError):
        oct_encode((0.0, 0.0, 0.0))


def test_oct_angular_error_below_bound():
    rng = np.random.default_rng(2024)
    d = rng.normal(size=(1_000_000, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    err = _angle(d, oct_decode_array(oct_encode_array(d)))
    assert err.max() < OCT_ANGLE_BOUND


def test_oct_reencode_idempotent_on_sampled_codewords():
    rng = np.random.default_rng(99)
    o = rng.integers(0, 1 << 32, 1_200_000, dtype=np.uint64).astype(np.uint32)
    qu, qv = oct_unpack(o)
    o = o[(qu != -32768) & (qv != -32768)]
    assert len(o) >= 1_000_000
    assert np.array_equal(oct_encode_array(oct_decode_array(o)), o)


def test_oct_encode_decode_encode_stable():
    rng = np.random.default_rng(5)
    d = rng.normal(size=(100_000, 3))
    o = oct_encode_array(d)
    assert np.array_equal(oct_encode_array(oct_decode_array(o)), o)


def test_oct_fixed_decode_components_bounded():
    rng = np.random.default_rng(3)
    for o in oct_encode_array(rng.normal(size=(200, 3))):
        v = oct_decode(int(o), 12)
        assert all(abs(c.val) <= 1 << 12 for c in v)
