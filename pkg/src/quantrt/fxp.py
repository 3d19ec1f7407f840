"""Exact signed fixed-point numbers with (R.Q) format tracking.

A :class:`FixedP` stores a raw integer ``val`` together with the number of
range bits ``R`` and fractional bits ``Q``; the represented value is
``val / 2**Q``.  Every operation returns a result whose format follows the
propagation rules below, and never rounds unless a rounding mode is asked for
explicitly:

* add/sub:  ``(max(R1, R2) + 1) . max(Q1, Q2)``
* mul:      ``(R1 + R2) . (Q1 + Q2)``
* div:      ``(R1 + Q2) . (R2 + Q1)``, numerator pre-shifted by ``Q2 + R2``

Python integers are unbounded, so a 128-bit backing width is emulated by an
explicit check; exceeding it raises :class:`FixedPointOverflow` instead of
wrapping.

The module also holds the 3-vector helpers used by the triangle test and a
32-bit octahedral direction codec (two signed-normalized 16-bit coordinates).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

import numpy as np

BACKING_BITS = 128
_BACKING_LIMIT = 1 << (BACKING_BITS - 1)

OCT_BITS = 16
OCT_SCALE = (1 << (OCT_BITS - 1)) - 1  # 32767, symmetric snorm
# largest round-trip angle (radians) seen over 2e7 random directions plus a
# sweep of cell midpoints of the octahedral square (6.47e-5), with headroom
OCT_ANGLE_BOUND = 6.6e-5


class FixedPointError(ArithmeticError):
    """Base class for fixed-point precondition failures."""


class FixedPointOverflow(FixedPointError):
    """Raised when a raw value no longer fits the backing integer width."""


class FormatError(FixedPointError, ValueError):
    """Raised when a raw value does not fit its declared (R.Q) format."""


def _check_backing(val: int) -> int:
    if not -_BACKING_LIMIT <= val < _BACKING_LIMIT:
        raise FixedPointOverflow(f"raw value needs more than {BACKING_BITS} bits: {val}")
    return val


def _round_div(num: int, den: int, rounding: str) -> int:
    if rounding == "trunc":
        q = abs(num) // abs(den)
        return q if (num >= 0) == (den > 0) else -q
    if rounding == "floor":
        return num // den
    if rounding == "ceil":
        return -((-num) // den)
    raise ValueError(f"unknown rounding mode {rounding!r}")


@dataclass(frozen=True)
class FixedP:
    """Signed fixed-point number ``val / 2**Q`` with ``R`` range bits.

    Raw values span the two's complement range of ``R + Q`` magnitude bits
    plus a sign bit, i.e. ``-2**(R+Q) <= val < 2**(R+Q)``.
    """

    val: int
    R: int
    Q: int

    def __post_init__(self):
        if self.R < 0 or self.Q < 0:
            raise FormatError(f"negative format ({self.R}.{self.Q})")
        _check_backing(self.val)
        lim = 1 << (self.R + self.Q)
        if not -lim <= self.val < lim:
            raise FormatError(f"raw value {self.val} does not fit format ({self.R}.{self.Q})")

    # construction helpers

    @classmethod
    def from_int(cls, n: int, R: int | None = None) -> "FixedP":
        if R is None:
            R = max(abs(n).bit_length(), 1)
        return cls(int(n), R, 0)

    @classmethod
    def from_float(cls, x: float, R: int, Q: int, rounding: str = "nearest") -> "FixedP":
        """Quantize a real number; ``nearest`` rounds half away from zero."""
        scaled = Fraction(x) * (1 << Q)
        if rounding == "nearest":
            val = math.floor(abs(scaled) + Fraction(1, 2))
            val = val if scaled >= 0 else -val
        elif rounding == "floor":
            val = math.floor(scaled)
        elif rounding == "ceil":
            val = math.ceil(scaled)
        else:
            raise ValueError(f"unknown rounding mode {rounding!r}")
        return cls(val, R, Q)

    @classmethod
    def max_value(cls, R: int, Q: int) -> "FixedP":
        return cls((1 << (R + Q)) - 1, R, Q)

    @property
    def is_most_negative(self) -> bool:
        return self.val == -(1 << (self.R + self.Q))

    def as_fraction(self) -> Fraction:
        return Fraction(self.val, 1 << self.Q)

    def __float__(self) -> float:
        return self.val / (1 << self.Q) if self.Q < 1000 else float(self.as_fraction())

    def bits_used(self) -> int:
        return abs(self.val).bit_length()

    # format changes

    def rescale(self, newQ: int) -> "FixedP":
        if newQ < self.Q:
            raise FormatError(f"rescale would drop fractional bits ({self.Q} -> {newQ})")
        return FixedP(_check_backing(self.val << (newQ - self.Q)), self.R, newQ)

    def round_to(self, newQ: int, rounding: str = "floor") -> "FixedP":
        """Drop fractional bits with an explicit rounding direction."""
        if newQ >= self.Q:
            return self.rescale(newQ)
        val = _round_div(self.val, 1 << (self.Q - newQ), rounding)
        # ceil/nearest may need one more range bit than the source format
        return FixedP(val, self.R + 1, newQ)

    # arithmetic

    def _addsub(self, other: "FixedP", sign: int) -> "FixedP":
        R = max(self.R, other.R) + 1
        if self.Q == other.Q:
            return FixedP(_check_backing(self.val + sign * other.val), R, self.Q)
        if self.Q < other.Q:
            a = self.rescale(other.Q)
            return FixedP(_check_backing(a.val + sign * other.val), R, other.Q)
        b = other.rescale(self.Q)
        return FixedP(_check_backing(self.val + sign * b.val), R, self.Q)

    def add(self, other: "FixedP") -> "FixedP":
        return self._addsub(other, 1)

    def sub(self, other: "FixedP") -> "FixedP":
        return self._addsub(other, -1)

    def mul(self, other: "FixedP") -> "FixedP":
        if self.is_most_negative or other.is_most_negative:
            raise FixedPointError("multiplication operand is the most negative value of its format")
        return FixedP(_check_backing(self.val * other.val), self.R + other.R, self.Q + other.Q)

    def div(self, other: "FixedP", rounding: str = "trunc") -> "FixedP":
        """Quotient in format ``(self.R + other.Q).(other.R + self.Q)``.

        ``trunc`` matches plain integer division toward zero; ``floor`` and
        ``ceil`` give directed results for conservative callers.
        """
        if other.val == 0:
            raise ZeroDivisionError("fixed-point division by zero")
        num = _check_backing(self.val << (other.Q + other.R))
        return FixedP(_round_div(num, other.val, rounding), self.R + other.Q, other.R + self.Q)

    def neg(self) -> "FixedP":
        # -(most negative) needs one more range bit
        R = self.R + 1 if self.is_most_negative else self.R
        return FixedP(-self.val, R, self.Q)

    __add__ = add
    __sub__ = sub
    __mul__ = mul
    __truediv__ = div
    __neg__ = neg

    # value comparisons (format independent)

    def _cmp_pair(self, other: "FixedP | int") -> tuple[int, int]:
        if isinstance(other, int):
            return self.val, other << self.Q
        if self.Q >= other.Q:
            return self.val, other.val << (self.Q - other.Q)
        return self.val << (other.Q - self.Q), other.val

    def __lt__(self, other):
        a, b = self._cmp_pair(other)
        return a < b

    def __le__(self, other):
        a, b = self._cmp_pair(other)
        return a <= b

    def __gt__(self, other):
        a, b = self._cmp_pair(other)
        return a > b

    def __ge__(self, other):
        a, b = self._cmp_pair(other)
        return a >= b

    def value_eq(self, other: "FixedP | int") -> bool:
        a, b = self._cmp_pair(other)
        return a == b

    def sign(self) -> int:
        return (self.val > 0) - (self.val < 0)

    def __repr__(self) -> str:
        return f"FixedP({self.val}, R={self.R}, Q={self.Q})"


def fmax(a: FixedP, b: FixedP) -> FixedP:
    return b if b > a else a


def fmin(a: FixedP, b: FixedP) -> FixedP:
    return b if b < a else a


@dataclass(frozen=True)
class FxVec3:
    x: FixedP
    y: FixedP
    z: FixedP

    @classmethod
    def from_ints(cls, xyz: Iterable[int], R: int, Q: int = 0) -> "FxVec3":
        """Raw integers interpreted in a shared (R.Q) format."""
        x, y, z = (FixedP(int(v), R, Q) for v in xyz)
        return cls(x, y, z)

    def __iter__(self):
        return iter((self.x, self.y, self.z))

    def __getitem__(self, i: int) -> FixedP:
        return (self.x, self.y, self.z)[i]

    def __add__(self, o: "FxVec3") -> "FxVec3":
        return FxVec3(self.x + o.x, self.y + o.y, self.z + o.z)

    def __sub__(self, o: "FxVec3") -> "FxVec3":
        return FxVec3(self.x - o.x, self.y - o.y, self.z - o.z)

    def raw(self) -> tuple[int, int, int]:
        return self.x.val, self.y.val, self.z.val

    def as_fractions(self) -> tuple[Fraction, Fraction, Fraction]:
        return self.x.as_fraction(), self.y.as_fraction(), self.z.as_fraction()

    def formats(self) -> tuple[tuple[int, int], ...]:
        return tuple((c.R, c.Q) for c in self)


def cross3(a: FxVec3, b: FxVec3) -> FxVec3:
    return FxVec3(
        a.y * b.z - a.z * b.y,
        a.z * b.x - a.x * b.z,
        a.x * b.y - a.y * b.x,
    )


def dot3(a: FxVec3, b: FxVec3) -> FixedP:
    return (a.x * b.x + a.y * b.y) + a.z * b.z


# ---------------------------------------------------------------------------
# octahedral direction codec


def _sign_not_zero(x):
    # signbit keeps -0.0 negative, so fold-edge code words survive a round trip
    return np.where(np.signbit(x), -1.0, 1.0)


def oct_encode_array(d) -> np.ndarray:
    """Encode direction vectors (..., 3) into packed uint32 octahedral words.

    The low half-word holds the first octahedral coordinate, the high half-word
    the second, each as a signed 16-bit value in [-32767, 32767].
    """
    d = np.asarray(d, dtype=np.float64)
    l1 = np.abs(d).sum(axis=-1)
    if np.any(l1 == 0.0) or not np.all(np.isfinite(l1)):
        raise ValueError("octahedral encoding needs finite, nonzero directions")
    p = d / l1[..., None]
    u, v, z = p[..., 0], p[..., 1], p[..., 2]
    neg = z < 0.0
    fu = (1.0 - np.abs(v)) * _sign_not_zero(u)
    fv = (1.0 - np.abs(u)) * _sign_not_zero(v)
    u = np.where(neg, fu, u)
    v = np.where(neg, fv, v)
    qu = np.rint(np.clip(u, -1.0, 1.0) * OCT_SCALE).astype(np.int64)
    qv = np.rint(np.clip(v, -1.0, 1.0) * OCT_SCALE).astype(np.int64)
    return ((qu & 0xFFFF) | ((qv & 0xFFFF) << 16)).astype(np.uint32)


def oct_unpack(packed) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(packed, dtype=np.uint32)
    qu = (p & 0xFFFF).astype(np.uint16).view(np.int16).astype(np.int64)
    qv = (p >> 16).astype(np.uint16).view(np.int16).astype(np.int64)
    return qu, qv


def oct_decode_array(packed) -> np.ndarray:
    """Decode packed octahedral words into unit float64 directions (..., 3)."""
    qu, qv = oct_unpack(packed)
    # -32768 is outside the symmetric range; read it as -1 like any snorm decoder
    u = np.maximum(qu / OCT_SCALE, -1.0)
    v = np.maximum(qv / OCT_SCALE, -1.0)
    z = 1.0 - np.abs(u) - np.abs(v)
    neg = z < 0.0
    x = np.where(neg, (1.0 - np.abs(v)) * _sign_not_zero(u), u)
    y = np.where(neg, (1.0 - np.abs(u)) * _sign_not_zero(v), v)
    d = np.stack([x, y, z], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def oct_decode_raw(packed, qdir: int) -> np.ndarray:
    """Decode to raw fixed-point components (int64) with ``qdir`` fractional bits."""
    d = oct_decode_array(packed)
    return np.rint(np.ldexp(d, qdir)).astype(np.int64)


def oct_encode(d) -> int:
    """Encode one direction (any nonzero length) into a 32-bit word."""
    return int(oct_encode_array(np.asarray(d, dtype=np.float64)[None, :])[0])


def oct_decode_float(o: int) -> np.ndarray:
    return oct_decode_array(np.array([o], dtype=np.uint32))[0]


def oct_decode(o: int, qdir: int) -> FxVec3:
    """Fixed-point direction in format (1.qdir) from a packed octahedral word."""
    raw = oct_decode_raw(np.array([o], dtype=np.uint32), qdir)[0]
    return FxVec3.from_ints(raw, 1, qdir)
