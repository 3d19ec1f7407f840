"""Local coordinate frames and 8-bit quantization of boxes and triangles.

A frame is an integer origin plus per-axis power-of-two cell sizes
``2**e``.  The origin is counted in cells of the frame's own size, so the
real-valued origin on an axis is ``origin * 2**e``.  Everything here uses
exact arithmetic: floats are only scaled by powers of two (exactly, falling
back to Fractions where ``ldexp`` would round), and floors/ceilings of those
quotients are taken before any subtraction, so no rounding can leak in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

GRID_MAX = 255
MIN_SCALE_EXP = -20
ORIGIN_LIMIT = 1 << 31
EMPTY_LO = 255
EMPTY_HI = 0


class QuantizationError(ValueError):
    """A coordinate does not fit the 8-bit grid of the frame it belongs to."""


class OriginOverflow(QuantizationError):
    """The scene is too large (or too finely resolved) for 32-bit origins."""


@dataclass(frozen=True)
class QuantFrame:
    origin: tuple[int, int, int]
    e: tuple[int, int, int]

    def __post_init__(self):
        for o in self.origin:
            if not -ORIGIN_LIMIT <= o < ORIGIN_LIMIT:
                raise OriginOverflow(f"frame origin {self.origin} exceeds 32 bits")
        for s in self.e:
            if not -128 <= s <= 127:
                raise QuantizationError(f"scale exponent {s} does not fit int8")

    def origin_real(self) -> tuple[float, float, float]:
        return tuple(math.ldexp(o, s) for o, s in zip(self.origin, self.e))

    def cell(self) -> tuple[float, float, float]:
        return tuple(math.ldexp(1.0, s) for s in self.e)


@dataclass(frozen=True)
class QBox:
    lo: tuple[int, int, int]
    hi: tuple[int, int, int]

    @classmethod
    def empty(cls) -> "QBox":
        return cls((EMPTY_LO,) * 3, (EMPTY_HI,) * 3)

    @property
    def is_empty(self) -> bool:
        return any(l > h for l, h in zip(self.lo, self.hi))

    def dequantize(self, frame: QuantFrame):
        lo = tuple(math.ldexp(o + l, s) for o, l, s in zip(frame.origin, self.lo, frame.e))
        hi = tuple(math.ldexp(o + h, s) for o, h, s in zip(frame.origin, self.hi, frame.e))
        return lo, hi


@dataclass(frozen=True)
class QTriangle:
    v0: tuple[int, int, int]
    v1: tuple[int, int, int]
    v2: tuple[int, int, int]

    NBYTES = 9

    def to_bytes(self) -> bytes:
        return bytes(self.v0 + self.v1 + self.v2)

    @classmethod
    def from_bytes(cls, b: bytes) -> "QTriangle":
        if len(b) != 9:
            raise ValueError("a quantized triangle is 9 bytes")
        return cls(tuple(b[0:3]), tuple(b[3:6]), tuple(b[6:9]))


def _check_finite(*xs):
    for x in xs:
        if not math.isfinite(x):
            raise ValueError(f"non-finite coordinate {x}")


def compute_scale(min_bound: float, max_bound: float, min_exp: int = MIN_SCALE_EXP) -> int:
    """Smallest power-of-two exponent with ``max - min <= 255 * 2**e``.

    Equivalent to ``ceil(log2((max - min) / 255))`` but evaluated exactly.  A
    zero extent, and anything finer than ``min_exp``, returns ``min_exp``.
    """
    _check_finite(min_bound, max_bound)
    if max_bound < min_bound:
        raise ValueError("max bound below min bound")
    ext = Fraction(max_bound) - Fraction(min_bound)
    if ext == 0:
        return min_exp
    if ext <= GRID_MAX * _pow2(min_exp):
        return min_exp
    # integer estimate of log2(ext / 255), then exact correction
    e = ext.numerator.bit_length() - ext.denominator.bit_length() - 8
    while GRID_MAX * _pow2(e) < ext:
        e += 1
    while GRID_MAX * _pow2(e - 1) >= ext:
        e -= 1
    return max(e, min_exp)


def _pow2(e: int) -> Fraction:
    return Fraction(1 << e) if e >= 0 else Fraction(1, 1 << -e)


def _scaled(p: float, e: int):
    # ldexp is exact when scaling up; scaling down can round tiny values
    return math.ldexp(p, -e) if e <= 0 else Fraction(p) / (1 << e)


def grid_floor(p: float, e: int) -> int:
    return math.floor(_scaled(p, e))


def grid_ceil(p: float, e: int) -> int:
    return math.ceil(_scaled(p, e))


def grid_nearest(p: float, e: int) -> int:
    """Nearest grid index, ties toward +inf."""
    x = _scaled(p, e)
    f = math.floor(x)
    return f + 1 if x - f >= Fraction(1, 2) else f


def compute_root_origin(p: float, scale: int) -> int:
    _check_finite(p)
    o = grid_floor(p, scale)
    if not -ORIGIN_LIMIT <= o < ORIGIN_LIMIT:
        raise OriginOverflow(f"origin {o} at scale {scale} exceeds 32 bits")
    return o


def quantize_bounds(frame: QuantFrame, p_lo: Sequence[float], p_hi: Sequence[float]) -> QBox:
    lo, hi = [], []
    for a in range(3):
        _check_finite(p_lo[a], p_hi[a])
        l = grid_floor(p_lo[a], frame.e[a]) - frame.origin[a]
        h = grid_ceil(p_hi[a], frame.e[a]) - frame.origin[a]
        if not (0 <= l <= GRID_MAX and 0 <= h <= GRID_MAX):
            raise QuantizationError(f"box [{p_lo[a]}, {p_hi[a]}] outside frame on axis {a}")
        lo.append(l)
        hi.append(h)
    return QBox(tuple(lo), tuple(hi))


def quantize_vertex(frame: QuantFrame, v: Sequence[float]) -> tuple[int, int, int]:
    out = []
    for a in range(3):
        _check_finite(v[a])
        q = grid_nearest(v[a], frame.e[a]) - frame.origin[a]
        if not 0 <= q <= GRID_MAX:
            raise QuantizationError(f"vertex coordinate {v[a]} outside frame on axis {a}")
        out.append(q)
    return tuple(out)


def quantize_triangle(frame: QuantFrame, v0, v1, v2) -> QTriangle:
    return QTriangle(quantize_vertex(frame, v0), quantize_vertex(frame, v1), quantize_vertex(frame, v2))


def derive_child_frame(parent: QuantFrame, child_box: QBox, child_scale: Sequence[int]) -> QuantFrame:
    """Child origin is the child's quantized lower corner, re-expressed on the finer grid."""
    origin = []
    for a in range(3):
        shift = parent.e[a] - child_scale[a]
        if shift < 0:
            raise QuantizationError("child scale coarser than parent scale")
        origin.append((parent.origin[a] + child_box.lo[a]) << shift)
    return QuantFrame(tuple(origin), tuple(int(s) for s in child_scale))


def broadcast_leaf_scales(all_leaf_scales: Sequence[Sequence[int]]) -> tuple[int, int, int]:
    """Coarsest exponent per axis over all leaves."""
    if len(all_leaf_scales) == 0:
        raise ValueError("no leaf scales to broadcast")
    s = np.max(np.asarray(all_leaf_scales, dtype=np.int64).reshape(-1, 3), axis=0)
    return tuple(int(x) for x in s)


def propagate_scales_up(children: Sequence[Sequence[int]], exps, root: int = 0) -> np.ndarray:
    """Raise every inner node's exponents to at least those of its children.

    ``children[i]`` lists the node indices below node ``i`` (empty for
    leaves) and ``exps`` is an (n, 3) integer array.  Returns a new array.
    """
    out = np.array(exps, dtype=np.int64, copy=True)
    order = []
    stack = [root]
    while stack:
        n = stack.pop()
        order.append(n)
        stack.extend(children[n])
    for n in reversed(order):
        for c in children[n]:
            np.maximum(out[n], out[c], out=out[n])
    return out
