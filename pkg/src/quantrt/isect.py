"""Ray-box and ray-triangle tests on quantized data.

Intersection runs in a *common space*: per axis, integer units of the global
leaf cell ``2**e_leaf[axis]``.  Node boxes and triangle vertices are exact
integers there; ray origins carry ``Q_org`` fractional bits and directions
``Q_dir`` fractional bits.

Two implementations of each fixed-point test exist and must agree bit for
bit:

* ``ray_box_fixed`` / ``ray_tri_fixed`` work on :class:`FixedP` values and
  follow the slab and edge-function algorithms step by step.  They are the
  reference (and record intermediate bit widths when asked).
* ``box_fixed_batch`` / ``tri_fixed_batch`` do the same integer arithmetic on
  numpy arrays for the traversal engines.  They use int64 when the precision
  bound allows it and Python integers (object arrays) otherwise.

Float32 counterparts (``box_float_batch``, ``tri_float_batch``) serve the
uncompressed configurations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fxp import FixedP, FxVec3, cross3, dot3, fmax, fmin
from .quantize import QTriangle

BARY_BITS = 24
INT64_SAFE_BITS = 62


@dataclass(frozen=True)
class PrecisionReq:
    R1: int
    Q1: int
    R2: int
    Q2: int
    R3: int
    Q3: int
    R4: int
    Q4: int

    def total_bits(self) -> int:
        """Magnitude bits of the widest intermediate (sign bit excluded)."""
        return self.R4 + self.Q4


def precision_requirements(R_org: int, Q_org: int, R_dir: int, Q_dir: int, R_tri: int, Q_tri: int) -> PrecisionReq:
    """Bit budget of the triangle test up to the edge-plane decision."""
    for v in (R_org, Q_org, R_dir, Q_dir, R_tri, Q_tri):
        if v < 0:
            raise ValueError("bit counts must be non-negative")
    R1, Q1 = R_tri + 1, Q_tri
    R2, Q2 = max(R_tri, R_org) + 1, max(Q_tri, Q_org)
    R3, Q3 = R2 + R1 + 1, Q2 + Q_tri
    R4, Q4 = R3 + R_dir + 2, Q3 + Q_dir
    return PrecisionReq(R1, Q1, R2, Q2, R3, Q3, R4, Q4)


# ---------------------------------------------------------------------------
# common space and derived formats


def _bits(x) -> int:
    return abs(int(x)).bit_length()


@dataclass(frozen=True)
class FixedSpace:
    """Formats shared by every fixed-point test against one compressed tree."""

    e_leaf: tuple[int, int, int]
    R_scene: int
    R_org: int = 20
    Q_org: int = 10
    Q_dir: int = 10

    @classmethod
    def for_tree(cls, tree, R_org: int = 20, Q_org: int = 10, Q_dir: int = 10) -> "FixedSpace":
        vals = [np.abs(tree.tri_c).max(), np.abs(tree.box_lo_c).max(), np.abs(tree.box_hi_c).max()]
        R_scene = max(max(_bits(v) for v in vals), 1)
        return cls(tuple(int(v) for v in tree.e_leaf), R_scene, R_org, Q_org, Q_dir)

    def __post_init__(self):
        if self.R_org + self.Q_org > 31:
            raise ValueError("ray origin format must fit a 32-bit signed word")
        if self.Q_dir < 1 or self.Q_dir > 30:
            raise ValueError("direction precision out of range")

    # direction components are shifted so that unequal leaf scales keep the
    # ray parameter consistent across axes
    @property
    def dir_shift(self) -> tuple[int, int, int]:
        m = max(self.e_leaf)
        return tuple(m - e for e in self.e_leaf)

    @property
    def R_dir(self) -> int:
        return 1 + max(self.dir_shift)

    @property
    def R_box(self) -> int:
        return self.R_scene

    @property
    def R_tri(self) -> int:
        return max(self.R_scene, 8) + 1

    @property
    def req(self) -> PrecisionReq:
        return precision_requirements(self.R_org, self.Q_org, self.R_dir, self.Q_dir, self.R_tri, 0)

    # slab parameters
    @property
    def Q_t(self) -> int:
        return self.R_dir + self.Q_org

    @property
    def R_t(self) -> int:
        return max(self.R_box, self.R_org) + 1 + self.Q_dir

    @property
    def t_max_raw(self) -> int:
        return (1 << (self.R_t + self.Q_t)) - 1

    @property
    def slab_shift(self) -> int:
        return self.R_dir + self.Q_dir

    # triangle distance
    @property
    def R_n(self) -> int:
        return 2 * (self.R_tri + 1) + 1

    @property
    def R_dotn(self) -> int:
        return self.R_dir + self.R_n + 2

    @property
    def Q_dist(self) -> int:
        return self.R_dotn + self.Q_org

    @property
    def dist_shift(self) -> int:
        return self.Q_dir + self.R_dotn

    def dist_to_t_ceil(self, dist_raw: int) -> int:
        """Smallest slab-grid value >= a distance (for conservative box pruning)."""
        sh = self.Q_dist - self.Q_t
        return -((-dist_raw) >> sh)

    def t_world_scale(self) -> float:
        """World distance per unit of the ray parameter."""
        return float(2.0 ** max(self.e_leaf))

    def box_needs_objects(self, R_org_used: int | None = None) -> bool:
        R_org = self.R_org if R_org_used is None else R_org_used
        return max(self.R_box, R_org) + 1 + self.Q_org + self.slab_shift > INT64_SAFE_BITS

    def tri_needs_objects(self, R_org_used: int | None = None) -> bool:
        R_org = self.R_org if R_org_used is None else R_org_used
        req = precision_requirements(R_org, self.Q_org, self.R_dir, self.Q_dir, self.R_tri, 0)
        return req.total_bits() > INT64_SAFE_BITS


# ---------------------------------------------------------------------------
# reference kernels on FixedP


@dataclass(frozen=True)
class FxRay:
    origin: FxVec3
    direction: FxVec3
    tMax: FixedP

    @classmethod
    def from_raw(cls, space: FixedSpace, origin_raw, dir_raw, tmax_raw: int | None = None) -> "FxRay":
        o = FxVec3.from_ints(origin_raw, space.R_org, space.Q_org)
        d = FxVec3.from_ints(dir_raw, space.R_dir, space.Q_dir)
        if all(c.val == 0 for c in d):
            raise ValueError("ray direction is zero")
        R_dist = (max(space.R_tri, space.R_org) + 1 + space.R_n + 2) + space.Q_dir
        if tmax_raw is None:
            tmax = FixedP.max_value(R_dist, space.Q_dist)
        else:
            tmax = FixedP(tmax_raw, R_dist, space.Q_dist)
        return cls(o, d, tmax)


@dataclass
class BitTracker:
    """Largest raw magnitude (in bits) seen per stage of the triangle test."""

    maxima: dict = field(default_factory=lambda: {"edge": 0, "offset": 0, "normal": 0, "dot": 0})

    def record(self, stage: str, *values: FixedP) -> None:
        m = max(v.bits_used() for v in values)
        if m > self.maxima[stage]:
            self.maxima[stage] = m

    def within(self, req: PrecisionReq) -> bool:
        lim = {
            "edge": req.R1 + req.Q1,
            "offset": req.R2 + req.Q2,
            "normal": req.R3 + req.Q3,
            "dot": req.R4 + req.Q4,
        }
        return all(self.maxima[k] <= lim[k] for k in lim)


def slab_fixed(ray: FxRay, lo, hi, R_box: int):
    """Slab test with directed rounding; returns (hit, t_near, t_far).

    ``lo``/``hi`` are integer box corners in common units.  The entry
    parameter is rounded toward -inf and the exit toward +inf so the
    fixed-point interval always encloses the exact one.
    """
    o, d = ray.origin, ray.direction
    R_a = max(R_box, o.x.R) + 1
    R_t, Q_t = R_a + d.x.Q, d.x.R + o.x.Q
    tmin = FixedP(0, R_t, Q_t)
    tmax = FixedP.max_value(R_t, Q_t)
    for axis in range(3):
        oa, da = o[axis], d[axis]
        blo = FixedP(int(lo[axis]), R_box, 0)
        bhi = FixedP(int(hi[axis]), R_box, 0)
        if da.val == 0:
            if oa < blo or oa > bhi:
                return False, tmin, tmax
            continue
        if da.val > 0:
            t1 = (blo - oa).div(da, "floor")
            t2 = (bhi - oa).div(da, "ceil")
        else:
            t1 = (bhi - oa).div(da, "floor")
            t2 = (blo - oa).div(da, "ceil")
        tmin = fmax(tmin, t1)
        tmax = fmin(tmax, t2)
        if tmin > tmax:
            return False, tmin, tmax
    return True, tmin, tmax


def ray_box_fixed(ray: FxRay, lo, hi, R_box: int = 32) -> bool:
    return slab_fixed(ray, lo, hi, R_box)[0]


@dataclass(frozen=True)
class TriHit:
    dist: FixedP
    u: int  # barycentric weight of v1, BARY_BITS fractional bits
    v: int  # barycentric weight of v2
    dots: tuple[int, int, int]


def ray_tri_fixed(
    ray: FxRay,
    tri: QTriangle,
    origin: FxVec3,
    two_sided: bool = True,
    tracker: BitTracker | None = None,
) -> TriHit | None:
    """Edge-function test with every intermediate kept exact.

    ``origin`` is the leaf frame origin in common units.  Single-sided mode
    rejects as soon as any edge dot product is positive; two-sided mode also
    accepts the case where all three are non-negative.  A ray lying in the
    triangle plane (zero normal dot) is a miss.
    """
    a = origin + FxVec3.from_ints(tri.v0, 8)
    b = origin + FxVec3.from_ints(tri.v1, 8)
    c = origin + FxVec3.from_ints(tri.v2, 8)
    ab, ac, bc = b - a, c - a, c - b
    a0, b0, c0 = ray.origin - a, ray.origin - b, ray.origin - c
    aN = cross3(ab, a0)
    bN = cross3(bc, b0)
    cN = cross3(c0, ac)
    dota = dot3(aN, ray.direction)
    dotb = dot3(bN, ray.direction)
    dotc = dot3(cN, ray.direction)
    if tracker is not None:
        tracker.record("edge", *ab, *ac, *bc)
        tracker.record("offset", *a0, *b0, *c0)
        tracker.record("normal", *aN, *bN, *cN)
        tracker.record("dot", dota, dotb, dotc)
    s = (dota.sign(), dotb.sign(), dotc.sign())
    back = max(s) <= 0
    front = min(s) >= 0
    if not (back or (two_sided and front)):
        return None
    n = cross3(ab, ac)
    dotn = dot3(ray.direction, n)
    if dotn.val == 0:
        return None
    dist = (-dot3(a0, n)).div(dotn, "floor")
    if dist.val < 0 or dist > ray.tMax:
        return None
    # the three edge dots share one format and sum to the normal dot
    total = dota.val + dotb.val + dotc.val
    u = (dotc.val << BARY_BITS) // total
    v = (dota.val << BARY_BITS) // total
    return TriHit(dist, u, v, (dota.val, dotb.val, dotc.val))


# ---------------------------------------------------------------------------
# batch integer kernels


def _cross(a, b):
    return (
        a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
        a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
        a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
    )


def _dot(c, d):
    return (c[0] * d[..., 0] + c[1] * d[..., 1]) + c[2] * d[..., 2]


def box_fixed_batch(o, d, lo, hi, space: FixedSpace):
    """Vectorized slab test.  All inputs (..., 3) raw integers; returns (hit, t_near_raw).

    ``t_near_raw`` is in the slab grid (``space.Q_t`` fractional bits).
    """
    Q = space.Q_org
    sh = space.slab_shift
    tmax0 = space.t_max_raw
    lo_s = lo << Q
    hi_s = hi << Q
    par = d == 0
    par_out = (par & ((o < lo_s) | (o > hi_s))).any(axis=-1)
    pos = d > 0
    dd = np.where(par, 1, d)
    n_near = np.where(pos, lo_s - o, hi_s - o) << sh
    n_far = np.where(pos, hi_s - o, lo_s - o) << sh
    t1 = n_near // dd
    t2 = -((-n_far) // dd)
    t1 = np.where(par, 0, t1)
    t2 = np.where(par, tmax0, t2)
    tnear = np.maximum(t1.max(axis=-1), 0)
    tfar = np.minimum(t2.min(axis=-1), tmax0)
    return (~par_out) & (tnear <= tfar), tnear


def tri_fixed_batch(o, d, A, B, C, space: FixedSpace, two_sided: bool = True):
    """Vectorized edge-function test.

    Returns ``(idx, dist, u, v)`` for the rows that hit, where ``dist`` is a
    list of Python ints in the distance grid (``space.Q_dist`` fractional bits)
    and ``u``/``v`` are BARY_BITS fixed-point barycentrics.
    """
    Q = space.Q_org
    As, Bs, Cs = A << Q, B << Q, C << Q
    ab, ac, bc = B - A, C - A, C - B
    a0, b0, c0 = o - As, o - Bs, o - Cs
    dota = _dot(_cross(ab, a0), d)
    dotb = _dot(_cross(bc, b0), d)
    dotc = _dot(_cross(c0, ac), d)
    back = (dota <= 0) & (dotb <= 0) & (dotc <= 0)
    if two_sided:
        back |= (dota >= 0) & (dotb >= 0) & (dotc >= 0)
    idx = np.nonzero(back)[0]
    if len(idx) == 0:
        return idx, [], [], []
    # past the decision: exact Python integers, only for the survivors
    obj = lambda x: x[idx].astype(object)  # noqa: E731
    abo, aco, a0o, do = obj(ab), obj(ac), obj(a0), obj(d)
    n = _cross(abo, aco)
    dotn = _dot(n, do)
    num = -_dot(n, a0o)
    da, dc = obj(dota), obj(dotc)
    tot = da + obj(dotb) + dc
    sh = space.dist_shift
    keep, dist, us, vs = [], [], [], []
    for k in range(len(idx)):
        dn = int(dotn[k])
        if dn == 0:
            continue
        t = (int(num[k]) << sh) // dn
        if t < 0:
            continue
        keep.append(idx[k])
        dist.append(t)
        us.append((int(dc[k]) << BARY_BITS) // int(tot[k]))
        vs.append((int(da[k]) << BARY_BITS) // int(tot[k]))
    return np.array(keep, dtype=np.int64), dist, us, vs


# ---------------------------------------------------------------------------
# float32 kernels


def box_float_batch(o, d, lo, hi):
    """Float32 slab test, zero direction components handled explicitly."""
    o = o.astype(np.float32, copy=False)
    d = d.astype(np.float32, copy=False)
    par = d == 0
    par_out = (par & ((o < lo) | (o > hi))).any(axis=-1)
    dd = np.where(par, np.float32(1), d)
    with np.errstate(invalid="ignore", over="ignore"):
        t1 = (lo - o) / dd
        t2 = (hi - o) / dd
    near = np.where(d < 0, t2, t1)
    far = np.where(d < 0, t1, t2)
    near = np.where(par, np.float32(-np.inf), near)
    far = np.where(par, np.float32(np.inf), far)
    tnear = np.maximum(near.max(axis=-1), np.float32(0))
    tfar = far.min(axis=-1)
    return (~par_out) & (tnear <= tfar), tnear


def tri_float_batch(o, d, A, B, C, two_sided: bool = True):
    """Float32 edge-function test; returns (idx, dist, u, v) for hits."""
    f = np.float32
    o, d = o.astype(f, copy=False), d.astype(f, copy=False)
    ab, ac, bc = B - A, C - A, C - B
    a0, b0, c0 = o - A, o - B, o - C
    dota = _dot(_cross(ab, a0), d)
    dotb = _dot(_cross(bc, b0), d)
    dotc = _dot(_cross(c0, ac), d)
    ok = (dota <= 0) & (dotb <= 0) & (dotc <= 0)
    if two_sided:
        ok |= (dota >= 0) & (dotb >= 0) & (dotc >= 0)
    n = _cross(ab, ac)
    dotn = _dot(n, d)
    ok &= dotn != 0
    with np.errstate(divide="ignore", invalid="ignore"):
        dist = -_dot(n, a0) / dotn
        u = dotc / dotn
        v = dota / dotn
    ok &= dist >= 0
    idx = np.nonzero(ok)[0]
    return idx, dist[idx], u[idx], v[idx]


def ray_box_float(origin, direction, lo, hi) -> bool:
    f = np.float32
    hit, _ = box_float_batch(
        np.asarray(origin, f)[None], np.asarray(direction, f)[None], np.asarray(lo, f)[None], np.asarray(hi, f)[None]
    )
    return bool(hit[0])


def ray_tri_float(origin, direction, v0, v1, v2, two_sided: bool = True):
    """Scalar wrapper: (dist, u, v) or None."""
    f = np.float32
    idx, dist, u, v = tri_float_batch(
        np.asarray(origin, f)[None],
        np.asarray(direction, f)[None],
        np.asarray(v0, f)[None],
        np.asarray(v1, f)[None],
        np.asarray(v2, f)[None],
        two_sided,
    )
    if len(idx) == 0:
        return None
    return float(dist[0]), float(u[0]), float(v[0])
