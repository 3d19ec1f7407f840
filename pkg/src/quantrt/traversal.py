"""Single-ray (SR) and ray-stream (RS) traversal with traffic accounting.

Both engines run over either tree flavour.  Compressed trees are traced with
the exact integer kernels in the common leaf-grid space; uncompressed trees
with float32 kernels.  Closest hits are chosen by (distance, triangle id) so
that every engine, and the linear-scan oracle, agree exactly even when two
triangles report the same distance.

SR processes all rays in lockstep (one stack pop per active ray per step)
which is equivalent to tracing them one at a time: rays never interact.
RS keeps one shared stack of (node, ray list) entries; a node is fetched once
per entry no matter how many rays its list holds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metrics as M
from .fxp import oct_decode_array, oct_decode_raw, oct_encode_array
from .isect import BARY_BITS, FixedSpace, box_fixed_batch, box_float_batch, tri_fixed_batch, tri_float_batch

RAY_DTYPE = np.dtype(
    {
        "names": ["t", "prim", "u", "v", "origin", "dir"],
        "formats": ["<f4", "<i4", "<u4", "<u4", ("<i4", (3,)), "<u4"],
        "offsets": [0, 4, 8, 12, 16, 28],
        "itemsize": 32,
    }
)

_INF_KEY = 1 << 4096  # larger than any fixed-point distance


@dataclass
class Rays:
    """World-space rays; directions need not be normalized."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        self.origin = np.atleast_2d(np.asarray(self.origin, dtype=np.float64))
        self.direction = np.atleast_2d(np.asarray(self.direction, dtype=np.float64))
        if self.origin.shape != self.direction.shape or self.origin.shape[-1] != 3:
            raise ValueError("origin and direction must both be (n, 3)")
        if not (np.all(np.isfinite(self.origin)) and np.all(np.isfinite(self.direction))):
            raise ValueError("ray data must be finite")
        if np.any(np.abs(self.direction).sum(axis=1) == 0):
            raise ValueError("zero ray direction")

    def __len__(self):
        return len(self.origin)

    def subset(self, idx) -> "Rays":
        return Rays(self.origin[idx], self.direction[idx])


def _nearest(x):
    f = np.floor(x)
    return f + (x - f >= 0.5)


def ray_to_fixed(rays: Rays, space: FixedSpace) -> np.ndarray:
    """Pack world rays into 32-byte records for a compressed tree.

    The origin is rounded to the nearest point of the common grid with
    ``Q_org`` fractional bits; the direction is octahedrally encoded.
    """
    el = np.array(space.e_leaf)
    raw = _nearest(np.ldexp(rays.origin, space.Q_org - el))
    lim = 2.0 ** (space.R_org + space.Q_org)
    if np.any(np.abs(raw) >= lim):
        raise ValueError("ray origin outside the representable world for this ray format")
    rec = np.zeros(len(rays), dtype=RAY_DTYPE)
    rec["t"] = np.inf
    rec["prim"] = -1
    rec["origin"] = raw.astype(np.int64)
    rec["dir"] = oct_encode_array(rays.direction)
    return rec


def fixed_from_records(rec: np.ndarray, space: FixedSpace):
    """Kernel-space integers (origin raw, shifted direction raw) of ray records."""
    o = rec["origin"].astype(np.int64)
    d = oct_decode_raw(rec["dir"], space.Q_dir) << np.array(space.dir_shift, dtype=np.int64)
    return o, d


def rays_from_records(rec: np.ndarray, e_leaf, Q_org: int) -> Rays:
    o = np.ldexp(rec["origin"].astype(np.float64), np.array(e_leaf) - Q_org)
    return Rays(o, oct_decode_array(rec["dir"]))


# ---------------------------------------------------------------------------
# hit records


@dataclass
class Hits:
    prim: np.ndarray  # mesh triangle id, -1 on miss
    key: np.ndarray  # raw distance: Python ints (fixed) or float32, _INF_KEY / inf on miss
    u_raw: np.ndarray
    v_raw: np.ndarray
    t: np.ndarray  # world distance along the (unit) ray direction
    u: np.ndarray
    v: np.ndarray
    point: np.ndarray  # world hit point (nan on miss)

    def __len__(self):
        return len(self.prim)

    @property
    def hit(self) -> np.ndarray:
        return self.prim >= 0

    def identical(self, other: "Hits") -> bool:
        return (
            np.array_equal(self.prim, other.prim)
            and list(self.key) == list(other.key)
            and list(self.u_raw) == list(other.u_raw)
            and list(self.v_raw) == list(other.v_raw)
        )

    def mismatches(self, other: "Hits") -> np.ndarray:
        bad = self.prim != other.prim
        for a, b in ((self.key, other.key), (self.u_raw, other.u_raw), (self.v_raw, other.v_raw)):
            bad |= np.array([x != y for x, y in zip(a, b)], dtype=bool)
        return np.nonzero(bad)[0]

    def to_records(self, rec: np.ndarray | None = None) -> np.ndarray:
        out = np.zeros(len(self), dtype=RAY_DTYPE) if rec is None else rec.copy()
        out["t"] = np.where(self.hit, self.t, np.inf).astype(np.float32)
        out["prim"] = self.prim
        scale = float(1 << BARY_BITS)
        out["u"] = np.clip(np.floor(np.nan_to_num(self.u) * scale), 0, 2**32 - 1).astype(np.uint32)
        out["v"] = np.clip(np.floor(np.nan_to_num(self.v) * scale), 0, 2**32 - 1).astype(np.uint32)
        return out


# ---------------------------------------------------------------------------
# kernel back ends


class _State:
    """Per-ray closest-hit state shared by the engines."""

    def __init__(self, n, be):
        self.be = be
        self.key = np.empty(n, dtype=object) if be.fixed else np.full(n, np.inf, dtype=np.float32)
        if be.fixed:
            self.key[:] = _INF_KEY
        self.prim = np.full(n, -1, dtype=np.int64)
        self.u = np.zeros(n, dtype=object) if be.fixed else np.zeros(n, dtype=np.float32)
        self.v = np.zeros(n, dtype=object) if be.fixed else np.zeros(n, dtype=np.float32)
        self.tbox = be.initial_tbox(n)

    def offer(self, rays, tri_pos, idx, dist, u, v) -> set:
        """Apply candidate hits; returns the set of rays whose record improved."""
        improved = set()
        ids = self.be.prim_ids
        key, prim = self.key, self.prim
        for k in range(len(idx)):
            j = int(idx[k])
            r = int(rays[j])
            p = int(ids[tri_pos[j]])
            dk = dist[k]
            cur = key[r]
            if dk < cur or (dk == cur and p < prim[r]):
                key[r] = dk
                prim[r] = p
                self.u[r] = u[k]
                self.v[r] = v[k]
                self.tbox[r] = self.be.tbox_of(dk)
                improved.add(r)
        return improved


class _Backend:
    def __init__(self, tree, rays, space: FixedSpace | None = None, two_sided: bool = True, **space_kw):
        self.tree = tree
        self.W = tree.width
        self.fixed = bool(tree.compressed)
        self.two_sided = two_sided
        self.children = tree.children
        self.is_leaf = tree.is_leaf
        self.prim_start = tree.prim_start
        self.prim_count = tree.prim_count
        self.prim_ids = tree.prim_index
        self.node_bytes = tree.node_bytes
        self.tri_bytes = tree.tri_bytes
        self.inline = getattr(tree, "inline", np.zeros(tree.num_nodes, dtype=bool))
        if self.fixed:
            self.space = space if space is not None else FixedSpace.for_tree(tree, **space_kw)
            self.box_lo, self.box_hi = tree.box_lo_c, tree.box_hi_c
            tc = tree.tri_c
            if isinstance(rays, np.ndarray) and rays.dtype == RAY_DTYPE:
                self.records = rays
            else:
                self.records = ray_to_fixed(rays, self.space)
            o, d = fixed_from_records(self.records, self.space)
            big_box = self.space.box_needs_objects() or self.box_lo.dtype == object
            big_tri = self.space.tri_needs_objects() or tc.dtype == object
            self.o_box, self.d_box = (o.astype(object), d.astype(object)) if big_box else (o, d)
            if big_box:
                self.box_lo, self.box_hi = self.box_lo.astype(object), self.box_hi.astype(object)
            self.o_tri, self.d_tri = (o.astype(object), d.astype(object)) if big_tri else (o, d)
            tc = tc.astype(object) if big_tri else tc
            self.tA, self.tB, self.tC = tc[:, 0], tc[:, 1], tc[:, 2]
            self.t_max = self.space.t_max_raw
            sp = self.space
            el = np.array(sp.e_leaf)
            self.o_world = np.ldexp(o.astype(np.float64), el - sp.Q_org)
            self.d_world = np.ldexp(oct_decode_raw(self.records["dir"], sp.Q_dir).astype(np.float64), -sp.Q_dir)
            self.t_scale = sp.t_world_scale() / float(2**sp.Q_dist)
        else:
            if isinstance(rays, np.ndarray) and rays.dtype == RAY_DTYPE:
                raise ValueError("uncompressed traversal needs float rays (pass Rays)")
            self.box_lo, self.box_hi = tree.child_lo, tree.child_hi
            o = rays.origin.astype(np.float32)
            d = rays.direction / np.linalg.norm(rays.direction, axis=1, keepdims=True)
            d = d.astype(np.float32)
            self.o_box = self.o_tri = o
            self.d_box = self.d_tri = d
            self.tA, self.tB, self.tC = tree.tris[:, 0], tree.tris[:, 1], tree.tris[:, 2]
            self.t_max = np.float32(np.inf)
            self.o_world = o.astype(np.float64)
            self.d_world = d.astype(np.float64)
            self.t_scale = 1.0
        self.n = len(self.o_box)

    # pruning values live on the box-test grid
    def initial_tbox(self, n):
        if self.fixed:
            dt = object if self.o_box.dtype == object else np.int64
            return np.full(n, self.t_max, dtype=dt)
        return np.full(n, np.inf, dtype=np.float32)

    def tbox_of(self, dist):
        if self.fixed:
            return min(self.space.dist_to_t_ceil(dist), self.t_max)
        return dist

    def box(self, rays, lo, hi):
        if self.fixed:
            return box_fixed_batch(self.o_box[rays], self.d_box[rays], lo, hi, self.space)
        return box_float_batch(self.o_box[rays], self.d_box[rays], lo, hi)

    def tri(self, rays, pos):
        A, B, C = self.tA[pos], self.tB[pos], self.tC[pos]
        if self.fixed:
            return tri_fixed_batch(self.o_tri[rays], self.d_tri[rays], A, B, C, self.space, self.two_sided)
        return tri_float_batch(self.o_tri[rays], self.d_tri[rays], A, B, C, self.two_sided)

    def no_hit_key(self):
        return self.t_max + 1 if self.fixed else np.float32(np.inf)

    def finish(self, st: _State) -> Hits:
        hit = st.prim >= 0
        n = len(st.prim)
        t = np.full(n, np.inf)
        u = np.full(n, np.nan)
        v = np.full(n, np.nan)
        idx = np.nonzero(hit)[0]
        if self.fixed:
            bs = float(1 << BARY_BITS)
            for r in idx:
                t[r] = float(st.key[r]) * self.t_scale
                u[r] = int(st.u[r]) / bs
                v[r] = int(st.v[r]) / bs
        else:
            t[idx] = st.key[idx]
            u[idx] = st.u[idx]
            v[idx] = st.v[idx]
        point = np.full((n, 3), np.nan)
        point[idx] = self.o_world[idx] + t[idx, None] * self.d_world[idx]
        return Hits(st.prim.copy(), st.key.copy(), st.u.copy(), st.v.copy(), t, u, v, point)


def _leaf_pairs(be, rays, nodes):
    """Expand (ray, leaf) pairs into (ray, triangle pool position) pairs."""
    cnt = be.prim_count[nodes]
    total = int(cnt.sum())
    r = np.repeat(rays, cnt)
    base = np.repeat(be.prim_start[nodes], cnt)
    first = np.repeat(np.cumsum(cnt) - cnt, cnt)
    return r, base + (np.arange(total) - first)


# ---------------------------------------------------------------------------
# engines


def _stack_capacity(tree) -> int:
    return tree.depth() * (tree.width - 1) + 1


def _run_sr(be: _Backend, stats: M.TrafficStats) -> _State:
    n, W = be.n, be.W
    st = _State(n, be)
    stack = np.zeros((n, _stack_capacity(be.tree)), dtype=np.int64)
    sp = np.ones(n, dtype=np.int64)
    stats.record("rays", n)
    stats.record("rayLoads", M.RAY_RECORD_BYTES * n)
    stats.record("srStack", M.SR_ENTRY_BYTES * n)
    big = be.no_hit_key()
    while True:
        act = np.nonzero(sp > 0)[0]
        if len(act) == 0:
            break
        sp[act] -= 1
        node = stack[act, sp[act]]
        stats.record("srStack", M.SR_ENTRY_BYTES * len(act))
        stats.record("nodeBounds", be.node_bytes * len(act))
        leaf = be.is_leaf[node]

        if leaf.any():
            lr, ln = act[leaf], node[leaf]
            r, pos = _leaf_pairs(be, lr, ln)
            stats.record("triTests", len(r))
            fetched = int(be.prim_count[ln[~be.inline[ln]]].sum())
            stats.record("triangles", be.tri_bytes * fetched)
            if len(r):
                idx, dist, u, v = be.tri(r, pos)
                st.offer(r, pos, idx, dist, u, v)

        inner = ~leaf
        if not inner.any():
            continue
        ir, inn = act[inner], node[inner]
        m = len(ir)
        hits = np.zeros((m, W), dtype=bool)
        key = np.full((m, W), big, dtype=object if isinstance(big, int) and st.tbox.dtype == object else None)
        for s in range(W):
            ch = be.children[inn, s]
            valid = np.nonzero(ch >= 0)[0]
            if len(valid) == 0:
                continue
            stats.record("boxTests", len(valid))
            rr = ir[valid]
            h, tn = be.box(rr, be.box_lo[inn[valid], s], be.box_hi[inn[valid], s])
            h &= tn <= st.tbox[rr]
            hits[valid, s] = h
            key[valid[h], s] = tn[h]
        nh = hits.sum(axis=1)
        order = np.argsort(key, axis=1, kind="stable")
        for j in range(W):
            rows = np.nonzero(nh > j)[0]
            if len(rows) == 0:
                break
            slot = order[rows, nh[rows] - 1 - j]
            rr = ir[rows]
            stack[rr, sp[rr] + j] = be.children[inn[rows], slot]
        sp[ir] += nh
        stats.record("srStack", M.SR_ENTRY_BYTES * int(nh.sum()))
    return st


class _Arena:
    """Bump allocator of 4-byte ray indices; lists are contiguous slices."""

    def __init__(self, cap):
        self.buf = np.empty(max(cap, 16), dtype=np.int64)
        self.top = 0

    def append(self, idx) -> int:
        k = len(idx)
        while self.top + k > len(self.buf):
            self.buf = np.concatenate([self.buf, np.empty(len(self.buf), dtype=np.int64)])
        off = self.top
        self.buf[off : off + k] = idx
        self.top += k
        return off

    def slice(self, off, cnt):
        return self.buf[off : off + cnt]


@dataclass(frozen=True)
class StreamEntry:
    """Shared-stack entry: node, ray-list slice, and the parent slot it came from."""

    node: int
    offset: int
    count: int
    slot_mask: int = 0

    def pack(self) -> bytes:
        if self.count >= 1 << 24:
            raise ValueError("ray list longer than the 24-bit count field")
        word = self.count | (self.slot_mask << 24)
        return np.array([self.node, self.offset, word], dtype="<u4").tobytes()


def _run_rs(be: _Backend, stats: M.TrafficStats) -> _State:
    n, W = be.n, be.W
    st = _State(n, be)
    arena = _Arena(4 * n)
    off = arena.append(np.arange(n))
    stats.record("rays", n)
    stats.record("rayLists", M.LIST_ELEM_BYTES * n)
    stack = [StreamEntry(0, off, n)]
    stats.record("rsStack", M.RS_ENTRY_BYTES)
    while stack:
        e = stack.pop()
        stats.record("rsStack", M.RS_ENTRY_BYTES)
        stats.record("nodeBounds", be.node_bytes)
        stats.record("rayLists", M.LIST_ELEM_BYTES * e.count)
        stats.record("rayLoads", M.RAY_RECORD_BYTES * e.count)
        rr = arena.slice(e.offset, e.count).copy()
        node = e.node
        if be.is_leaf[node]:
            cnt = int(be.prim_count[node])
            if not be.inline[node]:
                stats.record("triangles", be.tri_bytes * cnt)
            stats.record("triTests", cnt * e.count)
            if cnt == 0:
                continue
            s0 = int(be.prim_start[node])
            r = np.repeat(rr, cnt)
            pos = np.tile(np.arange(s0, s0 + cnt), e.count)
            idx, dist, u, v = be.tri(r, pos)
            improved = st.offer(r, pos, idx, dist, u, v)
            stats.record("rayStores", M.HIT_RECORD_BYTES * len(improved))
            continue
        kids = []
        for s in range(W):
            c = int(be.children[node, s])
            if c < 0:
                continue
            stats.record("boxTests", e.count)
            h, tn = be.box(rr, be.box_lo[node, s][None], be.box_hi[node, s][None])
            h &= tn <= st.tbox[rr]
            if not h.any():
                continue
            sel = rr[h]
            o2 = arena.append(sel)
            stats.record("rayLists", M.LIST_ELEM_BYTES * len(sel))
            kids.append((tn[h].min(), s, StreamEntry(c, o2, len(sel), 1 << s)))
        # nearest (by the closest ray in the list) on top
        kids.sort(key=lambda k: (k[0], k[1]))
        for _, _, entry in reversed(kids):
            stack.append(entry)
            stats.record("rsStack", M.RS_ENTRY_BYTES)
    return st


def _trace(engine, rays, tree, metrics, **kw) -> Hits:
    be = _Backend(tree, rays, **kw)
    stats = metrics if metrics is not None else M.TrafficStats()
    if be.n == 0:
        raise ValueError("need at least one ray")
    st = engine(be, stats)
    return be.finish(st)


def traverse_single(rays, tree, metrics: M.TrafficStats | None = None, **kw) -> Hits:
    """Per-ray stack traversal of every ray (a single ray is a batch of one).

    ``rays`` is a :class:`Rays` batch, or for compressed trees an array of
    ``RAY_DTYPE`` records.  Extra keywords: ``space`` (a FixedSpace),
    ``two_sided``, and the ray-format fields ``R_org``/``Q_org``/``Q_dir``.
    """
    return _trace(_run_sr, rays, tree, metrics, **kw)


def traverse_stream(rays, tree, metrics: M.TrafficStats | None = None, **kw) -> Hits:
    """Shared-stack stream traversal; same arguments as :func:`traverse_single`."""
    return _trace(_run_rs, rays, tree, metrics, **kw)


def traverse(rays, tree, mode: str, metrics=None, **kw) -> Hits:
    if mode == "SR":
        return traverse_single(rays, tree, metrics, **kw)
    if mode == "RS":
        return traverse_stream(rays, tree, metrics, **kw)
    raise ValueError(f"unknown traversal mode {mode!r}")


def brute_force(rays, tree, chunk: int = 1 << 18, **kw) -> Hits:
    """Closest hit by testing every triangle, with the tree's own kernel."""
    be = _Backend(tree, rays, **kw)
    st = _State(be.n, be)
    T = len(be.tA)
    per = max(1, chunk // max(T, 1))
    for s in range(0, be.n, per):
        rr = np.arange(s, min(s + per, be.n))
        r = np.repeat(rr, T)
        pos = np.tile(np.arange(T), len(rr))
        idx, dist, u, v = be.tri(r, pos)
        st.offer(r, pos, idx, dist, u, v)
    return be.finish(st)
