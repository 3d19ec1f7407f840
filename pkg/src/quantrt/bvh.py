"""Wide BVH construction and the compressed (8-bit local grid) node format.

Pipeline::

    tris --build_binary_sah--> BinaryBVH --collapse_to_width--> WideBVH
         --compress--> CompressedBVH

``WideBVH`` is the uncompressed float representation (node records of 64/116/228
bytes, 36-byte triangles).  ``CompressedBVH`` stores per-child 8-bit bounds in a
per-node frame (36/56/96 bytes) and 9-byte triangles on one global leaf grid.
Node indices double as the 32-bit child offsets of the serialized records.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .quantize import (
    EMPTY_HI,
    EMPTY_LO,
    GRID_MAX,
    MIN_SCALE_EXP,
    ORIGIN_LIMIT,
    OriginOverflow,
    QuantizationError,
    broadcast_leaf_scales,
    compute_scale,
    grid_ceil,
    grid_floor,
    propagate_scales_up,
)

WIDTHS = (2, 4, 8)
NODE_SIZES = {2: (64, 36), 4: (116, 56), 8: (228, 96)}
TRI_BYTES_U = 36
TRI_BYTES_C = 9

NODE_INNER = 0
NODE_LEAF = 1
NODE_LEAF_INLINE = 2

SAH_BINS = 16
MAX_LEAF_SIZE = 4
COST_TRAVERSAL = 1.0
COST_INTERSECT = 1.0


def node_byte_size(width: int, compressed: bool) -> int:
    if width not in NODE_SIZES:
        raise ValueError(f"unsupported BVH width {width}; expected one of {WIDTHS}")
    return NODE_SIZES[width][1 if compressed else 0]


def triangle_byte_size(compressed: bool) -> int:
    return TRI_BYTES_C if compressed else TRI_BYTES_U


def union_bytes(width: int) -> int:
    return 4 * width


def inline_capacity(width: int) -> int:
    """Triangles that fit the leaf union next to a primitive offset and a count byte."""
    return (union_bytes(width) - 5) // TRI_BYTES_C


def node_dtype(width: int, compressed: bool) -> np.dtype:
    """Structured dtype whose itemsize is exactly ``node_byte_size``."""
    W = width
    coord = "u1" if compressed else "<f4"
    csize = 1 if compressed else 4
    names, formats, offsets = [], [], []
    off = 0
    for nm in ("lo_x", "hi_x", "lo_y", "hi_y", "lo_z", "hi_z"):
        names.append(nm)
        formats.append((coord, (W,)))
        offsets.append(off)
        off += csize * W
    names.append("union")
    formats.append(("u1", (union_bytes(W),)))
    offsets.append(off)
    off += union_bytes(W)
    if compressed:
        names += ["origin", "e"]
        formats += [("<i4", (3,)), ("i1", (3,))]
        offsets += [off, off + 12]
        off += 15
    names.append("type")
    formats.append("u1")
    offsets.append(off)
    return np.dtype(
        {"names": names, "formats": formats, "offsets": offsets, "itemsize": node_byte_size(W, compressed)}
    )


# ---------------------------------------------------------------------------
# binary SAH builder


def _area(lo, hi):
    d = np.maximum(hi - lo, 0.0)
    return 2.0 * (d[..., 0] * d[..., 1] + d[..., 1] * d[..., 2] + d[..., 2] * d[..., 0])


@dataclass
class BinaryBVH:
    lo: np.ndarray  # (n, 3) float64
    hi: np.ndarray
    left: np.ndarray  # (n,) int64, -1 for leaves
    right: np.ndarray
    start: np.ndarray  # leaf triangle range into ``order``
    count: np.ndarray
    order: np.ndarray  # builder triangle order -> mesh triangle id

    @property
    def num_nodes(self) -> int:
        return len(self.left)

    def is_leaf(self, n: int) -> bool:
        return self.left[n] < 0


def build_binary_sah(tris, max_leaf_size: int = MAX_LEAF_SIZE, bins: int = SAH_BINS) -> BinaryBVH:
    """Top-down binned SAH build over a (n, 3, 3) triangle array."""
    tris = np.asarray(tris, dtype=np.float64)
    if tris.ndim != 3 or tris.shape[1:] != (3, 3) or len(tris) == 0:
        raise ValueError("need a non-empty (n, 3, 3) triangle array")
    if not np.all(np.isfinite(tris)):
        raise ValueError("triangle coordinates must be finite")
    tlo = tris.min(axis=1)
    thi = tris.max(axis=1)
    cen = 0.5 * (tlo + thi)
    order = np.arange(len(tris))

    lo, hi, left, right, start, count = [], [], [], [], [], []

    def new_node(s, e):
        idx = order[s:e]
        lo.append(tlo[idx].min(axis=0))
        hi.append(thi[idx].max(axis=0))
        left.append(-1)
        right.append(-1)
        start.append(s)
        count.append(e - s)
        return len(left) - 1

    root = new_node(0, len(tris))
    stack = [root]
    while stack:
        n = stack.pop()
        s, cnt = start[n], count[n]
        e = s + cnt
        if cnt == 1:
            continue
        idx = order[s:e]
        c = cen[idx]
        cmin, cmax = c.min(axis=0), c.max(axis=0)
        parent_area = _area(lo[n], hi[n])
        if parent_area <= 0.0:
            parent_area = 1.0
        best = (math.inf, -1, -1)
        for axis in range(3):
            ext = cmax[axis] - cmin[axis]
            if ext <= 0.0:
                continue
            b = np.clip(((c[:, axis] - cmin[axis]) * (bins / ext)).astype(np.int64), 0, bins - 1)
            bcnt = np.bincount(b, minlength=bins)
            blo = np.full((bins, 3), np.inf)
            bhi = np.full((bins, 3), -np.inf)
            np.minimum.at(blo, b, tlo[idx])
            np.maximum.at(bhi, b, thi[idx])
            llo = np.minimum.accumulate(blo, axis=0)
            lhi = np.maximum.accumulate(bhi, axis=0)
            rlo = np.minimum.accumulate(blo[::-1], axis=0)[::-1]
            rhi = np.maximum.accumulate(bhi[::-1], axis=0)[::-1]
            ln = np.cumsum(bcnt)
            rn = cnt - ln
            for k in range(bins - 1):
                if ln[k] == 0 or rn[k] == 0:
                    continue
                cost = COST_TRAVERSAL + COST_INTERSECT * (
                    _area(llo[k], lhi[k]) * ln[k] + _area(rlo[k + 1], rhi[k + 1]) * rn[k]
                ) / parent_area
                if cost < best[0]:
                    best = (cost, axis, k)
        leaf_cost = COST_INTERSECT * cnt
        if best[1] < 0:
            if cnt <= max_leaf_size:
                continue
            # all centroids coincide: split the range in half, keeping order
            mid = s + cnt // 2
        else:
            if cnt <= max_leaf_size and leaf_cost <= best[0]:
                continue
            cost, axis, k = best
            ext = cmax[axis] - cmin[axis]
            b = np.clip(((c[:, axis] - cmin[axis]) * (bins / ext)).astype(np.int64), 0, bins - 1)
            goes_left = b <= k
            order[s:e] = np.concatenate([idx[goes_left], idx[~goes_left]])
            mid = s + int(goes_left.sum())
        l = new_node(s, mid)
        r = new_node(mid, e)
        left[n], right[n] = l, r
        count[n] = 0
        stack.append(r)
        stack.append(l)

    return BinaryBVH(
        lo=np.array(lo),
        hi=np.array(hi),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        start=np.array(start, dtype=np.int64),
        count=np.array(count, dtype=np.int64),
        order=order,
    )


# ---------------------------------------------------------------------------
# wide (uncompressed) BVH


@dataclass
class WideBVH:
    """Uncompressed W-wide BVH; leaves are separate node records."""

    width: int
    is_leaf: np.ndarray  # (n,) bool
    children: np.ndarray  # (n, W) int64, -1 = empty slot
    child_lo: np.ndarray  # (n, W, 3) float32; empty slots +inf
    child_hi: np.ndarray  # (n, W, 3) float32; empty slots -inf
    node_lo: np.ndarray  # (n, 3) float64 bounds of each node's content
    node_hi: np.ndarray
    prim_start: np.ndarray  # (n,) leaf range into the triangle pool
    prim_count: np.ndarray
    tris: np.ndarray  # (ntri, 3, 3) float32 triangle pool, leaf order
    prim_index: np.ndarray  # pool position -> mesh triangle id
    compressed = False

    @property
    def num_nodes(self) -> int:
        return len(self.is_leaf)

    @property
    def num_tris(self) -> int:
        return len(self.tris)

    @property
    def node_bytes(self) -> int:
        return node_byte_size(self.width, False)

    @property
    def tri_bytes(self) -> int:
        return TRI_BYTES_U

    def node_pool_bytes(self) -> int:
        return self.num_nodes * self.node_bytes

    def triangle_pool_bytes(self) -> int:
        return self.num_tris * self.tri_bytes

    def depth(self) -> int:
        return _depth(self.children)

    def child_lists(self) -> list[list[int]]:
        return [[int(c) for c in row if c >= 0] for row in self.children]


def _depth(children) -> int:
    best = 0
    stack = [(0, 1)]
    while stack:
        n, d = stack.pop()
        best = max(best, d)
        for c in children[n]:
            if c >= 0:
                stack.append((int(c), d + 1))
    return best


def collapse_to_width(tree: BinaryBVH, tris, width: int) -> WideBVH:
    """Greedy collapse: expand the largest-area inner child until W slots are used."""
    if width not in WIDTHS:
        raise ValueError(f"unsupported BVH width {width}; expected one of {WIDTHS}")
    tris = np.asarray(tris)
    area = _area(tree.lo, tree.hi)

    # wide nodes in DFS preorder; each entry references a binary node
    wide_src: list[int] = []
    wide_children: list[list[int]] = []
    stack = [(0, -1, -1)]  # (binary node, wide parent, slot)
    while stack:
        b, parent, slot = stack.pop()
        w = len(wide_src)
        wide_src.append(b)
        wide_children.append([])
        if parent >= 0:
            wide_children[parent][slot] = w
        if tree.is_leaf(b):
            continue
        kids = [int(tree.left[b]), int(tree.right[b])]
        while len(kids) < width:
            inner = [i for i, k in enumerate(kids) if not tree.is_leaf(k)]
            if not inner:
                break
            i = max(inner, key=lambda j: (area[kids[j]], -j))
            k = kids[i]
            kids[i : i + 1] = [int(tree.left[k]), int(tree.right[k])]
        wide_children[w] = [-1] * len(kids)
        for slot_i in range(len(kids) - 1, -1, -1):
            stack.append((kids[slot_i], w, slot_i))

    n = len(wide_src)
    W = width
    is_leaf = np.array([tree.is_leaf(b) for b in wide_src])
    children = np.full((n, W), -1, dtype=np.int64)
    child_lo = np.full((n, W, 3), np.inf, dtype=np.float32)
    child_hi = np.full((n, W, 3), -np.inf, dtype=np.float32)
    for w, kids in enumerate(wide_children):
        for s, c in enumerate(kids):
            children[w, s] = c
            child_lo[w, s] = tree.lo[wide_src[c]]
            child_hi[w, s] = tree.hi[wide_src[c]]
    node_lo = tree.lo[wide_src]
    node_hi = tree.hi[wide_src]

    # triangle pool: leaves appended in wide preorder
    prim_start = np.zeros(n, dtype=np.int64)
    prim_count = np.zeros(n, dtype=np.int64)
    pool = []
    for w in range(n):
        if is_leaf[w]:
            b = wide_src[w]
            ids = tree.order[tree.start[b] : tree.start[b] + tree.count[b]]
            prim_start[w] = sum(len(p) for p in pool)
            prim_count[w] = len(ids)
            pool.append(ids)
    prim_index = np.concatenate(pool).astype(np.int64)
    return WideBVH(
        width=W,
        is_leaf=is_leaf,
        children=children,
        child_lo=child_lo,
        child_hi=child_hi,
        node_lo=node_lo,
        node_hi=node_hi,
        prim_start=prim_start,
        prim_count=prim_count,
        tris=tris[prim_index].astype(np.float32),
        prim_index=prim_index,
    )


def build_wide(tris, width: int, max_leaf_size: int = MAX_LEAF_SIZE) -> WideBVH:
    tris32 = np.asarray(tris, dtype=np.float32)
    return collapse_to_width(build_binary_sah(tris32.astype(np.float64), max_leaf_size), tris32, width)


def serialize_wide(tree: WideBVH) -> bytes:
    rec = np.zeros(tree.num_nodes, dtype=node_dtype(tree.width, False))
    for a, ax in enumerate("xyz"):
        rec["lo_" + ax] = tree.child_lo[:, :, a]
        rec["hi_" + ax] = tree.child_hi[:, :, a]
    rec["union"] = _unions(tree.is_leaf, tree.children, tree.prim_start, tree.prim_count, tree.width)
    rec["type"] = np.where(tree.is_leaf, NODE_LEAF, NODE_INNER)
    return rec.tobytes()


def _unions(is_leaf, children, prim_start, prim_count, W, inline=None, qtris=None):
    out = np.zeros((len(is_leaf), union_bytes(W)), dtype=np.uint8)
    for n in range(len(is_leaf)):
        if not is_leaf[n]:
            out[n] = np.frombuffer(children[n].astype("<i4").tobytes(), dtype=np.uint8)
        elif inline is not None and inline[n]:
            s, c = int(prim_start[n]), int(prim_count[n])
            b = np.uint32(s).tobytes() + bytes([c]) + qtris[s : s + c].tobytes()
            out[n, : len(b)] = np.frombuffer(b, dtype=np.uint8)
        else:
            b = np.array([prim_start[n], prim_count[n]], dtype="<u4").tobytes()
            out[n, :8] = np.frombuffer(b, dtype=np.uint8)
    return out


# ---------------------------------------------------------------------------
# compressed BVH


@dataclass
class CompressedBVH:
    """W-wide BVH with 8-bit child bounds in per-node frames and 9-byte triangles.

    ``box_lo_c``/``box_hi_c`` and ``tri_c`` are the same data lifted into the
    common integer space (units of the global leaf cell, ``2**e_leaf`` per
    axis) that intersection runs in; they are derived, not stored.
    """

    width: int
    is_leaf: np.ndarray
    children: np.ndarray
    qlo: np.ndarray  # (n, W, 3) uint8
    qhi: np.ndarray
    origin: np.ndarray  # (n, 3) int64, 32-bit range
    exp: np.ndarray  # (n, 3) int64, int8 range
    prim_start: np.ndarray
    prim_count: np.ndarray
    qtris: np.ndarray  # (ntri, 3, 3) uint8 in leaf frames
    prim_index: np.ndarray
    e_leaf: tuple[int, int, int]
    inline: np.ndarray  # (n,) bool, leaves stored inside the node record
    stats: dict = field(default_factory=dict)
    box_lo_c: np.ndarray = None
    box_hi_c: np.ndarray = None
    tri_c: np.ndarray = None
    compressed = True

    @property
    def num_nodes(self) -> int:
        return len(self.is_leaf)

    @property
    def num_tris(self) -> int:
        return len(self.qtris)

    @property
    def node_bytes(self) -> int:
        return node_byte_size(self.width, True)

    @property
    def tri_bytes(self) -> int:
        return TRI_BYTES_C

    def node_pool_bytes(self) -> int:
        return self.num_nodes * self.node_bytes

    def triangle_pool_bytes(self) -> int:
        return int((~self._inline_tri_mask()).sum()) * self.tri_bytes

    def _inline_tri_mask(self):
        m = np.zeros(self.num_tris, dtype=bool)
        for n in np.nonzero(self.inline)[0]:
            m[self.prim_start[n] : self.prim_start[n] + self.prim_count[n]] = True
        return m

    def depth(self) -> int:
        return _depth(self.children)

    def child_lists(self) -> list[list[int]]:
        return [[int(c) for c in row if c >= 0] for row in self.children]

    def leaf_cell(self) -> tuple[float, float, float]:
        return tuple(math.ldexp(1.0, int(e)) for e in self.e_leaf)

    def to_world(self, p_common) -> np.ndarray:
        """Common-space coordinates (float) to world space."""
        return np.ldexp(np.asarray(p_common, dtype=np.float64), np.array(self.e_leaf))


def _as_int_array(values) -> np.ndarray:
    """int64 if every value fits comfortably, else an object array of Python ints."""
    arr = np.array(values, dtype=object)
    flat = arr.ravel()
    big = max((abs(int(v)).bit_length() for v in flat), default=0)
    if big <= 62:
        return arr.astype(np.int64)
    return arr


def _fits(hi_real: float, origin: int, e: int) -> bool:
    return grid_ceil(hi_real, e) - origin <= GRID_MAX


def compress(tree: WideBVH, inline_triangles: bool = False, min_exp: int = MIN_SCALE_EXP) -> CompressedBVH:
    """Two-pass compression of a float wide BVH.

    Pass one picks each node's natural exponent from its own extent.  Pass two
    broadcasts the coarsest leaf exponent to every leaf, raises inner nodes to
    at least their children's exponents, and re-derives frames top-down; a
    node whose content no longer fits 255 cells from its (parent-snapped)
    origin is coarsened and the pass repeats until nothing changes.
    """
    n, W = tree.num_nodes, tree.width
    lo = np.asarray(tree.node_lo, dtype=np.float64)
    hi = np.asarray(tree.node_hi, dtype=np.float64)
    kids = tree.child_lists()
    leaves = np.nonzero(tree.is_leaf)[0]

    natural = np.array(
        [[compute_scale(lo[i, a], hi[i, a], min_exp) for a in range(3)] for i in range(n)], dtype=np.int64
    )
    e = natural.copy()
    origin = np.zeros((n, 3), dtype=object)
    passes = 0
    while True:
        passes += 1
        e[leaves] = broadcast_leaf_scales(e[leaves])
        e = propagate_scales_up(kids, e)
        changed = False
        for a in range(3):
            o = grid_floor(lo[0, a], int(e[0, a]))
            while not _fits(hi[0, a], o, int(e[0, a])):
                e[0, a] += 1
                o = grid_floor(lo[0, a], int(e[0, a]))
                changed = True
            origin[0, a] = o
        stack = [0]
        while stack:
            p = stack.pop()
            for c in kids[p]:
                for a in range(3):
                    ep, ec = int(e[p, a]), int(e[c, a])
                    q = grid_floor(lo[c, a], ep) - origin[p, a]
                    oc = (origin[p, a] + q) << (ep - ec)
                    while not _fits(hi[c, a], oc, ec):
                        ec += 1
                        oc = (origin[p, a] + q) << (ep - ec)
                        changed = True
                    e[c, a] = ec
                    origin[c, a] = oc
                stack.append(c)
        if not changed:
            break

    for v in origin.ravel():
        if not -ORIGIN_LIMIT <= v < ORIGIN_LIMIT:
            raise OriginOverflow(f"frame origin {v} exceeds 32 bits; scene too large for its leaf precision")
    if e.min() < -128 or e.max() > 127:
        raise QuantizationError("scale exponent outside int8 range")
    e_leaf = tuple(int(x) for x in e[leaves[0]])

    qlo = np.full((n, W, 3), EMPTY_LO, dtype=np.uint8)
    qhi = np.full((n, W, 3), EMPTY_HI, dtype=np.uint8)
    for p in range(n):
        for s in range(W):
            c = tree.children[p, s]
            if c < 0:
                continue
            for a in range(3):
                ep = int(e[p, a])
                l = grid_floor(float(tree.child_lo[p, s, a]), ep) - origin[p, a]
                h = grid_ceil(float(tree.child_hi[p, s, a]), ep) - origin[p, a]
                if not 0 <= l <= h <= GRID_MAX:
                    raise QuantizationError(f"child box out of frame at node {p} slot {s}")
                qlo[p, s, a], qhi[p, s, a] = l, h

    # triangles on the shared leaf grid, nearest with ties toward +inf
    tris = tree.tris.astype(np.float64)
    el = np.array(e_leaf)
    x = np.ldexp(tris, -el)
    f = np.floor(x)
    g = f + (x - f >= 0.5)
    qtris = np.zeros(tris.shape, dtype=np.uint8)
    for leaf in leaves:
        s, cnt = tree.prim_start[leaf], tree.prim_count[leaf]
        o = np.array([int(v) for v in origin[leaf]], dtype=np.float64)
        q = g[s : s + cnt] - o
        if q.min() < 0 or q.max() > GRID_MAX:
            raise QuantizationError(f"triangle outside leaf frame at node {leaf}")
        qtris[s : s + cnt] = q.astype(np.uint8)

    inline = np.zeros(n, dtype=bool)
    if inline_triangles:
        cap = inline_capacity(W)
        inline = tree.is_leaf & (tree.prim_count <= cap)

    out = CompressedBVH(
        width=W,
        is_leaf=tree.is_leaf.copy(),
        children=tree.children.copy(),
        qlo=qlo,
        qhi=qhi,
        origin=np.array(origin.tolist(), dtype=np.int64),
        exp=e.astype(np.int64),
        prim_start=tree.prim_start.copy(),
        prim_count=tree.prim_count.copy(),
        qtris=qtris,
        prim_index=tree.prim_index.copy(),
        e_leaf=e_leaf,
        inline=inline,
    )
    out.stats = {
        "passes": passes,
        "natural_leaf_exp_min": tuple(int(v) for v in natural[leaves].min(axis=0)),
        "natural_leaf_exp_max": tuple(int(v) for v in natural[leaves].max(axis=0)),
        "e_leaf": e_leaf,
        "e_root": tuple(int(v) for v in e[0]),
    }
    lift_common(out)
    return out


def lift_common(t: CompressedBVH) -> None:
    """Fill the derived common-space arrays of a compressed tree."""
    n, W = t.num_nodes, t.width
    el = t.e_leaf
    blo = np.zeros((n, W, 3), dtype=object)
    bhi = np.zeros((n, W, 3), dtype=object)
    for p in range(n):
        for a in range(3):
            sh = int(t.exp[p, a]) - el[a]
            o = int(t.origin[p, a])
            for s in range(W):
                blo[p, s, a] = (o + int(t.qlo[p, s, a])) << sh
                bhi[p, s, a] = (o + int(t.qhi[p, s, a])) << sh
    t.box_lo_c = _as_int_array(blo)
    t.box_hi_c = _as_int_array(bhi)
    tri = np.zeros(t.qtris.shape, dtype=object)
    for leaf in np.nonzero(t.is_leaf)[0]:
        s, cnt = int(t.prim_start[leaf]), int(t.prim_count[leaf])
        for a in range(3):
            sh = int(t.exp[leaf, a]) - el[a]
            o = int(t.origin[leaf, a]) << sh
            tri[s : s + cnt, :, a] = (t.qtris[s : s + cnt, :, a].astype(object) << sh) + o
    t.tri_c = _as_int_array(tri)


def serialize_compressed(tree: CompressedBVH) -> bytes:
    rec = np.zeros(tree.num_nodes, dtype=node_dtype(tree.width, True))
    for a, ax in enumerate("xyz"):
        rec["lo_" + ax] = tree.qlo[:, :, a]
        rec["hi_" + ax] = tree.qhi[:, :, a]
    rec["union"] = _unions(
        tree.is_leaf, tree.children, tree.prim_start, tree.prim_count, tree.width, tree.inline, tree.qtris
    )
    rec["origin"] = tree.origin
    rec["e"] = tree.exp
    rec["type"] = np.where(tree.inline, NODE_LEAF_INLINE, np.where(tree.is_leaf, NODE_LEAF, NODE_INNER))
    return rec.tobytes()


def deserialize_nodes(data: bytes, width: int, compressed: bool) -> np.ndarray:
    dt = node_dtype(width, compressed)
    if len(data) % dt.itemsize:
        raise ValueError("byte length is not a whole number of node records")
    return np.frombuffer(data, dtype=dt)


def serialize_triangles(tree) -> bytes:
    if tree.compressed:
        return tree.qtris.astype(np.uint8).tobytes()
    return tree.tris.astype("<f4").tobytes()


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    node: int
    slot: int
    reason: str


def validate_hierarchy(t: CompressedBVH) -> list[Violation]:
    """Exact integer audit of a compressed tree; returns violations (empty = valid).

    Checked per non-empty child slot, reporting the first failure only: 8-bit
    range and lo <= hi, scale monotonicity, frame origin consistency, and
    containment of the child's content (its own child boxes, or its
    triangles) in the slot box.  All leaves must share one scale.  Empty
    slots (child offset -1) are never reported.
    """
    out: list[Violation] = []
    n = t.num_nodes
    leaves = np.nonzero(t.is_leaf)[0]
    if len({tuple(int(v) for v in t.exp[l]) for l in leaves}) > 1:
        out.append(Violation(int(leaves[0]), -1, "leaf scales differ"))
    el = [int(v) for v in t.exp[leaves[0]]] if len(leaves) else [0, 0, 0]

    def common(p, coord, a):
        return (int(t.origin[p, a]) + int(coord)) << (int(t.exp[p, a]) - el[a])

    for p in range(n):
        if t.is_leaf[p]:
            continue
        for s in range(t.width):
            c = int(t.children[p, s])
            if c < 0:
                continue
            reason = None
            for a in range(3):
                l, h = int(t.qlo[p, s, a]), int(t.qhi[p, s, a])
                ep, ec = int(t.exp[p, a]), int(t.exp[c, a])
                if not (0 <= l <= h <= GRID_MAX):
                    reason = f"bad 8-bit interval [{l}, {h}] on axis {a}"
                elif ec > ep:
                    reason = f"child scale {ec} coarser than parent {ep} on axis {a}"
                elif int(t.origin[c, a]) != (int(t.origin[p, a]) + l) << (ep - ec):
                    reason = f"child origin inconsistent on axis {a}"
                if reason:
                    break
            if reason is None:
                slo = [common(p, t.qlo[p, s, a], a) for a in range(3)]
                shi = [common(p, t.qhi[p, s, a], a) for a in range(3)]
                if t.is_leaf[c]:
                    st, cnt = int(t.prim_start[c]), int(t.prim_count[c])
                    for k in range(st, st + cnt):
                        for v in range(3):
                            for a in range(3):
                                x = common(c, t.qtris[k, v, a], a)
                                if not slo[a] <= x <= shi[a]:
                                    reason = f"triangle {k} outside leaf box on axis {a}"
                else:
                    for s2 in range(t.width):
                        if t.children[c, s2] < 0:
                            continue
                        for a in range(3):
                            if (
                                common(c, t.qlo[c, s2, a], a) < slo[a]
                                or common(c, t.qhi[c, s2, a], a) > shi[a]
                            ):
                                reason = f"grandchild slot {s2} escapes slot box on axis {a}"
            if reason:
                out.append(Violation(p, s, reason))
    return out


def conservativeness_violations(c: CompressedBVH, w: WideBVH) -> list[Violation]:
    """Slots whose dequantized box fails to enclose the float box it encodes."""
    out = []
    for p in range(c.num_nodes):
        for s in range(c.width):
            if c.children[p, s] < 0:
                continue
            for a in range(3):
                e = int(c.exp[p, a])
                lo = math.ldexp(int(c.origin[p, a]) + int(c.qlo[p, s, a]), e)
                hi = math.ldexp(int(c.origin[p, a]) + int(c.qhi[p, s, a]), e)
                if lo > float(w.child_lo[p, s, a]) or hi < float(w.child_hi[p, s, a]):
                    out.append(Violation(p, s, f"dequantized box shrinks on axis {a}"))
                    break
    return out
