import numpy as np
import pytest

from conftest import compressed, random_soup, wide
from quantrt.bvh import (
    NODE_SIZES,
    BinaryBVH,
    Violation,
    build_binary_sah,
    build_wide,
    collapse_to_width,
    compress,
    conservativeness_violations,
    deserialize_nodes,
    inline_capacity,
    node_byte_size,
    node_dtype,
    serialize_compressed,
    serialize_triangles,
    serialize_wide,
    triangle_byte_size,
    validate_hierarchy,
)

ONE_TRI = np.array([[[0, 0, 0], [1, 0, 0], [0, 1, 0.5]]], dtype=np.float32)


def leaf_sets(tree):
    """Mesh triangle ids reachable from the root, as a sorted list."""
    out, stack = [], [0]
    while stack:
        n = stack.pop()
        if tree.is_leaf[n]:
            s, c = int(tree.prim_start[n]), int(tree.prim_count[n])
            out.extend(int(i) for i in tree.prim_index[s : s + c])
        else:
            stack.extend(int(c) for c in tree.children[n] if c >= 0)
    return sorted(out)


# ---------------------------------------------------------------------------
# sizes


@pytest.mark.parametrize("width", [2, 4, 8])
def test_node_sizes(width):
    u, c = NODE_SIZES[width]
    assert node_byte_size(width, False) == u
    assert node_byte_size(width, True) == c
    assert node_dtype(width, False).itemsize == u
    assert node_dtype(width, True).itemsize == c


def test_node_size_examples():
    assert node_byte_size(8, False) == 228
    assert node_byte_size(8, True) == 96
    assert node_byte_size(2, True) == 36
    with pytest.raises(ValueError):
        node_byte_size(3, True)


def test_compressed_node_saves_over_57_percent_at_width_8():
    assert 1 - 96 / 228 > 0.57


@pytest.mark.parametrize("width", [2, 4, 8])
def test_serialized_records_are_byte_exact(width):
    w = wide("sphere:2", width)
    c = compressed("sphere:2", width)
    assert len(serialize_wide(w)) == w.num_nodes * node_byte_size(width, False)
    assert len(serialize_compressed(c)) == c.num_nodes * node_byte_size(width, True)
    recs = deserialize_nodes(serialize_compressed(c), width, True)
    assert len(recs) == c.num_nodes
    assert len(serialize_triangles(c)) == 9 * c.num_tris
    assert len(serialize_triangles(w)) == 36 * w.num_tris
    with pytest.raises(ValueError):
        deserialize_nodes(b"\0" * 5, width, True)


@pytest.mark.parametrize("width", [2, 4, 8])
def test_single_leaf_scene(width):
    c = compress(build_wide(ONE_TRI, width))
    assert c.num_nodes == 1 and c.is_leaf[0]
    assert len(serialize_compressed(c)) == {8: 96, 4: 56, 2: 36}[width]


def test_triangle_pool_ratio():
    c = compressed("grid:6", 4)
    w = wide("grid:6", 4)
    assert c.triangle_pool_bytes() == 9 * c.num_tris
    assert w.triangle_pool_bytes() == 36 * w.num_tris
    assert c.triangle_pool_bytes() / w.triangle_pool_bytes() == 0.25


def test_large_scene_triangle_pool_sizes():
    n = 262_144
    mib = 1 << 20
    assert n * triangle_byte_size(False) / mib == 9.0
    assert n * triangle_byte_size(True) / mib == 2.25


def test_inline_capacity():
    assert inline_capacity(8) == 3
    assert inline_capacity(4) == 1
    assert inline_capacity(2) == 0


# ---------------------------------------------------------------------------
# builder and collapse


def test_single_triangle_build():
    b = build_binary_sah(ONE_TRI)
    assert b.num_nodes == 1 and b.is_leaf(0)
    assert np.array_equal(b.lo[0], ONE_TRI[0].min(axis=0))
    assert np.array_equal(b.hi[0], ONE_TRI[0].max(axis=0))


def test_two_disjoint_triangles_split():
    tris = np.concatenate([ONE_TRI, ONE_TRI + 100])
    b = build_binary_sah(tris)
    assert b.num_nodes == 3
    assert not b.is_leaf(0)
    assert b.is_leaf(int(b.left[0])) and b.is_leaf(int(b.right[0]))


def test_build_rejects_bad_input():
    with pytest.raises(ValueError):
        build_binary_sah(np.zeros((0, 3, 3)))
    bad = ONE_TRI.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        build_binary_sah(bad)


def test_random_soup_containment():
    tris = random_soup(10_000, seed=11).astype(np.float64)
    b = build_binary_sah(tris)
    seen = np.zeros(len(tris), dtype=int)
    visited = set()
    stack = [0]
    while stack:
        n = stack.pop()
        assert n not in visited
        visited.add(n)
        if b.is_leaf(n):
            assert b.count[n] <= 4
            ids = b.order[b.start[n] : b.start[n] + b.count[n]]
            seen[ids] += 1
            t = tris[ids]
            assert np.all(t.min(axis=1) >= b.lo[n]) and np.all(t.max(axis=1) <= b.hi[n])
        else:
            for c in (int(b.left[n]), int(b.right[n])):
                assert np.all(b.lo[c] >= b.lo[n]) and np.all(b.hi[c] <= b.hi[n])
                stack.append(c)
    assert np.all(seen == 1)


def _complete_binary_depth3():
    # 7 inner nodes, 8 leaves, one triangle each, laid out along x
    tris = np.stack([ONE_TRI[0] + [3 * i, 0, 0] for i in range(8)]).astype(np.float32)
    lo, hi, left, right, start, count = [], [], [], [], [], []

    def node(a, b):
        i = len(lo)
        lo.append(tris[a:b].reshape(-1, 3).min(axis=0))
        hi.append(tris[a:b].reshape(-1, 3).max(axis=0))
        left.append(-1)
        right.append(-1)
        start.append(a)
        count.append(b - a)
        if b - a > 1:
            m = (a + b) // 2
            left[i] = node(a, m)
            right[i] = node(m, b)
            count[i] = 0
        return i

    node(0, 8)
    arr = lambda x, dt=np.int64: np.asarray(x, dtype=dt)  # noqa: E731
    b = BinaryBVH(arr(lo, float), arr(hi, float), arr(left), arr(right), arr(start), arr(count), np.arange(8))
    return b, tris


def test_perfect_collapse_to_width_8():
    b, tris = _complete_binary_depth3()
    w = collapse_to_width(b, tris, 8)
    assert w.num_nodes == 9
    assert not w.is_leaf[0]
    assert all(w.is_leaf[int(c)] for c in w.children[0])


def test_width_2_is_isomorphic():
    b = build_binary_sah(random_soup(300, seed=4))
    w = collapse_to_width(b, random_soup(300, seed=4), 2)
    assert w.num_nodes == b.num_nodes

    def shape_b(n):
        if b.is_leaf(n):
            return ("leaf", int(b.count[n]))
        return (shape_b(int(b.left[n])), shape_b(int(b.right[n])))

    def shape_w(n):
        if w.is_leaf[n]:
            return ("leaf", int(w.prim_count[n]))
        return tuple(shape_w(int(c)) for c in w.children[n])

    # collapse may reorder the two children; compare as unordered pairs
    def canon(s):
        if s[0] == "leaf":
            return s
        return tuple(sorted((canon(s[0]), canon(s[1])), key=repr))

    assert canon(shape_b(0)) == canon(shape_w(0))


@pytest.mark.parametrize("width", [2, 4, 8])
def test_collapse_keeps_leaf_set(width):
    tris = random_soup(2000, seed=width)
    w = build_wide(tris, width)
    assert leaf_sets(w) == list(range(2000))
    with pytest.raises(ValueError):
        collapse_to_width(build_binary_sah(tris), tris, 3)


# ---------------------------------------------------------------------------
# compression and validation


@pytest.mark.parametrize("width", [2, 4, 8])
@pytest.mark.parametrize("spec", ["cornell", "sphere:3", "grid:8"])
def test_compressed_trees_validate(spec, width):
    c = compressed(spec, width)
    assert validate_hierarchy(c) == []
    assert conservativeness_violations(c, wide(spec, width)) == []


@pytest.mark.parametrize("width", [4, 8])
def test_random_soup_validates(width):
    w = build_wide(random_soup(3000, seed=20 + width, spread=50.0), width)
    c = compress(w)
    assert validate_hierarchy(c) == []
    assert conservativeness_violations(c, w) == []
    assert leaf_sets(c) == leaf_sets(w)
    assert sorted(c.prim_index.tolist()) == list(range(3000))


def test_injected_fault_gives_one_violation():
    c = compress(build_wide(random_soup(500, seed=3), 4))
    hits = np.argwhere((c.children >= 0)[:, :, None] & (c.qlo == 0))
    p, s, a = (int(x) for x in hits[0])
    c.qlo[p, s, a] = 255  # 0 decremented with wrap-around
    v = validate_hierarchy(c)
    assert len(v) == 1
    assert isinstance(v[0], Violation) and (v[0].node, v[0].slot) == (p, s)


def test_empty_slots_not_reported():
    c = compress(build_wide(random_soup(37, seed=9), 8))
    empty = c.children < 0
    assert empty.any()
    assert np.all(c.qlo[empty] == 255) and np.all(c.qhi[empty] == 0)
    assert validate_hierarchy(c) == []


def test_compression_is_deterministic():
    tris = random_soup(1500, seed=5)
    a = compress(build_wide(tris, 8))
    b = compress(build_wide(tris.copy(), 8))
    assert serialize_compressed(a) == serialize_compressed(b)
    assert serialize_triangles(a) == serialize_triangles(b)


def test_leaf_scales_are_shared():
    c = compressed("cornell", 8)
    leaves = np.nonzero(c.is_leaf)[0]
    assert np.all(c.exp[leaves] == np.array(c.e_leaf))


def test_inline_leaves_drop_triangle_fetch():
    w = build_wide(random_soup(400, seed=1), 8)
    c = compress(w, inline_triangles=True)
    assert c.inline.any()
    assert validate_hierarchy(c) == []
    small = int(c.inline.sum())
    inlined = sum(int(c.prim_count[n]) for n in np.nonzero(c.inline)[0])
    assert small > 0 and c.triangle_pool_bytes() == 9 * (c.num_tris - inlined)
    assert len(serialize_compressed(c)) == 96 * c.num_nodes
