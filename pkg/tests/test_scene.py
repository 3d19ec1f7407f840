import numpy as np
import pytest

from conftest import scene, tree
from quantrt.metrics import TrafficStats
from quantrt.scene import (
    DIFF_CSV_HEADER,
    Camera,
    Image,
    ObjError,
    TriangleMesh,
    default_camera,
    generate_primary_rays,
    image_diff,
    load_obj,
    load_scene,
    make_procedural,
    path_trace,
    read_ppm,
    save_obj,
    write_image,
)
from quantrt.traversal import traverse


def write(tmp_path, text, name="m.obj"):
    p = tmp_path / name
    p.write_text(text)
    return p


# ---------------------------------------------------------------------------
# OBJ


def test_obj_single_triangle(tmp_path):
    m = load_obj(write(tmp_path, "# tri\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n"))
    assert m.num_triangles == 1 and len(m.vertices) == 3
    assert m.name == "m"


def test_obj_quad_and_polygon_fan(tmp_path):
    text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0.5 2 0\nf 1/1 2/2 3/3 4/4\nf -5 -4 -3 -2 -1\n"
    m = load_obj(write(tmp_path, text))
    assert m.num_triangles == 2 + 3
    assert m.faces[:2].tolist() == [[0, 1, 2], [0, 2, 3]]


@pytest.mark.parametrize(
    "text",
    [
        "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n",
        "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n",
        "v 0 0 x\nf 1 1 1\n",
        "v 0 0\n",
        "v 0 0 0\nv 1 0 0\nf 1 2\n",
        "v 0 0 0\n",
    ],
)
def test_obj_errors(tmp_path, text):
    with pytest.raises(ObjError):
        load_obj(write(tmp_path, text))


def test_obj_large_file_counts(tmp_path):
    m = make_procedural("grid:29")
    assert m.num_triangles == 12 * 29 * 29 > 10_000
    p = tmp_path / "big.obj"
    save_obj(m, p)
    # independent count straight from the text
    lines = p.read_text().splitlines()
    nv = sum(1 for ln in lines if ln.startswith("v "))
    nf = sum(1 for ln in lines if ln.startswith("f "))
    back = load_obj(p)
    assert (len(back.vertices), back.num_triangles) == (nv, nf)
    assert np.array_equal(back.faces, m.faces)
    assert np.array_equal(back.vertices, m.vertices)
    assert load_scene(str(p)).num_triangles == nf


def test_mesh_validation():
    with pytest.raises(ValueError):
        TriangleMesh(np.zeros((3, 3)), [[0, 1, 3]])
    with pytest.raises(ValueError):
        TriangleMesh(np.full((3, 3), np.nan), [[0, 1, 2]])


# ---------------------------------------------------------------------------
# procedural scenes


def test_sphere_counts():
    assert make_procedural("sphere", 0).num_triangles == 20
    for n in range(4):
        assert make_procedural(f"sphere:{n}").num_triangles == 20 * 4**n


@pytest.mark.parametrize("spec", ["sphere:0", "sphere:2", "sphere:3", "grid:1", "grid:7", "cornell"])
def test_procedural_meshes_are_watertight(spec):
    m = scene(spec)
    assert m.is_watertight()
    assert set(m.edge_counts().values()) == {2}


def test_sphere_vertices_on_unit_sphere():
    v = scene("sphere:3").vertices.astype(np.float64)
    assert np.allclose(np.linalg.norm(v, axis=1), 1.0, atol=1e-6)


def test_cornell_box():
    m = scene("cornell")
    lo, hi = m.bounds()
    assert lo.tolist() == [0, 0, 0] and hi.tolist() == [1, 1, 1]
    assert m.num_triangles == 8448
    assert (m.emission > 0).any()
    assert make_procedural("cornell").faces.tolist() == m.faces.tolist()


def test_procedural_errors():
    for bad in ("sphere", "grid:0", "sphere:-1", "teapot:3"):
        with pytest.raises(ValueError):
            make_procedural(bad)


# ---------------------------------------------------------------------------
# camera


def test_ray_count_and_center_ray():
    cam = Camera((0, 0, 5), (0, 0, 0), vfov=60, width=7, height=5)
    r = generate_primary_rays(cam)
    assert len(r) == 35
    center = r.direction[2 * 7 + 3]
    assert np.allclose(center, [0, 0, -1])
    assert np.allclose(r.origin, [0, 0, 5])


def test_corner_rays_symmetric():
    cam = Camera((1, 2, 3), (1, 2, -3), vfov=50, width=8, height=6)
    d = generate_primary_rays(cam).direction.reshape(6, 8, 3)
    fwd, right, up = cam.basis()
    flip_x = d - 2 * (d @ right)[..., None] * right
    flip_y = d - 2 * (d @ up)[..., None] * up
    assert np.allclose(flip_x, d[:, ::-1])
    assert np.allclose(flip_y, d[::-1])


def test_bad_cameras():
    with pytest.raises(ValueError):
        Camera((0, 0, 0), (0, 0, 0))
    with pytest.raises(ValueError):
        Camera((0, 0, 0), (0, 1, 0))
    with pytest.raises(ValueError):
        Camera((0, 0, 1), (0, 0, 0), width=0)


# ---------------------------------------------------------------------------
# images


def _img(rgb, ids=None):
    rgb = np.asarray(rgb, float)
    return Image(rgb, np.zeros(rgb.shape[:2], int) if ids is None else ids)


def test_ppm_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    img = _img(rng.random((9, 13, 3)))
    write_image(img, tmp_path / "a.ppm")
    data = (tmp_path / "a.ppm").read_bytes()
    assert data.startswith(b"P6\n13 9\n255\n")
    assert np.array_equal(read_ppm(tmp_path / "a.ppm"), img.to_bytes8())


def test_image_diff():
    a = _img(np.zeros((4, 5, 3)))
    assert image_diff(a, a).id_mismatches == 0 and image_diff(a, a).mean_abs_color == 0
    b = _img(np.ones((4, 5, 3)), np.ones((4, 5), int))
    d = image_diff(a, b)
    assert d.mean_abs_color == 1.0 and d.id_mismatch_frac == 1.0
    assert d.csv_line("x").startswith("x,20,20,1.0")
    assert len(DIFF_CSV_HEADER.split(",")) == len(d.csv_line("x").split(","))
    with pytest.raises(ValueError):
        image_diff(a, _img(np.zeros((5, 4, 3))))


def _near_edges(ids, radius=2):
    """Pixels within ``radius`` (chessboard) of a change in the id map."""
    edge = np.zeros(ids.shape, bool)
    edge[:, 1:] |= ids[:, 1:] != ids[:, :-1]
    edge[:, :-1] |= ids[:, 1:] != ids[:, :-1]
    edge[1:] |= ids[1:] != ids[:-1]
    edge[:-1] |= ids[1:] != ids[:-1]
    out = edge.copy()
    h, w = ids.shape
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            src = edge[max(0, -dy) : h - max(0, dy), max(0, -dx) : w - max(0, dx)]
            out[max(0, dy) : h - max(0, -dy), max(0, dx) : w - max(0, -dx)] |= src
    return out


def test_compressed_render_mismatches_sit_on_edges():
    m = scene("sphere:3")
    cam = default_camera(m, 128, 128)
    ref = path_trace(cam, tree("sphere:3", 4, False), m, 0).image
    fx = path_trace(cam, tree("sphere:3", 4, True), m, 0, Q_dir=10).image
    bad = ref.hit_id != fx.hit_id
    assert (ref.hit_id >= 0).sum() > 3000
    assert np.all(_near_edges(ref.hit_id)[bad])


# ---------------------------------------------------------------------------
# path tracing


@pytest.fixture(scope="module")
def cornell_small():
    m = scene("cornell")
    return m, default_camera(m, 24, 24), tree("cornell", 4, True)


def test_zero_bounces_matches_primary_traffic(cornell_small):
    m, cam, t = cornell_small
    res = path_trace(cam, t, m, 0, mode="RS")
    s = TrafficStats()
    traverse(generate_primary_rays(cam), t, "RS", s)
    assert res.stats.as_dict() == s.as_dict()
    assert len(res.stats.per_bounce) == 1


def test_bounces_are_deterministic_and_monotone(cornell_small):
    m, cam, t = cornell_small
    a = path_trace(cam, t, m, 3, seed=5)
    b = path_trace(cam, t, m, 3, seed=5)
    assert np.array_equal(a.image.rgb, b.image.rgb) and a.stats == b.stats
    assert len(a.stats.per_bounce) == 4
    assert all(x >= y for x, y in zip(a.rays_per_bounce, a.rays_per_bounce[1:]))
    assert all(v >= 0 for s in a.stats.per_bounce for v in s.as_dict().values())
    assert sum(s.total for s in a.stats.per_bounce) == a.stats.total
    assert np.all(np.isfinite(a.image.rgb)) and np.all(a.image.rgb >= 0)
    c = path_trace(cam, t, m, 3, seed=6)
    assert not np.array_equal(a.image.rgb, c.image.rgb)


def test_path_trace_rejects_negative_bounces(cornell_small):
    m, cam, t = cornell_small
    with pytest.raises(ValueError):
        path_trace(cam, t, m, -1)
