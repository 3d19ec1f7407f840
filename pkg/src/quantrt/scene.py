"""Meshes, procedural scenes, cameras, a small diffuse path tracer and image I/O."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .metrics import TrafficStats
from .traversal import Rays, traverse

ALBEDO = 0.7
LIGHT_EMISSION = 12.0
FILL_LIGHT = 0.35
SKY_RADIANCE = 0.8
FILL_DIR = np.array([0.35, 0.8, 0.48]) / np.linalg.norm([0.35, 0.8, 0.48])


class ObjError(ValueError):
    pass


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (nv, 3) float32
    faces: np.ndarray  # (nf, 3) int64
    emission: np.ndarray = None  # (nf,) float, 0 for non-emitters
    name: str = "mesh"

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float32).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("mesh has non-finite vertex positions")
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")
        if self.emission is None:
            self.emission = np.zeros(len(self.faces))
        self.emission = np.asarray(self.emission, dtype=np.float64)

    @property
    def num_triangles(self) -> int:
        return len(self.faces)

    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    def bounds(self):
        return self.vertices.min(axis=0).astype(np.float64), self.vertices.max(axis=0).astype(np.float64)

    def edge_counts(self) -> Counter:
        e = np.sort(self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        return Counter(map(tuple, e.tolist()))

    def is_watertight(self) -> bool:
        return all(c == 2 for c in self.edge_counts().values())


def merge_meshes(parts, name="scene") -> TriangleMesh:
    verts, faces, em = [], [], []
    base = 0
    for m in parts:
        verts.append(m.vertices)
        faces.append(m.faces + base)
        em.append(m.emission)
        base += len(m.vertices)
    return TriangleMesh(np.concatenate(verts), np.concatenate(faces), np.concatenate(em), name)


# ---------------------------------------------------------------------------
# OBJ


def load_obj(path) -> TriangleMesh:
    """Positions and faces of an OBJ file; polygons are fan-triangulated."""
    verts, faces = [], []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(x) for x in parts[1:4]])
                    if len(verts[-1]) != 3:
                        raise ObjError(f"line {lineno}: vertex needs 3 coordinates")
                elif parts[0] == "f":
                    idx = []
                    for tok in parts[1:]:
                        i = int(tok.split("/")[0])
                        if i == 0:
                            raise ObjError(f"line {lineno}: index 0 is not valid")
                        i = i - 1 if i > 0 else len(verts) + i
                        if not 0 <= i < len(verts):
                            raise ObjError(f"line {lineno}: vertex index out of range")
                        idx.append(i)
                    if len(idx) < 3:
                        raise ObjError(f"line {lineno}: face needs 3 vertices")
                    for k in range(1, len(idx) - 1):
                        faces.append((idx[0], idx[k], idx[k + 1]))
            except ValueError as e:
                if isinstance(e, ObjError):
                    raise
                raise ObjError(f"line {lineno}: {e}") from None
    if not faces:
        raise ObjError("no faces in OBJ file")
    return TriangleMesh(np.array(verts), np.array(faces), name=Path(path).stem)


def save_obj(mesh: TriangleMesh, path) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


# ---------------------------------------------------------------------------
# procedural scenes


def cube_surface(n: int):
    """Welded closed surface of [0,1]^3 with an n x n quad grid per face."""
    ids = {}
    verts = []

    def vid(p):
        if p not in ids:
            ids[p] = len(verts)
            verts.append(p)
        return ids[p]

    faces = []
    for axis in range(3):
        u, v = (axis + 1) % 3, (axis + 2) % 3
        for side in (0, n):
            for i in range(n):
                for j in range(n):
                    q = []
                    for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        p = [0, 0, 0]
                        p[axis], p[u], p[v] = side, i + di, j + dj
                        q.append(vid(tuple(p)))
                    if side == 0:
                        q = q[::-1]
                    faces.append((q[0], q[1], q[2]))
                    faces.append((q[0], q[2], q[3]))
    return np.array(verts, dtype=np.float64) / n, np.array(faces, dtype=np.int64)


def icosphere(level: int) -> TriangleMesh:
    t = (1.0 + 5**0.5) / 2.0
    v = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]  # fmt: skip
    f = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]  # fmt: skip
    verts = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in v]
    for _ in range(level):
        mid = {}

        def m(a, b):
            k = (min(a, b), max(a, b))
            if k not in mid:
                p = verts[a] + verts[b]
                mid[k] = len(verts)
                verts.append(p / np.linalg.norm(p))
            return mid[k]

        nf = []
        for a, b, c in f:
            ab, bc, ca = m(a, b), m(b, c), m(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        f = nf
    return TriangleMesh(np.array(verts), np.array(f), name=f"sphere{level}")


def displaced_grid(n: int) -> TriangleMesh:
    """Closed cube with n x n cells per face, mildly displaced so it is not flat."""
    v, f = cube_surface(n)
    p = v * 2.0 - 1.0
    bump = 0.04 * np.sin(3.1 * p[:, 0] + 1.3) * np.sin(2.7 * p[:, 1] + 0.4) * np.sin(2.3 * p[:, 2] + 0.9)
    r = np.linalg.norm(p, axis=1, keepdims=True)
    p = p + bump[:, None] * p / r
    return TriangleMesh(p, f, name=f"grid{n}")


def _transform(v, scale, angle_deg, offset):
    a = math.radians(angle_deg)
    rot = np.array([[math.cos(a), 0, math.sin(a)], [0, 1, 0], [-math.sin(a), 0, math.cos(a)]])
    return ((v - 0.5) * np.asarray(scale)) @ rot.T + np.asarray(offset)


CORNELL_TESSELLATION = 24


def cornell(n: int = CORNELL_TESSELLATION) -> TriangleMesh:
    """Closed unit room, a tall and a short block, and an emissive ceiling patch."""
    v, f = cube_surface(n)
    cen = v[f].mean(axis=1)
    light = (np.abs(cen[:, 1] - 1.0) < 1e-9) & (np.abs(cen[:, 0] - 0.5) < 0.17) & (np.abs(cen[:, 2] - 0.5) < 0.17)
    room = TriangleMesh(v, f, np.where(light, LIGHT_EMISSION, 0.0), "room")
    k = max(1, n // 3)
    bv, bf = cube_surface(k)
    tall = TriangleMesh(_transform(bv, (0.25, 0.6, 0.25), 17.0, (0.31, 0.3 + 1e-3, 0.31)), bf, name="tall")
    short = TriangleMesh(_transform(bv, (0.25, 0.3, 0.25), -18.0, (0.69, 0.15 + 1e-3, 0.67)), bf, name="short")
    return merge_meshes([room, tall, short], "cornell")


def make_procedural(kind: str, n: int | None = None) -> TriangleMesh:
    """``cornell``, ``sphere`` (subdivision level n) or ``grid`` (n cells per cube face).

    ``kind`` may also carry the parameter, as in ``"sphere:3"``.
    """
    if ":" in kind:
        kind, arg = kind.split(":", 1)
        n = int(arg)
    if kind == "cornell":
        return cornell(n or CORNELL_TESSELLATION)
    if n is None:
        raise ValueError(f"{kind} needs a size parameter")
    if kind == "sphere":
        if n < 0:
            raise ValueError("sphere level must be >= 0")
        return icosphere(n)
    if kind == "grid":
        if n < 1:
            raise ValueError("grid size must be >= 1")
        return displaced_grid(n)
    raise ValueError(f"unknown procedural scene {kind!r}")


def load_scene(spec: str) -> TriangleMesh:
    """A procedural spec (``cornell``, ``sphere:N``, ``grid:N``) or an OBJ path."""
    if spec.lower().endswith(".obj"):
        return load_obj(spec)
    return make_procedural(spec)


# ---------------------------------------------------------------------------
# camera


@dataclass
class Camera:
    position: tuple
    look_at: tuple
    up: tuple = (0.0, 1.0, 0.0)
    vfov: float = 40.0
    width: int = 512
    height: int = 512

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("resolution must be positive")
        if not 0.0 < self.vfov < 180.0:
            raise ValueError("vertical field of view must be in (0, 180)")
        fwd = np.asarray(self.look_at, float) - np.asarray(self.position, float)
        if np.linalg.norm(fwd) == 0:
            raise ValueError("camera looks at its own position")
        right = np.cross(fwd, np.asarray(self.up, float))
        if np.linalg.norm(right) < 1e-12:
            raise ValueError("up vector parallel to view direction")

    def basis(self):
        fwd = np.asarray(self.look_at, float) - np.asarray(self.position, float)
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(self.up, float))
        right /= np.linalg.norm(right)
        up = np.cross(right, fwd)
        return fwd, right, up


def default_camera(mesh: TriangleMesh, width: int = 512, height: int = 512) -> Camera:
    if mesh.name == "cornell":
        return Camera((0.5, 0.5, 0.985), (0.5, 0.42, 0.0), vfov=74.0, width=width, height=height)
    lo, hi = mesh.bounds()
    c = 0.5 * (lo + hi)
    r = 0.5 * float(np.linalg.norm(hi - lo))
    pos = c + np.array([0.0, 0.0, 2.8 * r])
    return Camera(tuple(pos), tuple(c), vfov=45.0, width=width, height=height)


def generate_primary_rays(cam: Camera) -> Rays:
    """One ray through each pixel center, row-major from the top-left pixel."""
    fwd, right, up = cam.basis()
    h = math.tan(math.radians(cam.vfov) / 2.0)
    aspect = cam.width / cam.height
    ys, xs = np.mgrid[0 : cam.height, 0 : cam.width]
    sx = ((xs + 0.5) / cam.width * 2.0 - 1.0) * h * aspect
    sy = (1.0 - (ys + 0.5) / cam.height * 2.0) * h
    d = fwd[None] + sx.reshape(-1, 1) * right[None] + sy.reshape(-1, 1) * up[None]
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = np.broadcast_to(np.asarray(cam.position, float), d.shape).copy()
    return Rays(o, d)


# ---------------------------------------------------------------------------
# images


@dataclass
class Image:
    rgb: np.ndarray  # (h, w, 3) float, linear radiance
    hit_id: np.ndarray  # (h, w) int64, -1 where the primary ray missed

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    def to_bytes8(self) -> np.ndarray:
        x = np.clip(self.rgb, 0.0, 1.0) ** (1.0 / 2.2)
        return np.floor(x * 255.0 + 0.5).astype(np.uint8)


def write_image(img: Image, path) -> None:
    """Binary PPM (P6)."""
    data = img.to_bytes8()
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.width} {img.height}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P6":
        raise ValueError("not a binary PPM")
    w, h = int(tokens[1]), int(tokens[2])
    pos += 1
    return np.frombuffer(raw[pos : pos + 3 * w * h], dtype=np.uint8).reshape(h, w, 3)


@dataclass(frozen=True)
class DiffStats:
    pixels: int
    id_mismatches: int
    id_mismatch_frac: float
    mean_abs_color: float  # over 8-bit display values, in [0, 1]

    def csv_line(self, label: str) -> str:
        return f"{label},{self.pixels},{self.id_mismatches},{self.id_mismatch_frac:.6f},{self.mean_abs_color:.6f}"


DIFF_CSV_HEADER = "label,pixels,idMismatches,idMismatchFrac,meanAbsColor"


def image_diff(a: Image, b: Image) -> DiffStats:
    if a.rgb.shape != b.rgb.shape:
        raise ValueError(f"image sizes differ: {a.rgb.shape[:2]} vs {b.rgb.shape[:2]}")
    mism = int((a.hit_id != b.hit_id).sum())
    n = a.hit_id.size
    col = np.abs(a.to_bytes8().astype(np.int64) - b.to_bytes8().astype(np.int64)).mean() / 255.0
    return DiffStats(n, mism, mism / n, float(col))


# ---------------------------------------------------------------------------
# path tracing


def _faceforward(n, d):
    s = np.where((n * d).sum(axis=1) > 0, -1.0, 1.0)
    return n * s[:, None]


def _cosine_hemisphere(n, u1, u2):
    """Cosine-weighted directions around unit normals ``n``."""
    r = np.sqrt(u1)
    phi = 2.0 * np.pi * u2
    x, y, z = r * np.cos(phi), r * np.sin(phi), np.sqrt(np.maximum(0.0, 1.0 - u1))
    a = np.where(np.abs(n[:, :1]) > 0.9, np.array([[0.0, 1.0, 0.0]]), np.array([[1.0, 0.0, 0.0]]))
    t = np.cross(a, n)
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    b = np.cross(n, t)
    return x[:, None] * t + y[:, None] * b + z[:, None] * n


def _bounce_rng(seed: int, bounce: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(seed) & 0xFFFFFFFFFFFFFFFF, int(bounce)]))


def geometric_normals(tree, mesh: TriangleMesh, prim: np.ndarray) -> np.ndarray:
    """Unit normals of the triangles the kernels actually intersect."""
    if getattr(tree, "compressed", False):
        inv = np.empty(len(tree.prim_index), dtype=np.int64)
        inv[tree.prim_index] = np.arange(len(tree.prim_index))
        tri = np.ldexp(tree.tri_c[inv[prim]].astype(np.float64), np.array(tree.e_leaf))
    else:
        tri = mesh.triangles()[prim].astype(np.float64)
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    ln = np.linalg.norm(n, axis=1, keepdims=True)
    return n / np.where(ln == 0, 1.0, ln)


@dataclass
class RenderResult:
    image: Image
    stats: TrafficStats
    rays_per_bounce: list = field(default_factory=list)


def path_trace(
    cam: Camera, tree, mesh: TriangleMesh, bounces: int = 0, seed: int = 1, mode: str = "SR", **trace_kw
) -> RenderResult:
    """Constant-albedo diffuse path tracing; traffic is recorded per bounce.

    Paths end on an emitter, on a miss (secondary rays that escape pick up a
    constant sky term), or after ``bounces`` diffuse bounces,
    where a small fill term keeps unlit geometry visible.  Secondary rays
    start one leaf cell (compressed trees) or a tiny scene-relative distance
    (float trees) off the surface along the facing geometric normal.
    """
    if bounces < 0:
        raise ValueError("bounces must be >= 0")
    npix = cam.width * cam.height
    rays = generate_primary_rays(cam)
    alive = np.arange(npix)
    through = np.ones(npix)
    radiance = np.zeros(npix)
    hit_id = np.full(npix, -1, dtype=np.int64)
    total = TrafficStats()
    counts = []
    if getattr(tree, "compressed", False):
        offset = max(tree.leaf_cell())
    else:
        lo, hi = mesh.bounds()
        offset = 1e-4 * float(np.linalg.norm(hi - lo))

    for b in range(bounces + 1):
        counts.append(len(alive))
        if len(alive) == 0:
            total.add_bounce(TrafficStats())
            continue
        st = TrafficStats()
        hits = traverse(rays, tree, mode, st, **trace_kw)
        total.add_bounce(st)
        if b == 0:
            hit_id[alive] = hits.prim
        h = hits.hit
        em = np.zeros(len(alive))
        em[h] = mesh.emission[hits.prim[h]]
        radiance[alive] += through[alive] * em
        if b > 0:
            radiance[alive[~h]] += through[alive[~h]] * SKY_RADIANCE
        cont = h & (em == 0)
        idx = np.nonzero(cont)[0]
        n = _faceforward(geometric_normals(tree, mesh, hits.prim[idx]), rays.direction[idx])
        if b == bounces:
            lit = 0.25 + 0.75 * np.maximum(0.0, n @ FILL_DIR)
            radiance[alive[idx]] += through[alive[idx]] * ALBEDO * FILL_LIGHT * lit
            break
        rng = _bounce_rng(seed, b + 1)
        u = rng.random((npix, 2))[alive[idx]]
        d = _cosine_hemisphere(n, u[:, 0], u[:, 1])
        o = hits.point[idx] + offset * n
        alive = alive[idx]
        through[alive] *= ALBEDO
        rays = Rays(o, d)
    while len(total.per_bounce) < bounces + 1:
        total.add_bounce(TrafficStats())
        counts.append(0)

    rgb = np.repeat(radiance.reshape(cam.height, cam.width, 1), 3, axis=2)
    return RenderResult(Image(rgb, hit_id.reshape(cam.height, cam.width)), total, counts)
