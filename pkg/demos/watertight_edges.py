"""Rays aimed straight at shared mesh edges never slip between the two faces."""
import numpy as np

from quantrt.bvh import build_wide, compress
from quantrt.fxp import oct_encode_array
from quantrt.isect import FixedSpace, tri_fixed_batch
from quantrt.scene import make_procedural
from quantrt.traversal import RAY_DTYPE, fixed_from_records, traverse_single

mesh = make_procedural("sphere:2")
t = compress(build_wide(mesh.triangles(), 4))
space = FixedSpace.for_tree(t)
Q = space.Q_org

pos = np.empty(mesh.num_triangles, dtype=np.int64)
pos[t.prim_index] = np.arange(mesh.num_triangles)

# pick the edge shared by face 0 and one neighbour
f0 = mesh.faces[0].tolist()
e = f0[:2]
f1 = next(f for f in range(1, mesh.num_triangles) if set(e) <= set(mesh.faces[f].tolist()))
a = t.tri_c[pos[0], 0].astype(np.int64)
b = t.tri_c[pos[0], 1].astype(np.int64)
print("edge from", a, "to", b, "(leaf cells)")

k = np.arange(1, 1 << Q, 7)
P = (a << Q) + k[:, None] * (b - a)
v = mesh.vertices.astype(np.float64)
n = sum(np.cross(v[F[1]] - v[F[0]], v[F[2]] - v[F[0]]) for F in (mesh.faces[0], mesh.faces[f1]))

rec = np.zeros(len(k), dtype=RAY_DTYPE)
rec["dir"] = oct_encode_array(np.tile(-n, (len(k), 1)))
d = fixed_from_records(rec, space)[1]
o = P - 64 * d
rec["origin"] = o

hit = np.zeros(len(k), bool)
for f in (0, f1):
    A, B, C = (np.repeat(t.tri_c[pos[f], i][None].astype(np.int64), len(k), 0) for i in range(3))
    idx = tri_fixed_batch(o, d, A, B, C, space)[0]
    print(f"face {f}: {len(idx)} of {len(k)} edge rays hit")
    hit[idx] = True
print("rays missing both faces:", int((~hit).sum()))
print("rays missing the whole mesh:", int((~traverse_single(rec, t, space=space).hit).sum()))
