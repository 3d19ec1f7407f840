"""Build a wide BVH, compress it to 8-bit child boxes, and check the result."""
import sys

from quantrt.bvh import build_wide, compress, conservativeness_violations, serialize_compressed, validate_hierarchy
from quantrt.scene import make_procedural

spec = sys.argv[1] if len(sys.argv) > 1 else "sphere:3"
mesh = make_procedural(spec)
tris = mesh.triangles()
print(spec, "->", mesh.num_triangles, "triangles")

for w in (2, 4, 8):
    u = build_wide(tris, w)
    c = compress(u)
    bad = validate_hierarchy(c) + conservativeness_violations(c, u)
    print(
        f"BVH{w}: {u.num_nodes:5d} nodes, depth {u.depth()}, "
        f"nodes {u.node_pool_bytes():8d} -> {c.node_pool_bytes():7d} B, "
        f"triangles {u.triangle_pool_bytes():8d} -> {c.triangle_pool_bytes():7d} B, "
        f"violations {len(bad)}"
    )
    assert len(serialize_compressed(c)) == c.node_pool_bytes()

print("leaf cell (world units per step):", c.leaf_cell())
