"""Memory traffic of all twelve configurations on a small Cornell box render."""
import sys

from quantrt.bvh import build_wide, compress
from quantrt.cli import all_labels, parse_config
from quantrt.scene import default_camera, make_procedural, path_trace

res = int(sys.argv[1]) if len(sys.argv) > 1 else 48
mesh = make_procedural("cornell")
cam = default_camera(mesh, res, res)

trees = {}
for w in (2, 4, 8):
    trees[w, False] = build_wide(mesh.triangles(), w)
    trees[w, True] = compress(trees[w, False])

rows = {}
for label in all_labels():
    cfg = parse_config(label)
    s = path_trace(cam, trees[cfg.width, cfg.compressed], mesh, 2, seed=1, mode=cfg.mode).stats
    rows[label] = s
    print(f"{label:10} total {s.total / 2**20:8.2f} MiB  ray share {s.ray_traffic_pct():5.1f}%")

base = rows["BVH8-SR-U"].total
print("\nrelative to BVH8-SR-U:")
for label, s in sorted(rows.items(), key=lambda kv: kv[1].total):
    print(f"  {label:10} {s.total / base:.3f}")
