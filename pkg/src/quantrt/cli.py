"""Run a matrix of BVH configurations on one scene and write images plus CSV.

Configuration labels look like ``BVH8-RS-C``: width 2/4/8, single-ray (SR) or
ray-stream (RS) traversal, compressed (C) or uncompressed (U) tree.
"""

from __future__ import annotations

import argparse
import re
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from .bvh import WIDTHS, build_wide, compress
from .metrics import report_csv
from .scene import DIFF_CSV_HEADER, default_camera, image_diff, load_scene, path_trace, write_image

LABEL_RE = re.compile(r"^BVH(\d+)-(SR|RS)-(C|U)$")
GRAMMAR = "BVH{2|4|8}-{SR|RS}-{C|U}"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    width: int
    mode: str
    compressed: bool
    scene: str = "cornell"
    res: tuple[int, int] = (512, 512)
    bounces: int = 0
    seed: int = 1
    R_org: int = 20
    Q_org: int = 10
    Q_dir: int = 10

    @property
    def label(self) -> str:
        return f"BVH{self.width}-{self.mode}-{'C' if self.compressed else 'U'}"


def parse_config(label: str, **extra) -> RunConfig:
    m = LABEL_RE.match(label.strip())
    if not m:
        raise ConfigError(f"bad configuration {label!r}; expected {GRAMMAR}")
    w = int(m.group(1))
    if w not in WIDTHS:
        raise ConfigError(f"bad width {w} in {label!r}; expected {GRAMMAR}")
    return RunConfig(w, m.group(2), m.group(3) == "C", **extra)


def all_labels() -> list[str]:
    return [f"BVH{w}-{m}-{c}" for w in WIDTHS for m in ("SR", "RS") for c in ("C", "U")]


def parse_res(s: str) -> tuple[int, int]:
    m = re.match(r"^(\d+)x(\d+)$", s)
    if not m or int(m.group(1)) < 1 or int(m.group(2)) < 1:
        raise argparse.ArgumentTypeError(f"resolution must look like 512x512, got {s!r}")
    return int(m.group(1)), int(m.group(2))


def run_matrix(configs: list[RunConfig], out: Path, reference: str | None = None, log=print) -> int:
    """Render every configuration; returns the number of failed configurations."""
    out.mkdir(parents=True, exist_ok=True)
    first = configs[0]
    mesh = load_scene(first.scene)
    cam = default_camera(mesh, *first.res)
    log(f"scene {first.scene}: {mesh.num_triangles} triangles, {cam.width}x{cam.height}")
    trees = {}

    def tree_for(cfg):
        key = (cfg.width, cfg.compressed)
        if key not in trees:
            if (cfg.width, False) not in trees:
                trees[(cfg.width, False)] = build_wide(mesh.triangles(), cfg.width)
            if cfg.compressed:
                trees[key] = compress(trees[(cfg.width, False)])
        return trees[key]

    def render(cfg):
        kw = dict(R_org=cfg.R_org, Q_org=cfg.Q_org, Q_dir=cfg.Q_dir) if cfg.compressed else {}
        return path_trace(cam, tree_for(cfg), mesh, cfg.bounces, cfg.seed, cfg.mode, **kw)

    rows, images, failures = [], {}, 0
    for cfg in configs:
        t0 = time.perf_counter()
        try:
            res = render(cfg)
        except Exception as e:  # report and keep going with the other configurations
            log(f"{cfg.label}: FAILED ({type(e).__name__}: {e})")
            failures += 1
            continue
        tree = tree_for(cfg)
        write_image(res.image, out / f"{cfg.label}.ppm")
        images[cfg.label] = res.image
        rows.append((cfg.label, res.stats, {"nodeBytes": tree.node_bytes, "triBytes": tree.tri_bytes}))
        log(f"{cfg.label}: total {res.stats.total} bytes in {time.perf_counter() - t0:.1f}s")
    if rows:
        (out / "results.csv").write_text(report_csv(rows))

    if reference:
        ref_cfg = parse_config(reference, **_extras(first))
        try:
            ref = images[ref_cfg.label] if ref_cfg.label in images else render(ref_cfg).image
        except Exception as e:
            log(f"reference {ref_cfg.label}: FAILED ({type(e).__name__}: {e})")
            return failures + 1
        lines = [DIFF_CSV_HEADER] + [image_diff(img, ref).csv_line(lbl) for lbl, img in images.items()]
        (out / "diff.csv").write_text("\n".join(lines) + "\n")
    return failures


def _extras(cfg: RunConfig) -> dict:
    return dict(
        scene=cfg.scene,
        res=cfg.res,
        bounces=cfg.bounces,
        seed=cfg.seed,
        R_org=cfg.R_org,
        Q_org=cfg.Q_org,
        Q_dir=cfg.Q_dir,
    )


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quantrt", description=__doc__.splitlines()[0])
    p.add_argument("--scene", default="cornell", help="cornell, sphere:N, grid:N or a path to an .obj file")
    p.add_argument(
        "--config", action="append", default=None, help=f"{GRAMMAR}, repeatable, or 'all' (default: all)"
    )
    p.add_argument("--res", type=parse_res, default=(512, 512), help="WxH (default 512x512)")
    p.add_argument("--bounces", type=int, default=0, help="diffuse bounces (default 0)")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--qdir", type=int, default=10, help="fractional bits of ray directions")
    p.add_argument("--qorg", type=int, default=10, help="fractional bits of ray origins")
    p.add_argument("--rorg", type=int, default=20, help="integer bits of ray origins")
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument(
        "--reference",
        nargs="?",
        const="BVH2-SR-U",
        default=None,
        help="also write diff.csv against this configuration's render (default BVH2-SR-U)",
    )
    return p


def main(argv=None) -> int:
    p = build_parser()
    args = p.parse_args(argv)
    if args.bounces < 0:
        p.error("--bounces must be >= 0")
    labels = args.config or ["all"]
    if "all" in labels:
        labels = all_labels()
    extra = dict(
        scene=args.scene,
        res=args.res,
        bounces=args.bounces,
        seed=args.seed,
        R_org=args.rorg,
        Q_org=args.qorg,
        Q_dir=args.qdir,
    )
    try:
        configs = [parse_config(lbl, **extra) for lbl in dict.fromkeys(labels)]
        if args.reference:
            parse_config(args.reference)
    except ConfigError as e:
        p.error(str(e))
    log = lambda msg: print(msg, file=sys.stderr)  # noqa: E731
    try:
        failed = run_matrix(configs, args.out, args.reference, log)
    except (OSError, ValueError) as e:
        log(f"error: {e}")
        return 1
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
