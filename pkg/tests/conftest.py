import functools

import numpy as np
import pytest

from quantrt.bvh import build_binary_sah, collapse_to_width, compress
from quantrt.scene import make_procedural

ACCEPTANCE_LINES = []


@functools.lru_cache(maxsize=None)
def scene(spec):
    return make_procedural(spec)


@functools.lru_cache(maxsize=None)
def binary(spec):
    m = scene(spec)
    return build_binary_sah(m.triangles().astype(np.float64))


@functools.lru_cache(maxsize=None)
def wide(spec, width):
    return collapse_to_width(binary(spec), scene(spec).triangles(), width)


@functools.lru_cache(maxsize=None)
def compressed(spec, width):
    return compress(wide(spec, width))


def tree(spec, width, comp):
    return compressed(spec, width) if comp else wide(spec, width)


def random_soup(n, seed=0, spread=5.0, size=0.4):
    rng = np.random.default_rng(seed)
    c = rng.uniform(-spread, spread, (n, 1, 3))
    return (c + rng.normal(0, size, (n, 3, 3))).astype(np.float32)


def random_rays(mesh, n, seed=0):
    from quantrt.traversal import Rays

    rng = np.random.default_rng(seed)
    lo, hi = mesh.bounds()
    pad = 0.2 * (hi - lo)
    o = rng.uniform(lo - pad, hi + pad, (n, 3))
    d = rng.normal(size=(n, 3))
    return Rays(o, d)


@pytest.fixture
def acceptance_report():
    def report(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
