"""Compressed wide BVHs traced with exact fixed-point arithmetic, plus a traffic model."""

from .bvh import build_wide, compress, node_byte_size, triangle_byte_size, validate_hierarchy
from .fxp import FixedP, oct_decode, oct_encode
from .isect import FixedSpace, precision_requirements
from .metrics import TrafficStats, report_csv
from .scene import Camera, load_obj, make_procedural, path_trace
from .traversal import Rays, brute_force, ray_to_fixed, traverse_single, traverse_stream

__version__ = "0.1.0"
