"""Synthetic blocks, footprints, and toy cities for tests and demos.

Everything here is deterministic given a seed. The footprint corpus
exercises the shape fitter; the block family (rectangles, wedges,
bends, cul-de-sacs) exercises the axis and canonical transforms; the
toy city bundles blocks with row-aligned buildings for training runs
and the end-to-end pipeline.
"""

from __future__ import annotations

import math

import numpy as np
import shapely.geometry as sgeom

from .geometry import OrientedBox, Point2, Polygon
from .graphrep import BlockShapeFeature, BuildingRecord, block_shape_feature
from .shapefit import ShapeParams, ShapeType, shape_template
from .skeleton import local_half_width

BLOCK_KINDS = ("rect", "wedge", "bend", "culdesac")


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_shape_params(tag: ShapeType, rng) -> ShapeParams:
    """Cut fractions comfortably inside their valid ranges, so the notch
    signal stays well above the fitter's noise margin."""
    rng = _rng(rng)
    if tag == ShapeType.RECT:
        return ShapeParams(tag)
    if tag == ShapeType.L:
        return ShapeParams(tag, tuple(rng.uniform(0.32, 0.7, 2)))
    if tag == ShapeType.U:
        return ShapeParams(
            tag, (rng.uniform(0.3, 0.6), rng.uniform(0.3, 0.7), rng.uniform(0.25, 0.75))
        )
    return ShapeParams(tag, tuple(rng.uniform(0.16, 0.4, 4)))


def sample_footprint(tag: ShapeType, rng, jitter_sigma: float = 0.2) -> Polygon:
    """One random footprint of the given tag, rigidly moved and jittered."""
    rng = _rng(rng)
    w = rng.uniform(16.0, 36.0)
    h = w / rng.uniform(1.4, 2.5)
    box = OrientedBox(Point2(*rng.uniform(-80.0, 80.0, 2)), w, h, rng.uniform(0.0, math.pi))
    poly = shape_template(sample_shape_params(tag, rng), box)
    poly = poly.rotated(rng.uniform(0.0, 2.0 * math.pi), about=tuple(poly.centroid))
    if jitter_sigma > 0:
        poly = Polygon(poly.ring + rng.normal(0.0, jitter_sigma, poly.ring.shape))
    return poly


def footprint_corpus(n_per_tag: int, seed: int = 0, jitter_sigma: float = 0.2):
    """Labelled corpus of jittered template footprints, n per tag."""
    rng = _rng(seed)
    out = []
    for tag in ShapeType:
        for _ in range(n_per_tag):
            out.append((sample_footprint(tag, rng, jitter_sigma), tag))
    return out


def _buffer_polygon(line_coords, width: float) -> Polygon:
    line = sgeom.LineString(line_coords)
    poly = line.buffer(width, cap_style="flat", join_style="mitre")
    return Polygon(np.asarray(poly.exterior.coords[:-1], dtype=np.float64))


def block_polygon(kind: str, rng) -> Polygon:
    """One random block outline of the requested kind."""
    rng = _rng(rng)
    if kind == "rect":
        w, h = rng.uniform(70.0, 160.0), rng.uniform(24.0, 60.0)
        ring = np.array([[0, 0], [w, 0], [w, h], [0, h]], dtype=np.float64)
        poly = Polygon(ring)
    elif kind == "wedge":
        w = rng.uniform(80.0, 160.0)
        h0, h1 = rng.uniform(22.0, 36.0), rng.uniform(40.0, 64.0)
        skew = rng.uniform(-10.0, 10.0)
        ring = np.array([[0, 0], [w, skew], [w, skew + h1], [0, h0]], dtype=np.float64)
        poly = Polygon(ring)
    elif kind == "bend":
        l1, l2 = rng.uniform(60.0, 110.0), rng.uniform(60.0, 110.0)
        ang = rng.uniform(math.radians(35.0), math.radians(80.0))
        half = rng.uniform(13.0, 22.0)
        p0 = (0.0, 0.0)
        p1 = (l1, 0.0)
        p2 = (l1 + l2 * math.cos(ang), l2 * math.sin(ang))
        poly = _buffer_polygon([p0, p1, p2], half)
    elif kind == "culdesac":
        l = rng.uniform(70.0, 130.0)
        half = rng.uniform(12.0, 20.0)
        bulb = half * rng.uniform(1.5, 2.1)
        stem = sgeom.LineString([(0, 0), (l, 0)]).buffer(half, cap_style="flat")
        head = sgeom.Point(l, 0).buffer(bulb, quad_segs=6)
        merged = stem.union(head)
        poly = Polygon(np.asarray(merged.exterior.coords[:-1], dtype=np.float64))
    else:
        raise ValueError(f"unknown block kind {kind!r}")
    ang = rng.uniform(0.0, math.pi)
    shift = rng.uniform(-400.0, 400.0, 2)
    return poly.rotated(ang, about=(0.0, 0.0)).translated(*shift)


def sample_blocks(n: int, seed: int = 0, kinds=BLOCK_KINDS):
    """n random blocks cycling through the kind list."""
    rng = _rng(seed)
    return [block_polygon(kinds[i % len(kinds)], rng) for i in range(n)]


def _axis_row(shape: BlockShapeFeature, y_frac: float, rng, p_notch: float):
    """Buildings marched along the main axis at one offset fraction."""
    axis = shape.axis
    length = axis.length_m
    inner = shape.block.shapely.buffer(-0.8)
    if inner.is_empty:
        inner = shape.block.shapely
    out = []
    t = rng.uniform(0.02, 0.06)
    while True:
        bw = rng.uniform(9.0, 18.0)
        if (t + bw / length) > 0.97:
            break
        t_mid = t + bw / (2.0 * length)
        hw = local_half_width(axis, t_mid)
        depth_cap = hw - 2.0 if y_frac != 0.0 else 2.0 * hw - 3.0
        bh = min(rng.uniform(0.5, 0.85) * depth_cap, 0.95 * bw)
        if bh > 2.5:
            point = axis.point_at(t_mid)
            tan = axis.tangent_at(t_mid)
            normal = np.array([-tan[1], tan[0]])
            center = point + y_frac * hw * normal
            angle = math.atan2(tan[1], tan[0]) % math.pi
            box = OrientedBox(Point2(center[0], center[1]), bw, bh, angle)
            tag = ShapeType.RECT
            if rng.uniform() < p_notch:
                tag = ShapeType(int(rng.integers(1, 4)))
            poly = shape_template(sample_shape_params(tag, rng), box)
            if poly.shapely.within(inner):
                occ = min(poly.area / (bw * bh), 1.0)
                out.append(BuildingRecord(footprint=poly, box=box, shape=tag, occupancy=occ))
        t += (bw + rng.uniform(3.0, 9.0)) / length
    return out


def sample_city(n_blocks: int, seed: int = 0, p_notch: float = 0.25, kinds=BLOCK_KINDS):
    """Blocks with axis-aligned building rows: list of (block, [BuildingRecord])."""
    rng = _rng(seed)
    city = []
    i = 0
    while len(city) < n_blocks:
        block = block_polygon(kinds[i % len(kinds)], rng)
        i += 1
        shape = block_shape_feature(block)
        median_hw = float(np.median(shape.axis.hw_table))
        y_fracs = (-0.5, 0.5) if median_hw >= 18.0 else (0.0,)
        buildings = []
        for y in y_fracs:
            buildings.extend(_axis_row(shape, y, rng, p_notch))
        if buildings:
            city.append((block, buildings, shape))
    return city
