"""Turn decoded node features back into concrete building footprints.

The model predicts, per grid slot, an oriented box plus a shape tag and
an occupancy ratio.  This module synthesises an actual polygon matching
those statistics (the footprint's parameters are not part of the model
output, only its tag and area ratio), places it along the block's main
axis, and clips it to the block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .canonical import from_canonical, local_angle
from .geometry import OrientedBox, Point2, Polygon
from .graphrep import BuildingRecord
from .shapefit import (
    FRACTION_HI, FRACTION_LO, ShapeParams, ShapeType, shape_template,
)

OCCUPANCY_TOLERANCE = 0.1
RECT_FULL_OCCUPANCY = 0.98
MIN_KEPT_FRACTION = 0.5


@dataclass(frozen=True)
class SynthesisResult:
    footprint: Polygon
    occupancy: float
    warning: bool


def _draw_params(tag: ShapeType, rng) -> ShapeParams:
    """Uniform draw over the valid fraction box for `tag`."""
    lo, hi = FRACTION_LO, FRACTION_HI
    if tag == ShapeType.L:
        return ShapeParams(tag, tuple(rng.uniform(lo, hi, size=2)))
    if tag == ShapeType.U:
        return ShapeParams(tag, tuple(rng.uniform(lo, hi, size=3)))
    # X: opposing depths must leave a solid core on both sides
    while True:
        d = rng.uniform(lo, 0.47, size=4)
        if d[0] + d[1] < 0.95 and d[2] + d[3] < 0.95:
            return ShapeParams(tag, tuple(d))


def synthesize_footprint(tag: ShapeType, occupancy: float,
                         box: OrientedBox, seed: int,
                         max_iter: int = 100) -> SynthesisResult:
    """Footprint with the given tag filling `occupancy` of `box`.

    Rectangles are closed form: the box itself at near-full occupancy,
    otherwise a centred shrink to the requested area.  Notched tags draw
    parameters at random and keep the best occupancy match; if no draw
    lands within 0.1 the best is returned flagged with a warning.
    """
    if not (0.0 < occupancy <= 1.0):
        raise ValueError("occupancy must be in (0, 1], got %r" % occupancy)
    if tag == ShapeType.RECT:
        if occupancy >= RECT_FULL_OCCUPANCY:
            return SynthesisResult(box.polygon(), 1.0, False)
        factor = np.sqrt(occupancy)
        small = OrientedBox(center=box.center, width=box.width * factor,
                            height=box.height * factor, angle=box.angle)
        return SynthesisResult(small.polygon(), occupancy, False)
    rng = np.random.default_rng(seed)
    box_area = box.width * box.height
    best = None
    best_gap = np.inf
    for _ in range(max_iter):
        params = _draw_params(tag, rng)
        footprint = shape_template(params, box)
        gap = abs(footprint.area / box_area - occupancy)
        if gap < best_gap:
            best, best_gap = footprint, gap
            if gap <= 1e-3:
                break
    return SynthesisResult(best, best.area / box_area,
                           best_gap > OCCUPANCY_TOLERANCE)


def _largest_component(geom):
    if geom.geom_type == "Polygon":
        return geom
    if geom.geom_type in ("MultiPolygon", "GeometryCollection"):
        polys = [g for g in geom.geoms if g.geom_type == "Polygon"]
        if polys:
            return max(polys, key=lambda g: g.area)
    return None


def realize_block(canonical_graph, shape_feature, seed: int = 0):
    """Decode a canonical graph into clipped world-space footprints.

    Returns (buildings, warnings): BuildingRecords for every slot whose
    synthesised footprint survives clipping to the block (at least half
    its area retained), and human-readable warnings for the rest.
    """
    graph, clamped = from_canonical(canonical_graph, shape_feature)
    warnings = []
    if clamped:
        warnings.append("%d slot(s) had out-of-range arc fractions clamped"
                        % clamped)
    axis = shape_feature.axis
    block_shape = shape_feature.block.shapely
    buildings = []
    for i, node in enumerate(graph.nodes):
        if node.e != 1:
            continue
        t = min(max(canonical_graph.nodes[i].x, 0.0), 1.0)
        box = OrientedBox(center=Point2(node.x, node.y), width=node.w,
                          height=node.h, angle=local_angle(axis, t))
        synth = synthesize_footprint(node.s, node.a, box, seed=seed + i)
        if synth.warning:
            warnings.append("slot %d: occupancy %.3f unreachable for tag %s"
                            % (i, node.a, node.s.name))
        clipped = synth.footprint.shapely.intersection(block_shape)
        clipped = _largest_component(clipped)
        if clipped is None or clipped.is_empty or clipped.area < 1e-9:
            warnings.append("slot %d: footprint fell outside the block" % i)
            continue
        if clipped.area < MIN_KEPT_FRACTION * synth.footprint.area:
            warnings.append("slot %d: dropped, %.0f%% clipped away"
                            % (i, 100 * (1 - clipped.area
                                         / synth.footprint.area)))
            continue
        ring = np.asarray(clipped.exterior.coords)[:-1]
        footprint = Polygon(ring)
        buildings.append(BuildingRecord(
            footprint=footprint, box=box, shape=node.s,
            occupancy=min(clipped.area / (node.w * node.h), 1.0)))
    return buildings, warnings
