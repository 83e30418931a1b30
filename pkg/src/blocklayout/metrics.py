"""Quantitative layout evaluation.

Scores operate on building footprints (BuildingRecords or bare
Polygons): pairwise matching, layout similarity through optimal
assignment, overlap/out-of-block area ratios, empirical Wasserstein
distances, and slot-matched position/coverage errors.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import Polygon, min_area_oriented_box

MATCH_DECAY_PER_M = 0.02


class MetricError(ValueError):
    """Raised for empty or incomparable inputs."""


def _footprint(building) -> Polygon:
    return building.footprint if hasattr(building, "footprint") else building


def matching_score(b1, b2, c: float = MATCH_DECAY_PER_M) -> float:
    """min(area1, area2) * 2^(-c * center distance); in square meters."""
    p1, p2 = _footprint(b1), _footprint(b2)
    distance = float(np.linalg.norm(p1.centroid - p2.centroid))
    return min(p1.area, p2.area) * 2.0 ** (-c * distance)


def hungarian(scores: np.ndarray):
    """Maximum-weight assignment; rectangular input is zero-padded square.

    Returns (pairs, total): pairs only over the real (unpadded) cells.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.size == 0:
        raise MetricError("score matrix must be 2-D and non-empty")
    if not np.all(np.isfinite(scores)):
        raise MetricError("scores must be finite")
    n, m = scores.shape
    side = max(n, m)
    padded = np.zeros((side, side))
    padded[:n, :m] = scores
    rows, cols = linear_sum_assignment(padded, maximize=True)
    pairs = [(int(i), int(j)) for i, j in zip(rows, cols)
             if i < n and j < m]
    total = float(sum(scores[i, j] for i, j in pairs))
    return pairs, total


def align_layout(buildings):
    """Canonical pose: rotate the layout's OBB long side horizontal and
    center it on the origin.  Returns transformed footprints."""
    footprints = [_footprint(b) for b in buildings]
    ring = np.vstack([p.ring for p in footprints])
    hull = min_area_oriented_box(Polygon(_hull_ring(ring)))
    center = hull.center.as_array()
    angle = -hull.angle
    return [p.translated(-center[0], -center[1]).rotated(angle)
            for p in footprints]


def _hull_ring(points: np.ndarray) -> np.ndarray:
    """Convex hull ring (CCW) of a point cloud; monotone chain."""
    pts = np.unique(points, axis=0)
    if len(pts) < 3:
        raise MetricError("need at least 3 distinct points")
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def half(iterable):
        chain = []
        for p in iterable:
            while len(chain) >= 2:
                u = chain[-1] - chain[-2]
                v = p - chain[-2]
                if u[0] * v[1] - u[1] * v[0] > 0:
                    break
                chain.pop()
            chain.append(p)
        return chain

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def layout_sim(layout_a, layout_b) -> float:
    """Average optimal matching score between two aligned layouts."""
    if not layout_a or not layout_b:
        return 0.0
    aligned_a = align_layout(layout_a)
    aligned_b = align_layout(layout_b)
    scores = np.array([[matching_score(a, b) for b in aligned_b]
                       for a in aligned_a])
    _, total = hungarian(scores)
    return total / max(len(aligned_a), len(aligned_b))


def overlap_index(buildings) -> float:
    """Percent of total building area involved in pairwise overlaps."""
    footprints = [_footprint(b) for b in buildings]
    if not footprints:
        raise MetricError("need at least one building")
    total = sum(p.area for p in footprints)
    shapes = [p.shapely for p in footprints]
    overlap = 0.0
    for i in range(len(shapes)):
        for j in range(i + 1, len(shapes)):
            overlap += shapes[i].intersection(shapes[j]).area
    return 100.0 * overlap / total


def out_block_index(buildings, block: Polygon) -> float:
    """Percent of building area falling outside the block polygon."""
    footprints = [_footprint(b) for b in buildings]
    if not footprints:
        raise MetricError("need at least one building")
    total = sum(p.area for p in footprints)
    blk = block.shapely
    outside = sum(p.shapely.difference(blk).area for p in footprints)
    return 100.0 * outside / total


def wasserstein_1d(a, b) -> float:
    """Exact empirical W1 via the quantile-function integral."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise MetricError("samples must be non-empty")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    qa = np.arange(1, a.size + 1) / a.size
    qb = np.arange(1, b.size + 1) / b.size
    q = np.union1d(qa, qb)
    widths = np.diff(np.concatenate(([0.0], q)))
    va = a[np.minimum(np.searchsorted(qa, q, side="left"), a.size - 1)]
    vb = b[np.minimum(np.searchsorted(qb, q, side="left"), b.size - 1)]
    return float(np.sum(widths * np.abs(va - vb)))


def count_wasserstein(layouts_a, layouts_b) -> float:
    """W1 between the per-block building-count distributions."""
    return wasserstein_1d([len(layout) for layout in layouts_a],
                          [len(layout) for layout in layouts_b])


def bbox_wasserstein(layouts_a, layouts_b) -> float:
    """Mean of per-coordinate W1 over pooled (x, y, w, h) box samples.

    Each layout's building centers are expressed relative to the
    layout's mean center so blocks from different places compare.
    """

    def pool(layouts):
        xs, ys, ws, hs = [], [], [], []
        for layout in layouts:
            boxes = [b.box for b in layout]
            if not boxes:
                continue
            centers = np.array([bx.center.as_array() for bx in boxes])
            centers -= centers.mean(axis=0)
            xs.extend(centers[:, 0])
            ys.extend(centers[:, 1])
            ws.extend(bx.width for bx in boxes)
            hs.extend(bx.height for bx in boxes)
        return xs, ys, ws, hs

    pooled_a = pool(layouts_a)
    pooled_b = pool(layouts_b)
    if not pooled_a[0] or not pooled_b[0]:
        raise MetricError("need at least one building per side")
    distances = [wasserstein_1d(sa, sb)
                 for sa, sb in zip(pooled_a, pooled_b)]
    return float(np.mean(distances))


def position_error(pred, truth) -> float:
    """Mean center shift over common occupied slots, percent of length."""
    length = truth.axis.length_m
    errors = []
    for np_, nt in zip(pred.nodes, truth.nodes):
        if np_.e == 1 and nt.e == 1:
            errors.append(np.hypot(np_.x - nt.x, np_.y - nt.y))
    if not errors:
        raise MetricError("layouts share no occupied slots")
    return float(np.mean(errors) / length * 100.0)


def coverage_error(pred, truth) -> float:
    """Footprint-area coverage difference, percent of block area."""
    area_pred = sum(n.w * n.h * n.a for n in pred.nodes if n.e == 1)
    area_truth = sum(n.w * n.h * n.a for n in truth.nodes if n.e == 1)
    return float(abs(area_pred - area_truth) / truth.block.area * 100.0)
