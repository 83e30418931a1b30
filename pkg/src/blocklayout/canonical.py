"""Canonical spatial transform between world and axis-relative features.

Positions become (arc-length fraction, offset over local half-width),
sizes become (width over axis length, height over local chord). The
inverse is algebraically exact wherever a building center projects onto
a segment interior, which is everywhere except the outward fan of a
sharp bend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graphrep import (
    EMPTY_NODE,
    BlockGraph,
    BlockShapeFeature,
    N_NODES,
    NodeFeatures,
)
from .shapefit import ShapeType
from .skeleton import MainAxis, local_half_width


class CanonicalError(ValueError):
    """Raised for degenerate axes or malformed canonical graphs."""


@dataclass(frozen=True)
class CanonicalNode:
    """Axis-relative node features; empty slots stay all-zero."""

    e: int
    x: float = 0.0
    y: float = 0.0
    w: float = 0.0
    h: float = 0.0
    s: ShapeType = ShapeType.RECT
    a: float = 0.0

    def __post_init__(self):
        if self.e not in (0, 1):
            raise CanonicalError("existence flag must be 0 or 1")
        if self.e == 1:
            if not (0.0 <= self.x <= 1.0):
                raise CanonicalError(f"arc fraction {self.x} outside [0, 1]")
            if abs(self.y) > 5.0:
                raise CanonicalError(f"offset ratio {self.y} is not plausible")
            if not (self.w > 0.0 and self.h > 0.0):
                raise CanonicalError("normalized sizes must be positive")


EMPTY_CANONICAL = CanonicalNode(e=0)


@dataclass(frozen=True)
class CanonicalGraph:
    """Normalized node features; the standard pipeline uses a 4x30 grid
    but reduced grids are allowed for small experiments."""

    nodes: tuple

    def __post_init__(self):
        if not self.nodes:
            raise CanonicalError("graph needs at least one node")

    def occupied_indices(self) -> list:
        return [i for i, n in enumerate(self.nodes) if n.e == 1]


def to_canonical(g: BlockGraph) -> CanonicalGraph:
    """Normalize occupied node features against the block's main axis.

    The axis must be world-calibrated (meters_per_pixel == 1), which is
    what block_shape_feature produces.
    """
    axis = g.axis
    length = axis.length_m
    if not length > 0:
        raise CanonicalError("degenerate axis")

    occupied = [(i, n) for i, n in enumerate(g.nodes) if n.e == 1]
    nodes = [EMPTY_CANONICAL] * N_NODES
    if occupied:
        centers = np.array([[n.x, n.y] for _, n in occupied])
        ts, ds = axis.project(centers)
        for (i, n), t, d in zip(occupied, ts, ds):
            hw = local_half_width(axis, float(t))
            if not hw > 0:
                raise CanonicalError(f"zero half-width at t={t}")
            nodes[i] = CanonicalNode(
                e=1,
                x=float(t),
                y=float(d / hw),
                w=float(n.w / length),
                h=float(n.h / (2.0 * hw)),
                s=n.s,
                a=n.a,
            )
    return CanonicalGraph(nodes=tuple(nodes))


def from_canonical(cg: CanonicalGraph, shape: BlockShapeFeature, axis: MainAxis | None = None):
    """Invert the transform; returns (BlockGraph, count of clamped x values).

    Arc fractions outside [0, 1] are clamped before inversion and counted
    so callers can surface how far a generated layout strayed.
    """
    if axis is None:
        axis = shape.axis
    length = axis.length_m
    if not length > 0:
        raise CanonicalError("degenerate axis")

    clamped = 0
    nodes = [EMPTY_NODE] * N_NODES
    for i, cn in enumerate(cg.nodes):
        if cn.e != 1:
            continue
        t = cn.x
        if t < 0.0 or t > 1.0:
            clamped += 1
            t = min(max(t, 0.0), 1.0)
        hw = local_half_width(axis, t)
        point = axis.point_at(t)
        tan = axis.tangent_at(t)
        normal = np.array([-tan[1], tan[0]])
        center = point + cn.y * hw * normal
        w = cn.w * length
        h = cn.h * 2.0 * hw
        if w < h:
            w, h = h, w
        nodes[i] = NodeFeatures(
            e=1,
            x=float(center[0]),
            y=float(center[1]),
            w=float(w),
            h=float(h),
            s=cn.s,
            a=cn.a,
        )
    return BlockGraph(nodes=tuple(nodes), block=shape.block, shape=shape), clamped


def local_angle(axis: MainAxis, t: float) -> float:
    """World angle of the axis tangent at arc fraction t, in [0, pi)."""
    tan = axis.tangent_at(min(max(t, 0.0), 1.0))
    return math.atan2(tan[1], tan[0]) % math.pi
