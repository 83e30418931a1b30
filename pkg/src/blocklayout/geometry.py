"""Exact 2-D polygon primitives shared by every other module.

Coordinates live in a local metric plane (meters). Polygons are simple
rings with counter-clockwise orientation; boolean operations are backed
by shapely (GEOS) while areas, oriented boxes, rasterization and
Hausdorff distances are computed here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import shapely
import shapely.geometry as sgeom
from scipy.spatial import cKDTree

# Point coincidence tolerance in meters (source data carries ~1e-7 deg).
EPS = 1e-9

MASK_RESOLUTION = 64
MASK_MARGIN_PX = 1


class GeometryError(ValueError):
    """Raised for degenerate or invariant-violating geometry."""


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GeometryError("non-finite coordinates")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)


def _signed_area(ring: np.ndarray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


@dataclass(frozen=True)
class Polygon:
    """Simple CCW polygon given by its open vertex ring (implicitly closed)."""

    ring: np.ndarray
    _shapely: object = field(default=None, repr=False, compare=False)

    def __init__(self, ring, validate: bool = True):
        arr = np.asarray(ring, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise GeometryError(f"ring must be (n,2), got {arr.shape}")
        # Drop an explicit closing vertex.
        if len(arr) >= 2 and np.allclose(arr[0], arr[-1], atol=EPS):
            arr = arr[:-1]
        if len(arr) < 3:
            raise GeometryError("polygon needs at least 3 vertices")
        if not np.all(np.isfinite(arr)):
            raise GeometryError("non-finite vertex")
        sa = _signed_area(arr)
        if abs(sa) < EPS:
            raise GeometryError("degenerate polygon (zero area)")
        if sa < 0:
            arr = arr[::-1].copy()
        arr.flags.writeable = False
        object.__setattr__(self, "ring", arr)
        object.__setattr__(self, "_shapely", None)
        if validate and not sgeom.Polygon(arr).is_valid:
            raise GeometryError("polygon is not simple")

    @property
    def shapely(self) -> sgeom.Polygon:
        if self._shapely is None:
            object.__setattr__(self, "_shapely", sgeom.Polygon(self.ring))
        return self._shapely

    @property
    def area(self) -> float:
        return _signed_area(self.ring)

    @property
    def centroid(self) -> np.ndarray:
        c = self.shapely.centroid
        return np.array([c.x, c.y])

    def translated(self, dx: float, dy: float) -> "Polygon":
        return Polygon(self.ring + np.array([dx, dy]), validate=False)

    def rotated(self, angle: float, about=(0.0, 0.0)) -> "Polygon":
        c, s = math.cos(angle), math.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        about = np.asarray(about, dtype=np.float64)
        return Polygon((self.ring - about) @ rot.T + about, validate=False)

    def scaled(self, factor: float, about=(0.0, 0.0)) -> "Polygon":
        about = np.asarray(about, dtype=np.float64)
        return Polygon((self.ring - about) * factor + about, validate=False)


@dataclass(frozen=True)
class OrientedBox:
    """Minimum-area oriented rectangle; width >= height, angle in [0, pi)."""

    center: Point2
    width: float
    height: float
    angle: float

    def __post_init__(self):
        if not self.width >= self.height > 0:
            raise GeometryError(f"need width >= height > 0, got {self.width}, {self.height}")
        if not 0.0 <= self.angle < math.pi:
            raise GeometryError(f"angle must be in [0, pi), got {self.angle}")

    @property
    def area(self) -> float:
        return self.width * self.height

    def corners(self) -> np.ndarray:
        """CCW corner coordinates, starting at (-w/2, -h/2) in box frame."""
        hw, hh = self.width / 2, self.height / 2
        local = np.array([[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]])
        c, s = math.cos(self.angle), math.sin(self.angle)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + self.center.as_array()

    def polygon(self) -> Polygon:
        return Polygon(self.corners(), validate=False)


@dataclass(frozen=True)
class BinaryMask:
    """64x64 occupancy grid; ``scale`` is meters spanned by the full mask width.

    ``bits[row, col]`` with row increasing along the +y direction of the
    mask frame and col along +x; pixel centers sit at (col+0.5, row+0.5).
    """

    bits: np.ndarray
    scale: float

    def __init__(self, bits, scale: float):
        arr = np.asarray(bits, dtype=np.uint8)
        if arr.shape != (MASK_RESOLUTION, MASK_RESOLUTION):
            raise GeometryError(f"mask must be {MASK_RESOLUTION}x{MASK_RESOLUTION}, got {arr.shape}")
        if not scale > 0:
            raise GeometryError("mask scale must be positive")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "bits", arr)
        object.__setattr__(self, "scale", float(scale))

    @property
    def meters_per_pixel(self) -> float:
        return self.scale / MASK_RESOLUTION

    def pixel_count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class MaskTransform:
    """Similarity mapping between world meters and mask pixel coordinates.

    World points are rotated by -angle about ``center`` (bringing the block
    OBB long side horizontal), scaled by ``pix_per_m`` and shifted so the
    OBB center lands on the mask center.
    """

    center: np.ndarray
    angle: float
    pix_per_m: float
    resolution: int = MASK_RESOLUTION

    def world_to_mask(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        c, s = math.cos(-self.angle), math.sin(-self.angle)
        rot = np.array([[c, -s], [s, c]])
        out = (pts - self.center) @ rot.T * self.pix_per_m
        return out + self.resolution / 2.0

    def mask_to_world(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        c, s = math.cos(self.angle), math.sin(self.angle)
        rot = np.array([[c, -s], [s, c]])
        return (pts - self.resolution / 2.0) / self.pix_per_m @ rot.T + self.center

    def direction_to_world(self, angle_in_mask: float) -> float:
        return angle_in_mask + self.angle


def polygon_area(p: Polygon) -> float:
    """Shoelace area in square meters; strictly positive for valid input."""
    a = p.area
    if a < EPS:
        raise GeometryError("degenerate polygon")
    return a


def _convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; returns CCW hull vertices."""
    pts = np.unique(points, axis=0)
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    if len(pts) < 3:
        return pts

    def build(seq):
        hull = []
        for p in seq:
            while len(hull) >= 2:
                o, a = hull[-2], hull[-1]
                if (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0]) <= 0:
                    hull.pop()
                else:
                    break
            hull.append(p)
        return hull

    lower = build(pts)
    upper = build(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def min_area_oriented_box(p: Polygon) -> OrientedBox:
    """Minimum-area enclosing rectangle via rotating calipers on the hull."""
    hull = _convex_hull(p.ring)
    if len(hull) < 3:
        raise GeometryError("degenerate polygon for oriented box")
    edges = np.roll(hull, -1, axis=0) - hull
    angles = np.arctan2(edges[:, 1], edges[:, 0]) % math.pi

    best = None
    for theta in np.unique(angles):
        c, s = math.cos(-theta), math.sin(-theta)
        rot = np.array([[c, -s], [s, c]])
        q = hull @ rot.T
        lo, hi = q.min(axis=0), q.max(axis=0)
        w, h = hi - lo
        area = w * h
        if best is None or area < best[0] - EPS:
            mid = (lo + hi) / 2.0
            best = (area, theta, w, h, mid)

    _, theta, w, h, mid = best
    c, s = math.cos(theta), math.sin(theta)
    center = np.array([[c, -s], [s, c]]) @ mid
    if w < h:
        w, h = h, w
        theta = (theta + math.pi / 2) % math.pi
    theta %= math.pi
    return OrientedBox(Point2(center[0], center[1]), float(w), float(h), float(theta))


def intersection_area(a: Polygon, b: Polygon) -> float:
    """Area of a ∩ b; 0 when disjoint. Handles concave simple polygons."""
    return float(a.shapely.intersection(b.shapely).area)


def difference_area(a: Polygon, b: Polygon) -> float:
    """Area of a \\ b."""
    return float(a.shapely.difference(b.shapely).area)


def iou(a: Polygon, b: Polygon) -> float:
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union < EPS:
        raise GeometryError("iou undefined for zero-area union")
    return inter / union


def densify_boundary(p: Polygon, step: float = 0.1) -> np.ndarray:
    """Boundary sample points spaced at most ``step`` meters apart."""
    pts = []
    ring = p.ring
    for i in range(len(ring)):
        a, b = ring[i], ring[(i + 1) % len(ring)]
        n = max(1, int(math.ceil(np.linalg.norm(b - a) / step)))
        t = np.arange(n) / n
        pts.append(a + t[:, None] * (b - a))
    return np.concatenate(pts)


def hausdorff_distance(a: Polygon, b: Polygon, step: float = 0.1) -> float:
    """Symmetric Hausdorff distance between boundaries densified to ``step``."""
    pa = densify_boundary(a, step)
    pb = densify_boundary(b, step)
    d_ab = cKDTree(pb).query(pa)[0].max()
    d_ba = cKDTree(pa).query(pb)[0].max()
    return float(max(d_ab, d_ba))


def mask_transform(p: Polygon, resolution: int = MASK_RESOLUTION) -> MaskTransform:
    """Transform placing the polygon's OBB long side horizontal in the mask."""
    obb = min_area_oriented_box(p)
    usable = resolution - 2 * MASK_MARGIN_PX
    return MaskTransform(
        center=obb.center.as_array(),
        angle=obb.angle,
        pix_per_m=usable / obb.width,
        resolution=resolution,
    )


def rasterize(p: Polygon, resolution: int = MASK_RESOLUTION) -> BinaryMask:
    """Rotate the OBB long side horizontal, fit with a 1-pixel margin, fill.

    A pixel is set iff its center lies inside the polygon; ``scale`` records
    meters per full mask width.
    """
    tf = mask_transform(p, resolution)
    ring_px = tf.world_to_mask(p.ring)
    poly_px = sgeom.Polygon(ring_px)
    centers = np.arange(resolution) + 0.5
    cx, cy = np.meshgrid(centers, centers)  # cy varies along rows
    inside = shapely.contains_xy(poly_px, cx.ravel(), cy.ravel())
    bits = inside.reshape(resolution, resolution).astype(np.uint8)
    return BinaryMask(bits, scale=resolution / tf.pix_per_m)


def mask_cell_union(mask: BinaryMask):
    """Shapely union of all set pixels (in mask pixel coordinates)."""
    rows, cols = np.nonzero(mask.bits)
    boxes = [sgeom.box(c, r, c + 1.0, r + 1.0) for r, c in zip(rows, cols)]
    return shapely.unary_union(boxes)
