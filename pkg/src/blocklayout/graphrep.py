"""Fixed-topology stubby grid graph built from a block and its buildings.

Every block maps to the same 4x30 grid of node slots. Buildings land in
rows by clustering their signed offsets from the block's main axis, and
in columns by their arc-length position along it; everything else is an
empty slot. The fixed topology lets one decoder emit layouts for any
block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BinaryMask, MaskTransform, OrientedBox, Polygon, mask_transform, min_area_oriented_box, rasterize
from .shapefit import FitResult, ShapeType, fit_building
from .skeleton import MainAxis, main_axis, thin_mask

R_MAX = 4
N_COLS = 30
N_NODES = R_MAX * N_COLS

ELBOW_GAIN = 0.20
ROW_GAP_M = 4.0


class GraphBuildError(ValueError):
    """Raised when a block/building set cannot fit the grid."""


@dataclass(frozen=True)
class BuildingRecord:
    """A footprint plus its fitted node features."""

    footprint: Polygon
    box: OrientedBox
    shape: ShapeType
    occupancy: float

    @classmethod
    def from_polygon(cls, footprint: Polygon, fit: FitResult | None = None) -> "BuildingRecord":
        if fit is None:
            fit = fit_building(footprint)
        return cls(
            footprint=footprint,
            box=min_area_oriented_box(footprint),
            shape=fit.shape,
            occupancy=fit.occupancy,
        )


@dataclass(frozen=True)
class BlockShapeFeature:
    """Mask + scale conditioning input, with the axis and mask transform."""

    block: Polygon
    mask: BinaryMask
    l: float
    axis: MainAxis
    transform: MaskTransform


@dataclass(frozen=True)
class NodeFeatures:
    e: int
    x: float = 0.0
    y: float = 0.0
    w: float = 0.0
    h: float = 0.0
    s: ShapeType = ShapeType.RECT
    a: float = 0.0

    def __post_init__(self):
        if self.e not in (0, 1):
            raise ValueError("existence flag must be 0 or 1")
        if self.e == 0:
            if any(v != 0.0 for v in (self.x, self.y, self.w, self.h, self.a)):
                raise ValueError("empty slots must have zeroed features")
        else:
            if not (self.w >= self.h > 0):
                raise ValueError("occupied slot needs w >= h > 0")
            if not (0.0 < self.a <= 1.0):
                raise ValueError("occupancy must be in (0, 1]")


EMPTY_NODE = NodeFeatures(e=0)


@dataclass(frozen=True)
class BlockGraph:
    """Row-major tuple of N_NODES node feature slots plus block context."""

    nodes: tuple
    block: Polygon
    shape: BlockShapeFeature

    def __post_init__(self):
        if not self.nodes:
            raise GraphBuildError("graph needs at least one node")

    @property
    def axis(self) -> MainAxis:
        return self.shape.axis

    def node_at(self, row: int, col: int) -> NodeFeatures:
        return self.nodes[row * N_COLS + col]

    def occupied_indices(self) -> list:
        return [i for i, n in enumerate(self.nodes) if n.e == 1]

    def building_count(self) -> int:
        return sum(n.e for n in self.nodes)


def grid_edges(rows: int = R_MAX, cols: int = N_COLS) -> np.ndarray:
    """Undirected 4-neighborhood edge list over the row-major grid."""
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                edges.append((i, i + 1))
            if r + 1 < rows:
                edges.append((i, i + cols))
    return np.array(edges, dtype=np.int64)


def adjacency(rows: int = R_MAX, cols: int = N_COLS, self_loops: bool = True) -> np.ndarray:
    """Dense symmetric 0/1 adjacency, optionally with self-loops."""
    n = rows * cols
    adj = np.zeros((n, n), dtype=np.float64)
    for i, j in grid_edges(rows, cols):
        adj[i, j] = adj[j, i] = 1.0
    if self_loops:
        adj[np.arange(n), np.arange(n)] = 1.0
    return adj


def _kmeans_1d(values: np.ndarray, k: int):
    """Exact 1-D k-means via contiguous-partition dynamic programming.

    Returns (within-cluster sum of squares, labels in value order,
    cluster means ordered ascending).
    """
    order = np.argsort(values, kind="stable")
    v = values[order]
    n = len(v)
    pref = np.concatenate([[0.0], np.cumsum(v)])
    pref2 = np.concatenate([[0.0], np.cumsum(v * v)])

    def seg_cost(i, j):
        # ssq of v[i..j] inclusive around its own mean
        cnt = j - i + 1
        s = pref[j + 1] - pref[i]
        s2 = pref2[j + 1] - pref2[i]
        return s2 - s * s / cnt

    inf = float("inf")
    cost = np.full((k + 1, n + 1), inf)
    split = np.zeros((k + 1, n + 1), dtype=np.int64)
    cost[0, 0] = 0.0
    for kk in range(1, k + 1):
        for j in range(kk, n + 1):
            for i in range(kk - 1, j):
                c = cost[kk - 1, i] + seg_cost(i, j - 1)
                if c < cost[kk, j] - 1e-15:
                    cost[kk, j] = c
                    split[kk, j] = i
    # Recover boundaries.
    bounds = [n]
    j = n
    for kk in range(k, 0, -1):
        j = split[kk, j]
        bounds.append(j)
    bounds = bounds[::-1]
    labels_sorted = np.empty(n, dtype=np.int64)
    means = []
    for c in range(k):
        lo, hi = bounds[c], bounds[c + 1]
        labels_sorted[lo:hi] = c
        means.append(float(np.mean(v[lo:hi])))
    labels = np.empty(n, dtype=np.int64)
    labels[order] = labels_sorted
    return float(cost[k, n]), labels, means


def cluster_offsets(offsets: np.ndarray) -> np.ndarray:
    """Row labels for signed axis offsets (meters), ascending by mean.

    k grows from 1 while adding a cluster cuts the within-cluster sum of
    squares by at least 20% and every adjacent pair of cluster means stays
    at least 4 m apart; the gap guard stops jitter within one true row
    from splitting it.
    """
    offsets = np.asarray(offsets, dtype=np.float64)
    n = len(offsets)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    best_w, best_labels, _ = _kmeans_1d(offsets, 1)
    k = 1
    while k < min(R_MAX, n):
        w_next, labels_next, means_next = _kmeans_1d(offsets, k + 1)
        if best_w <= 1e-12:
            break
        gain = (best_w - w_next) / best_w
        gaps = np.diff(means_next)
        if gain >= ELBOW_GAIN and (len(gaps) == 0 or np.min(gaps) >= ROW_GAP_M):
            best_w, best_labels = w_next, labels_next
            k += 1
        else:
            break
    return best_labels


def assign_rows(buildings: list, axis: MainAxis) -> np.ndarray:
    """Row index in [0, 3] per building, ordered by signed axis offset."""
    if len(buildings) > N_NODES:
        raise GraphBuildError(f"too many buildings for the grid: {len(buildings)} > {N_NODES}")
    if not buildings:
        return np.zeros(0, dtype=np.int64)
    centers = np.array([[b.box.center.x, b.box.center.y] for b in buildings])
    _, offsets = axis.project(centers)
    return cluster_offsets(offsets)


def block_shape_feature(block: Polygon) -> BlockShapeFeature:
    """Rasterized mask, OBB-width scale, and the world-space main axis."""
    mask = rasterize(block)
    tf = mask_transform(block)
    obb = min_area_oriented_box(block)
    axis_world = main_axis(mask).to_world(tf)
    return BlockShapeFeature(block=block, mask=mask, l=obb.width, axis=axis_world, transform=tf)


def build_block_graph(block: Polygon, buildings: list,
                      shape: BlockShapeFeature | None = None) -> BlockGraph:
    """Slot each building into the 4x30 grid; empty slots get e=0."""
    if shape is None:
        shape = block_shape_feature(block)
    axis = shape.axis
    nodes = [EMPTY_NODE] * N_NODES

    if buildings:
        rows = assign_rows(buildings, axis)
        centers = np.array([[b.box.center.x, b.box.center.y] for b in buildings])
        ts, _ = axis.project(centers)
        for row in np.unique(rows):
            idx = np.where(rows == row)[0]
            if len(idx) > N_COLS:
                raise GraphBuildError(f"row {row} holds {len(idx)} buildings, grid has {N_COLS} columns")
            # Total deterministic order: arc position, then geometry.
            order = sorted(
                idx,
                key=lambda i: (
                    ts[i],
                    centers[i, 0],
                    centers[i, 1],
                    buildings[i].box.width,
                    buildings[i].box.height,
                ),
            )
            taken = set()
            for i in order:
                want = int(np.floor(ts[i] * (N_COLS - 1) + 0.5))
                col = _nearest_free(want, taken)
                taken.add(col)
                b = buildings[i]
                nodes[int(row) * N_COLS + col] = NodeFeatures(
                    e=1,
                    x=float(b.box.center.x),
                    y=float(b.box.center.y),
                    w=float(b.box.width),
                    h=float(b.box.height),
                    s=b.shape,
                    a=float(b.occupancy),
                )
    return BlockGraph(nodes=tuple(nodes), block=block, shape=shape)


def _nearest_free(want: int, taken) -> int:
    """Nearest unoccupied column, ties toward the lower index."""
    if want not in taken:
        return want
    for d in range(1, N_COLS):
        if want - d >= 0 and (want - d) not in taken:
            return want - d
        if want + d < N_COLS and (want + d) not in taken:
            return want + d
    raise GraphBuildError("no free column left")
