"""Main-axis extraction from block masks.

The axis is the pruned, endpoint-extended skeleton of the 64x64 block
mask: thin the mask to one pixel width, take the longest geodesic path,
drop short spurs, simplify, then push both endpoints out to the mask
boundary. The resulting polyline is the reference frame of the canonical
spatial transform.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import MASK_RESOLUTION, BinaryMask, GeometryError

SPUR_FRACTION = 0.10
DP_TOLERANCE_PX = 1.0
HW_TABLE_SIZE = 129
RAY_STEP_PX = 0.1

_EIGHT = np.ones((3, 3), dtype=np.uint8)


class SkeletonError(ValueError):
    """Raised for masks the skeletonizer cannot handle."""


@dataclass(frozen=True)
class MainAxis:
    """Block main axis in mask pixel coordinates with metric arc data.

    ``polyline``: (k,2) points (x=col-like, y=row-like, pixel units);
    ``cum_px``: per-vertex cumulative arc length in pixels;
    ``half_widths``: per-vertex local half-widths in meters;
    ``hw_table``: half-widths sampled at evenly spaced arc fractions;
    ``meters_per_pixel``: mask scale / resolution.
    """

    polyline: np.ndarray
    cum_px: np.ndarray
    half_widths: np.ndarray
    hw_table: np.ndarray
    meters_per_pixel: float

    def __post_init__(self):
        if len(self.polyline) < 2:
            raise SkeletonError("axis needs at least 2 points")
        if not np.all(np.diff(self.cum_px) > 0):
            raise SkeletonError("cumulative length must be strictly increasing")

    @property
    def cumulative_length(self) -> np.ndarray:
        """Per-vertex cumulative arc length in meters."""
        return self.cum_px * self.meters_per_pixel

    @property
    def length_m(self) -> float:
        return float(self.cum_px[-1] * self.meters_per_pixel)

    @property
    def length_px(self) -> float:
        return float(self.cum_px[-1])

    def point_at(self, t: float) -> np.ndarray:
        """Point (mask px) at arc-length fraction t in [0,1]."""
        s = np.clip(t, 0.0, 1.0) * self.cum_px[-1]
        i = int(np.searchsorted(self.cum_px, s, side="right") - 1)
        i = min(max(i, 0), len(self.polyline) - 2)
        seg = self.polyline[i + 1] - self.polyline[i]
        seg_len = self.cum_px[i + 1] - self.cum_px[i]
        u = (s - self.cum_px[i]) / seg_len
        return self.polyline[i] + u * seg

    def tangent_at(self, t: float) -> np.ndarray:
        """Unit tangent of the segment containing fraction t."""
        s = np.clip(t, 0.0, 1.0) * self.cum_px[-1]
        i = int(np.searchsorted(self.cum_px, s, side="right") - 1)
        i = min(max(i, 0), len(self.polyline) - 2)
        seg = self.polyline[i + 1] - self.polyline[i]
        return seg / np.linalg.norm(seg)

    def to_world(self, transform) -> "MainAxis":
        """Axis re-expressed in world meters via a mask transform.

        Half-widths are already metric; the polyline and cumulative arc
        lengths rescale, and the unit becomes meters (meters_per_pixel=1).
        """
        pts = transform.mask_to_world(self.polyline)
        return MainAxis(
            polyline=pts,
            cum_px=self.cum_px * self.meters_per_pixel,
            half_widths=self.half_widths,
            hw_table=self.hw_table,
            meters_per_pixel=1.0,
        )

    def project(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project points (mask px) onto the polyline.

        Returns (t, d_signed_px): arc-length fractions and signed
        perpendicular offsets in pixels (positive on the left of the
        tangent). Nearest segment wins; ties go to the lower index.
        """
        pts = np.atleast_2d(pts)
        a = self.polyline[:-1]
        b = self.polyline[1:]
        seg = b - a
        seg_len2 = np.sum(seg**2, axis=1)

        t_out = np.empty(len(pts))
        d_out = np.empty(len(pts))
        for k, p in enumerate(pts):
            u = np.clip(np.sum((p - a) * seg, axis=1) / seg_len2, 0.0, 1.0)
            proj = a + u[:, None] * seg
            diff = p - proj
            dist = np.hypot(diff[:, 0], diff[:, 1])
            i = int(np.argmin(dist))
            tan = seg[i] / math.sqrt(seg_len2[i])
            cross = tan[0] * diff[i, 1] - tan[1] * diff[i, 0]
            sign = 1.0 if cross >= 0 else -1.0
            t_out[k] = (self.cum_px[i] + u[i] * math.sqrt(seg_len2[i])) / self.cum_px[-1]
            d_out[k] = sign * dist[i]
        return t_out, d_out


def thin_mask(mask: BinaryMask) -> np.ndarray:
    """Zhang-Suen two-pass thinning; returns the skeleton as a bool grid."""
    img = mask.bits.astype(np.uint8)
    if img.sum() == 0:
        raise SkeletonError("empty mask")
    _, n_comp = ndimage.label(img, structure=_EIGHT)
    if n_comp != 1:
        raise SkeletonError(f"mask must have one component, found {n_comp}")

    pad = np.zeros((img.shape[0] + 2, img.shape[1] + 2), dtype=np.uint8)
    pad[1:-1, 1:-1] = img
    while True:
        removed_any = False
        for step in (0, 1):
            p = pad
            p2 = p[:-2, 1:-1]
            p3 = p[:-2, 2:]
            p4 = p[1:-1, 2:]
            p5 = p[2:, 2:]
            p6 = p[2:, 1:-1]
            p7 = p[2:, :-2]
            p8 = p[1:-1, :-2]
            p9 = p[:-2, :-2]
            ring = [p2, p3, p4, p5, p6, p7, p8, p9, p2]
            b_count = sum(ring[:-1])
            a_count = sum(((ring[i] == 0) & (ring[i + 1] == 1)) for i in range(8))
            base = (p[1:-1, 1:-1] == 1) & (b_count >= 2) & (b_count <= 6) & (a_count == 1)
            if step == 0:
                cond = base & (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
            else:
                cond = base & (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
            if cond.any():
                pad[1:-1, 1:-1][cond] = 0
                removed_any = True
        if not removed_any:
            break
    out = pad[1:-1, 1:-1].astype(bool)
    if not out.any():
        # Round blobs can vanish entirely (simultaneous deletion of a
        # symmetric core); keep the deepest interior pixel instead.
        depth = ndimage.distance_transform_edt(img)
        out[np.unravel_index(np.argmax(depth), depth.shape)] = True
    return out


def _skeleton_graph(skel: np.ndarray) -> dict:
    """8-neighborhood pixel graph with euclidean edge weights."""
    nodes = [tuple(rc) for rc in np.argwhere(skel)]
    node_set = set(nodes)
    adj = {n: [] for n in nodes}
    for r, c in nodes:
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                m = (r + dr, c + dc)
                if m in node_set:
                    adj[(r, c)].append((m, math.hypot(dr, dc)))
    return adj


def _dijkstra(adj: dict, src) -> tuple[dict, dict]:
    dist = {src: 0.0}
    prev = {}
    heap = [(0.0, src)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist.get(u, math.inf):
            continue
        for v, w in adj[u]:
            nd = d + w
            if nd < dist.get(v, math.inf) - 1e-12:
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    return dist, prev


def _farthest(dist: dict):
    # Deterministic: max distance, ties to lexicographically smallest pixel.
    return min(dist.items(), key=lambda kv: (-kv[1], kv[0]))


def _diameter_path(adj: dict) -> tuple[list, float]:
    start = min(adj)
    dist, _ = _dijkstra(adj, start)
    u, _ = _farthest(dist)
    dist_u, prev = _dijkstra(adj, u)
    v, diam = _farthest(dist_u)
    path = [v]
    while path[-1] != u:
        path.append(prev[path[-1]])
    return path[::-1], diam


def _prune_spurs(adj: dict, min_len: float) -> dict:
    """Iteratively remove endpoint chains shorter than min_len that end at a branch."""
    adj = {k: list(v) for k, v in adj.items()}
    while True:
        removed = False
        endpoints = [n for n, nb in adj.items() if len(nb) == 1]
        for ep in endpoints:
            if ep not in adj or len(adj[ep]) != 1:
                continue
            chain = [ep]
            length = 0.0
            cur, prev = ep, None
            while True:
                nbrs = [(m, w) for m, w in adj[cur] if m != prev]
                if len(adj[cur]) >= 3 and cur != ep:
                    break  # reached a branch point
                if not nbrs:
                    chain = None  # isolated path, not a spur
                    break
                if len(nbrs) > 1:
                    break
                m, w = nbrs[0]
                length += w
                if length >= min_len:
                    chain = None
                    break
                prev, cur = cur, m
                if len(adj[cur]) >= 3:
                    break
                chain.append(cur)
            if chain and len(adj.get(cur, [])) >= 3:
                for n in chain:
                    for m, _ in adj[n]:
                        adj[m] = [(q, w) for q, w in adj[m] if q != n]
                    del adj[n]
                removed = True
        if not removed:
            return adj


def _douglas_peucker(pts: np.ndarray, tol: float) -> np.ndarray:
    if len(pts) <= 2:
        return pts
    a, b = pts[0], pts[-1]
    ab = b - a
    norm = np.linalg.norm(ab)
    if norm < 1e-12:
        d = np.linalg.norm(pts - a, axis=1)
    else:
        rel = pts - a
        d = np.abs(ab[0] * rel[:, 1] - ab[1] * rel[:, 0]) / norm
    i = int(np.argmax(d))
    if d[i] <= tol:
        return np.array([a, b])
    left = _douglas_peucker(pts[: i + 1], tol)
    right = _douglas_peucker(pts[i:], tol)
    return np.concatenate([left[:-1], right])


def _inside(mask_bits: np.ndarray, pt: np.ndarray) -> bool:
    r, c = int(math.floor(pt[1])), int(math.floor(pt[0]))
    if 0 <= r < mask_bits.shape[0] and 0 <= c < mask_bits.shape[1]:
        return bool(mask_bits[r, c])
    return False


def _march_to_boundary(mask_bits: np.ndarray, start: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """First boundary crossing from an inside point along a unit direction."""
    step = RAY_STEP_PX
    prev = start.copy()
    t = step
    limit = 2 * MASK_RESOLUTION
    while t < limit:
        cur = start + t * direction
        if not _inside(mask_bits, cur):
            lo, hi = prev, cur
            for _ in range(20):
                mid = (lo + hi) / 2
                if _inside(mask_bits, mid):
                    lo = mid
                else:
                    hi = mid
            return (lo + hi) / 2
        prev = cur
        t += step
    return prev


def _ray_distance(mask_bits: np.ndarray, start: np.ndarray, direction: np.ndarray) -> float:
    if not _inside(mask_bits, start):
        return 0.0
    hit = _march_to_boundary(mask_bits, start, direction)
    return float(np.linalg.norm(hit - start))


def _longest_chord_axis(mask: BinaryMask, center_px: np.ndarray) -> np.ndarray:
    """Fallback axis for point-like skeletons: longest chord through the pixel."""
    best = None
    for deg in range(180):
        ang = math.radians(deg)
        d = np.array([math.cos(ang), math.sin(ang)])
        fwd = _march_to_boundary(mask.bits, center_px, d)
        back = _march_to_boundary(mask.bits, center_px, -d)
        chord = np.linalg.norm(fwd - back)
        if best is None or chord > best[0] + 1e-9:
            best = (chord, back, fwd)
    _, a, b = best
    return np.array([a, b])


def _half_width_at(mask: BinaryMask, point: np.ndarray, tangent: np.ndarray) -> float:
    normal = np.array([-tangent[1], tangent[0]])
    base = point
    if not _inside(mask.bits, base):
        # Endpoints sit on the boundary; probe from a nudged interior point.
        for nudge in (0.5, 1.0, 1.5):
            for d in (tangent, -tangent):
                cand = point + nudge * d
                if _inside(mask.bits, cand):
                    base = cand
                    break
            else:
                continue
            break
    d_pos = _ray_distance(mask.bits, base, normal)
    d_neg = _ray_distance(mask.bits, base, -normal)
    return (d_pos + d_neg) / 2.0 * mask.meters_per_pixel


def _build_axis(polyline: np.ndarray, mask: BinaryMask) -> MainAxis:
    seg_len = np.linalg.norm(np.diff(polyline, axis=0), axis=1)
    keep = np.concatenate([[True], seg_len > 1e-9])
    polyline = polyline[keep]
    if len(polyline) < 2:
        raise SkeletonError("axis collapsed to a point")
    # Canonical orientation: lexicographically smaller endpoint first.
    if tuple(polyline[-1]) < tuple(polyline[0]):
        polyline = polyline[::-1].copy()
    seg_len = np.linalg.norm(np.diff(polyline, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])

    def tangent_idx(i):
        j = min(i, len(polyline) - 2)
        seg = polyline[j + 1] - polyline[j]
        return seg / np.linalg.norm(seg)

    hw_vertex = np.array(
        [_half_width_at(mask, polyline[i], tangent_idx(i)) for i in range(len(polyline))]
    )

    fracs = np.linspace(0.0, 1.0, HW_TABLE_SIZE)
    table = np.empty(HW_TABLE_SIZE)
    total = cum[-1]
    for k, f in enumerate(fracs):
        s = f * total
        i = min(int(np.searchsorted(cum, s, side="right")) - 1, len(polyline) - 2)
        i = max(i, 0)
        u = (s - cum[i]) / (cum[i + 1] - cum[i])
        pt = polyline[i] + u * (polyline[i + 1] - polyline[i])
        table[k] = _half_width_at(mask, pt, tangent_idx(i))

    return MainAxis(
        polyline=polyline,
        cum_px=cum,
        half_widths=hw_vertex,
        hw_table=table,
        meters_per_pixel=mask.meters_per_pixel,
    )


def prune_to_main_axis(skel: np.ndarray, mask: BinaryMask) -> MainAxis:
    """Longest geodesic path through the skeleton, despurred, simplified,
    endpoint-extended to the mask boundary."""
    if not skel.any():
        raise SkeletonError("empty skeleton")
    pixels = np.argwhere(skel)
    if len(pixels) == 1:
        center = np.array([pixels[0][1] + 0.5, pixels[0][0] + 0.5])
        return _build_axis(_longest_chord_axis(mask, center), mask)

    adj = _skeleton_graph(skel)
    _, diam = _diameter_path(adj)
    if diam < 2.0:
        center = np.array([pixels[0][1] + 0.5, pixels[0][0] + 0.5])
        return _build_axis(_longest_chord_axis(mask, center), mask)

    pruned = _prune_spurs(adj, SPUR_FRACTION * diam)
    path, _ = _diameter_path(pruned)
    pts = np.array([[c + 0.5, r + 0.5] for r, c in path], dtype=np.float64)
    pts = _douglas_peucker(pts, DP_TOLERANCE_PX)

    # Extend the ends along their tangents to the mask boundary.
    head_dir = pts[0] - pts[1]
    head_dir /= np.linalg.norm(head_dir)
    tail_dir = pts[-1] - pts[-2]
    tail_dir /= np.linalg.norm(tail_dir)
    head = _march_to_boundary(mask.bits, pts[0], head_dir) if _inside(mask.bits, pts[0]) else pts[0]
    tail = _march_to_boundary(mask.bits, pts[-1], tail_dir) if _inside(mask.bits, pts[-1]) else pts[-1]
    pts = np.concatenate([[head], pts[1:-1], [tail]]) if len(pts) > 2 else np.array([head, tail])

    return _build_axis(pts, mask)


def main_axis(mask: BinaryMask) -> MainAxis:
    """Full pipeline: thin, prune, simplify, extend."""
    return prune_to_main_axis(thin_mask(mask), mask)


def local_half_width(axis: MainAxis, t: float) -> float:
    """Side-averaged perpendicular distance to the mask boundary, meters."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"arc-length fraction must be in [0,1], got {t}")
    pos = t * (HW_TABLE_SIZE - 1)
    i = min(int(math.floor(pos)), HW_TABLE_SIZE - 2)
    u = pos - i
    return float((1 - u) * axis.hw_table[i] + u * axis.hw_table[i + 1])
