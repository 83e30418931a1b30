"""GeoJSON ingestion: lon/lat feature collections to metric block groups.

Input features carry properties "kind" ("block" or "building") and
"block_id".  Coordinates are projected onto a local tangent plane with
an equirectangular projection about the dataset centroid, adequate for
city-scale extents.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from ..geometry import GeometryError, Polygon

EARTH_RADIUS_M = 6371000.0

log = logging.getLogger(__name__)


class IngestError(ValueError):
    """Raised for files that violate the ingestion contract."""


@dataclass(frozen=True)
class BlockGroup:
    block_id: str
    block: Polygon
    buildings: tuple


def equirectangular(lonlat: np.ndarray, origin: np.ndarray) -> np.ndarray:
    """Project (lon, lat) degrees to meters about `origin` (lon, lat)."""
    lonlat = np.asarray(lonlat, dtype=np.float64)
    rad = np.radians(lonlat)
    origin_rad = np.radians(np.asarray(origin, dtype=np.float64))
    x = (rad[..., 0] - origin_rad[0]) * np.cos(origin_rad[1]) * EARTH_RADIUS_M
    y = (rad[..., 1] - origin_rad[1]) * EARTH_RADIUS_M
    return np.stack([x, y], axis=-1)


def inverse_equirectangular(xy: np.ndarray, origin: np.ndarray) -> np.ndarray:
    """Meters back to (lon, lat) degrees; inverse of `equirectangular`."""
    xy = np.asarray(xy, dtype=np.float64)
    origin_rad = np.radians(np.asarray(origin, dtype=np.float64))
    lon = origin_rad[0] + xy[..., 0] / (EARTH_RADIUS_M
                                        * np.cos(origin_rad[1]))
    lat = origin_rad[1] + xy[..., 1] / EARTH_RADIUS_M
    return np.degrees(np.stack([lon, lat], axis=-1))


def _feature_ring(feature):
    geometry = feature.get("geometry") or {}
    if geometry.get("type") != "Polygon":
        raise IngestError("only Polygon geometries are supported, got %r"
                          % geometry.get("type"))
    rings = geometry.get("coordinates") or []
    if not rings:
        raise IngestError("polygon has no coordinate rings")
    outer = np.asarray(rings[0], dtype=np.float64)
    holes = len(rings) - 1
    return outer, holes


def ingest_geojson(path) -> list:
    """Parse a feature collection into metric BlockGroups.

    Blocks with interior rings are rejected (logged, not fatal);
    buildings keep whatever position they have, straddling or not.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise IngestError("not valid JSON: %s" % exc) from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise IngestError("expected a FeatureCollection")
    features = doc.get("features", [])
    blocks = {}
    buildings = {}
    order = []
    rings = []
    parsed = []
    for feature in features:
        props = feature.get("properties") or {}
        kind = props.get("kind")
        if kind not in ("block", "building"):
            raise IngestError("feature kind must be block or building, "
                              "got %r" % kind)
        block_id = props.get("block_id")
        if block_id is None:
            raise IngestError("feature is missing block_id")
        ring, holes = _feature_ring(feature)
        parsed.append((kind, str(block_id), ring, holes))
        rings.append(ring)
    if not parsed:
        return []
    origin = np.vstack(rings).mean(axis=0)
    rejected = set()
    for kind, block_id, ring, holes in parsed:
        xy = equirectangular(ring, origin)
        if kind == "block":
            if holes:
                log.warning("block %s rejected: %d interior ring(s)",
                            block_id, holes)
                rejected.add(block_id)
                continue
            if block_id in blocks:
                raise IngestError("duplicate block_id %r" % block_id)
            try:
                blocks[block_id] = Polygon(xy)
            except GeometryError as exc:
                log.warning("block %s rejected: %s", block_id, exc)
                rejected.add(block_id)
                continue
            order.append(block_id)
        else:
            try:
                poly = Polygon(xy)
            except GeometryError as exc:
                log.warning("building in block %s rejected: %s",
                            block_id, exc)
                continue
            buildings.setdefault(block_id, []).append(poly)
    orphans = set(buildings) - set(blocks) - rejected
    if orphans:
        raise IngestError("buildings reference unknown block_id(s): %s"
                          % sorted(orphans))
    return [BlockGroup(block_id=bid, block=blocks[bid],
                       buildings=tuple(buildings.get(bid, ())))
            for bid in order]
