"""Dataset persistence: one JSON object per block, newline-delimited.

Records carry everything downstream stages need (fits, both graph
forms, the conditioning feature) so loads never recompute geometry.
JSON float formatting is shortest-round-trip, hence saves are lossless.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass

import numpy as np

from ..canonical import CanonicalGraph, CanonicalNode, EMPTY_CANONICAL, to_canonical
from ..geometry import BinaryMask, MaskTransform, OrientedBox, Point2, Polygon
from ..graphrep import (
    EMPTY_NODE, N_NODES, BlockGraph, BlockShapeFeature, BuildingRecord,
    NodeFeatures, block_shape_feature, build_block_graph,
)
from ..shapefit import FitResult, ShapeParams, ShapeType, fit_building
from ..skeleton import MainAxis

TRAIN_FRACTION = 0.8

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    """Raised for unreadable or inconsistent dataset files."""


@dataclass(frozen=True)
class DatasetRecord:
    block_id: str
    split: str
    block: Polygon
    buildings: tuple
    fits: tuple
    graph: BlockGraph
    canonical: CanonicalGraph
    feature: BlockShapeFeature


def split_of(block_id: str, seed: int) -> str:
    """Deterministic 80/20 split from a seeded hash of the block id."""
    digest = hashlib.sha256(("%d:%s" % (seed, block_id)).encode()).digest()
    value = int.from_bytes(digest[:8], "big") / 2.0 ** 64
    return "train" if value < TRAIN_FRACTION else "val"


def build_record(group, seed: int = 0) -> DatasetRecord:
    """Fit every building and assemble both graph forms for one block."""
    fits = tuple(fit_building(p) for p in group.buildings)
    buildings = tuple(BuildingRecord.from_polygon(p, fit)
                      for p, fit in zip(group.buildings, fits))
    feature = block_shape_feature(group.block)
    graph = build_block_graph(group.block, list(buildings), shape=feature)
    return DatasetRecord(
        block_id=group.block_id,
        split=split_of(group.block_id, seed),
        block=group.block,
        buildings=buildings,
        fits=fits,
        graph=graph,
        canonical=to_canonical(graph),
        feature=feature,
    )


def build_dataset(groups, seed: int = 0, workers: int = 1):
    """Records for every block; failures are logged and skipped.

    Returns (records, n_failed).  `workers` > 1 fits blocks on a
    process pool; each block is independent.
    """
    records = []
    failed = 0
    if workers > 1:
        import multiprocessing

        with multiprocessing.Pool(workers) as pool:
            results = pool.starmap(_record_or_none,
                                   [(g, seed) for g in groups])
        for group, result in zip(groups, results):
            if result is None:
                failed += 1
            else:
                records.append(result)
    else:
        for group in groups:
            result = _record_or_none(group, seed)
            if result is None:
                failed += 1
            else:
                records.append(result)
    if failed:
        log.warning("%d block(s) failed to fit and were skipped", failed)
    return records, failed


def _record_or_none(group, seed):
    try:
        return build_record(group, seed)
    except Exception as exc:
        log.warning("block %s skipped: %s", group.block_id, exc)
        return None


# -- JSON encoding ------------------------------------------------------------

def _ring_list(polygon: Polygon):
    return polygon.ring.tolist()


def _node_row(node):
    return [int(node.e), node.x, node.y, node.w, node.h, int(node.s),
            node.a]


def _box_dict(box: OrientedBox):
    return {"cx": box.center.x, "cy": box.center.y, "w": box.width,
            "h": box.height, "angle": box.angle}


def record_to_json(record: DatasetRecord) -> dict:
    axis = record.feature.axis
    tf = record.feature.transform
    return {
        "id": record.block_id,
        "split": record.split,
        "block": _ring_list(record.block),
        "buildings": [_ring_list(b.footprint) for b in record.buildings],
        "boxes": [_box_dict(b.box) for b in record.buildings],
        "fits": [{
            "shape": int(f.shape), "occupancy": f.occupancy, "iou": f.iou,
            "hausdorff": f.hausdorff,
            "fractions": list(f.params.fractions),
            "flip": bool(f.params.flip),
        } for f in record.fits],
        "graph": [_node_row(n) for n in record.graph.nodes],
        "canonical": [_node_row(n) for n in record.canonical.nodes],
        "feature": {
            "mask_hex": np.packbits(record.feature.mask.bits).tobytes().hex(),
            "mask_scale": record.feature.mask.scale,
            "l": record.feature.l,
            "axis": {
                "polyline": axis.polyline.tolist(),
                "cum": axis.cum_px.tolist(),
                "half_widths": axis.half_widths.tolist(),
                "hw_table": axis.hw_table.tolist(),
                "m_per_px": axis.meters_per_pixel,
            },
            "transform": {
                "center": tf.center.tolist(),
                "angle": tf.angle,
                "pix_per_m": tf.pix_per_m,
                "resolution": tf.resolution,
            },
        },
    }


def record_from_json(doc: dict) -> DatasetRecord:
    block = Polygon(np.asarray(doc["block"]))
    fits = tuple(FitResult(
        shape=ShapeType(f["shape"]), occupancy=f["occupancy"],
        iou=f["iou"], hausdorff=f["hausdorff"],
        params=ShapeParams(ShapeType(f["shape"]),
                           tuple(f["fractions"]), bool(f["flip"])),
    ) for f in doc["fits"])
    buildings = tuple(BuildingRecord(
        footprint=Polygon(np.asarray(ring)),
        box=OrientedBox(center=Point2(b["cx"], b["cy"]), width=b["w"],
                        height=b["h"], angle=b["angle"]),
        shape=fit.shape, occupancy=fit.occupancy,
    ) for ring, b, fit in zip(doc["buildings"], doc["boxes"], fits))
    fdoc = doc["feature"]
    mask_bits = np.unpackbits(np.frombuffer(
        bytes.fromhex(fdoc["mask_hex"]), dtype=np.uint8))
    resolution = fdoc["transform"]["resolution"]
    mask = BinaryMask(mask_bits.reshape(resolution, resolution),
                      fdoc["mask_scale"])
    axis = MainAxis(
        polyline=np.asarray(fdoc["axis"]["polyline"]),
        cum_px=np.asarray(fdoc["axis"]["cum"]),
        half_widths=np.asarray(fdoc["axis"]["half_widths"]),
        hw_table=np.asarray(fdoc["axis"]["hw_table"]),
        meters_per_pixel=fdoc["axis"]["m_per_px"],
    )
    transform = MaskTransform(
        center=np.asarray(fdoc["transform"]["center"]),
        angle=fdoc["transform"]["angle"],
        pix_per_m=fdoc["transform"]["pix_per_m"],
        resolution=resolution,
    )
    feature = BlockShapeFeature(block=block, mask=mask, l=fdoc["l"],
                                axis=axis, transform=transform)

    def node_from(row, empty, cls):
        if row[0] == 0:
            return empty
        return cls(e=1, x=row[1], y=row[2], w=row[3], h=row[4],
                   s=ShapeType(row[5]), a=row[6])

    for key in ("graph", "canonical"):
        if len(doc[key]) != N_NODES:
            raise DatasetError(
                f"record {doc.get('id')}: {key} has {len(doc[key])} "
                f"node rows, expected {N_NODES}")
    graph = BlockGraph(
        nodes=tuple(node_from(r, EMPTY_NODE, NodeFeatures)
                    for r in doc["graph"]),
        block=block, shape=feature)
    canonical = CanonicalGraph(
        nodes=tuple(node_from(r, EMPTY_CANONICAL, CanonicalNode)
                    for r in doc["canonical"]))
    return DatasetRecord(
        block_id=doc["id"], split=doc["split"], block=block,
        buildings=buildings, fits=fits, graph=graph, canonical=canonical,
        feature=feature)


def save_dataset(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_json(record),
                                separators=(",", ":")))
            fh.write("\n")


def load_dataset(path) -> list:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(record_from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise DatasetError("bad record on line %d: %s"
                                   % (lineno, exc)) from exc
    ids = [r.block_id for r in records]
    if len(set(ids)) != len(ids):
        raise DatasetError("duplicate block ids in dataset")
    return records
