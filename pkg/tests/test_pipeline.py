"""Pipeline tests: projection vs a haversine oracle, ingest contract
enforcement, lossless dataset round trips, SVG/report artifacts, config
layering, and CLI exit codes."""

import csv
import json
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from blocklayout.geometry import Polygon
from blocklayout.pipeline import cli
from blocklayout.pipeline.config import ConfigError, Settings, parse_config
from blocklayout.pipeline.dataset import (
    DatasetError, build_record, load_dataset, record_from_json,
    record_to_json, save_dataset, split_of,
)
from blocklayout.pipeline.ingest import (
    EARTH_RADIUS_M, BlockGroup, IngestError, equirectangular,
    ingest_geojson, inverse_equirectangular,
)
from blocklayout.pipeline.render import render_svg
from blocklayout.pipeline.report import training_figure, write_report
from blocklayout.shapefit import ShapeType

ORIGIN = np.array([8.54, 47.37])
SVG = "{http://www.w3.org/2000/svg}"


def rect_ring(cx, cy, w, h):
    return np.array([[cx - w / 2, cy - h / 2], [cx + w / 2, cy - h / 2],
                     [cx + w / 2, cy + h / 2], [cx - w / 2, cy + h / 2]])


def lonlat_ring(ring_m):
    """Metric ring to a closed GeoJSON lon/lat ring about ORIGIN."""
    ring = inverse_equirectangular(np.asarray(ring_m, float), ORIGIN)
    closed = np.vstack([ring, ring[:1]])
    return [[float(x), float(y)] for x, y in closed]


def feature_dict(kind, block_id, rings):
    props = {}
    if kind is not None:
        props["kind"] = kind
    if block_id is not None:
        props["block_id"] = block_id
    return {"type": "Feature", "properties": props,
            "geometry": {"type": "Polygon", "coordinates": rings}}


def write_collection(path, features):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"type": "FeatureCollection", "features": features}, fh)


def mini_city(path, n_blocks=2):
    """Rectangular blocks with three rectangular buildings each."""
    features = []
    for i in range(n_blocks):
        cy = 220.0 * i
        features.append(feature_dict(
            "block", "blk%d" % i, [lonlat_ring(rect_ring(0, cy, 120, 36))]))
        for cx in (-40.0, 5.0, 45.0):
            features.append(feature_dict(
                "building", "blk%d" % i,
                [lonlat_ring(rect_ring(cx, cy, 12, 9))]))
    write_collection(path, features)


# -- projection ---------------------------------------------------------------

def haversine_m(a, b):
    lon1, lat1 = math.radians(a[0]), math.radians(a[1])
    lon2, lat2 = math.radians(b[0]), math.radians(b[1])
    s = (math.sin((lat2 - lat1) / 2.0) ** 2
         + math.cos(lat1) * math.cos(lat2)
         * math.sin((lon2 - lon1) / 2.0) ** 2)
    return 2.0 * EARTH_RADIUS_M * math.asin(math.sqrt(s))


def test_projection_matches_haversine_at_city_scale():
    rng = np.random.default_rng(0)
    pts = np.column_stack([
        ORIGIN[0] + rng.uniform(-0.015, 0.015, 64),
        ORIGIN[1] + rng.uniform(-0.011, 0.011, 64)])
    xy = equirectangular(pts, ORIGIN)
    checked = 0
    for i in range(0, 64, 2):
        truth = haversine_m(pts[i], pts[i + 1])
        if truth < 50.0:
            continue  # relative error is meaningless near coincidence
        dist = float(np.hypot(*(xy[i] - xy[i + 1])))
        assert abs(dist - truth) / truth < 1e-3
        checked += 1
    assert checked >= 25


def test_projection_round_trip_and_scale():
    rng = np.random.default_rng(1)
    pts = ORIGIN + rng.uniform(-0.02, 0.02, size=(40, 2))
    back = inverse_equirectangular(equirectangular(pts, ORIGIN), ORIGIN)
    assert np.allclose(back, pts, atol=1e-12)
    # A degree of latitude spans R*pi/180 meters; longitude shrinks by
    # cos(lat) and never leaks into y.
    north = equirectangular(ORIGIN + [0.0, 0.01], ORIGIN)
    assert north[1] == pytest.approx(EARTH_RADIUS_M * math.radians(0.01))
    assert abs(north[0]) < 1e-9
    east = equirectangular(ORIGIN + [0.01, 0.0], ORIGIN)
    assert east[0] == pytest.approx(
        EARTH_RADIUS_M * math.radians(0.01) * math.cos(math.radians(47.37)))
    assert abs(east[1]) < 1e-9


# -- ingest -------------------------------------------------------------------

def test_ingest_mini_city(tmp_path):
    path = tmp_path / "city.geojson"
    mini_city(path, n_blocks=2)
    groups = ingest_geojson(path)
    assert [g.block_id for g in groups] == ["blk0", "blk1"]
    for g in groups:
        assert len(g.buildings) == 3
        # axis-aligned input stays axis-aligned; sizes survive in meters
        width = g.block.ring[:, 0].max() - g.block.ring[:, 0].min()
        depth = g.block.ring[:, 1].max() - g.block.ring[:, 1].min()
        assert width == pytest.approx(120.0, rel=2e-3)
        assert depth == pytest.approx(36.0, rel=2e-3)
        hull = g.block.shapely.buffer(0.01)
        assert all(hull.contains(b.shapely) for b in g.buildings)


def test_ingest_rejects_blocks_with_holes(tmp_path, caplog):
    path = tmp_path / "holes.geojson"
    holed = feature_dict("block", "ring", [
        lonlat_ring(rect_ring(0, 0, 100, 40)),
        lonlat_ring(rect_ring(0, 0, 10, 5))])
    solid = feature_dict("block", "solid",
                         [lonlat_ring(rect_ring(0, 200, 100, 40))])
    orphaned = feature_dict("building", "ring",
                            [lonlat_ring(rect_ring(0, 0, 8, 6))])
    write_collection(path, [holed, solid, orphaned])
    with caplog.at_level("WARNING"):
        groups = ingest_geojson(path)
    # rejection is logged, not fatal, and silences the orphan check
    assert [g.block_id for g in groups] == ["solid"]
    assert any("interior ring" in r.getMessage() for r in caplog.records)


def test_ingest_skips_degenerate_buildings(tmp_path, caplog):
    path = tmp_path / "degenerate.geojson"
    collinear = np.array([[0.0, 0.0], [10.0, 0.0], [20.0, 0.0], [30.0, 0.0]])
    bowtie = np.array([[0.0, 0.0], [10.0, 10.0], [10.0, 0.0], [0.0, 10.0]])
    write_collection(path, [
        feature_dict("block", "a", [lonlat_ring(rect_ring(0, 0, 100, 40))]),
        feature_dict("building", "a", [lonlat_ring(collinear)]),
        feature_dict("building", "a", [lonlat_ring(bowtie)]),
        feature_dict("building", "a", [lonlat_ring(rect_ring(0, 0, 8, 6))]),
    ])
    with caplog.at_level("WARNING"):
        groups = ingest_geojson(path)
    assert len(groups) == 1 and len(groups[0].buildings) == 1
    assert sum("rejected" in r.getMessage() for r in caplog.records) == 2


def test_ingest_contract_violations(tmp_path):
    block = feature_dict("block", "a",
                         [lonlat_ring(rect_ring(0, 0, 100, 40))])
    cases = [
        ("kind", [block, feature_dict("road", "a",
                                      [lonlat_ring(rect_ring(0, 0, 8, 6))])]),
        ("block_id", [block, feature_dict("building", None,
                                          [lonlat_ring(rect_ring(0, 0, 8, 6))])]),
        ("duplicate", [block, block]),
        ("unknown block_id", [block, feature_dict(
            "building", "nowhere", [lonlat_ring(rect_ring(0, 0, 8, 6))])]),
    ]
    for match, features in cases:
        path = tmp_path / ("%s.geojson" % match.split()[0])
        write_collection(path, features)
        with pytest.raises(IngestError, match=match):
            ingest_geojson(path)


def test_ingest_rejects_malformed_documents(tmp_path):
    path = tmp_path / "list.geojson"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([1, 2, 3], fh)
    with pytest.raises(IngestError, match="FeatureCollection"):
        ingest_geojson(path)

    path = tmp_path / "broken.geojson"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(IngestError, match="JSON"):
        ingest_geojson(path)

    path = tmp_path / "line.geojson"
    write_collection(path, [{
        "type": "Feature",
        "properties": {"kind": "block", "block_id": "a"},
        "geometry": {"type": "LineString",
                     "coordinates": [[8.54, 47.37], [8.55, 47.37]]},
    }])
    with pytest.raises(IngestError, match="Polygon"):
        ingest_geojson(path)

    path = tmp_path / "empty.geojson"
    write_collection(path, [])
    assert ingest_geojson(path) == []


# -- dataset ------------------------------------------------------------------

def test_split_fraction_and_determinism():
    ids = ["blk%04d" % i for i in range(1000)]
    marks = [split_of(bid, seed=0) for bid in ids]
    assert set(marks) == {"train", "val"}
    assert abs(marks.count("train") / 1000.0 - 0.8) < 0.02
    assert marks == [split_of(bid, seed=0) for bid in ids]
    assert marks != [split_of(bid, seed=1) for bid in ids]


@pytest.fixture(scope="module")
def round_trip_records(toy_city):
    # the two smallest blocks keep the refit cost down
    order = np.argsort([len(b) for b in toy_city["buildings"]])
    groups = [BlockGroup(block_id="rt%03d" % i,
                         block=toy_city["blocks"][i],
                         buildings=tuple(b.footprint
                                         for b in toy_city["buildings"][i]))
              for i in order[:2]]
    records = [build_record(g, seed=3) for g in groups]
    assert sum(len(r.buildings) for r in records) >= 1
    return records


def test_dataset_round_trip_is_lossless(tmp_path, round_trip_records):
    path = tmp_path / "city.ndjson"
    save_dataset(round_trip_records, path)
    loaded = load_dataset(path)
    assert len(loaded) == len(round_trip_records)
    for a, b in zip(round_trip_records, loaded):
        assert (a.block_id, a.split) == (b.block_id, b.split)
        assert np.array_equal(a.block.ring, b.block.ring)
        assert a.graph.nodes == b.graph.nodes
        assert a.canonical.nodes == b.canonical.nodes
        assert a.fits == b.fits
        assert len(a.buildings) == len(b.buildings)
        for x, y in zip(a.buildings, b.buildings):
            assert np.array_equal(x.footprint.ring, y.footprint.ring)
            assert x.box == y.box
            assert (x.shape, x.occupancy) == (y.shape, y.occupancy)
        fa, fb = a.feature, b.feature
        assert np.array_equal(fa.mask.bits, fb.mask.bits)
        assert fa.mask.scale == fb.mask.scale
        assert fa.l == fb.l
        assert np.array_equal(fa.axis.polyline, fb.axis.polyline)
        assert np.array_equal(fa.axis.cum_px, fb.axis.cum_px)
        assert np.array_equal(fa.axis.half_widths, fb.axis.half_widths)
        assert np.array_equal(fa.axis.hw_table, fb.axis.hw_table)
        assert fa.axis.meters_per_pixel == fb.axis.meters_per_pixel
        assert np.array_equal(fa.transform.center, fb.transform.center)
        assert fa.transform.angle == fb.transform.angle
        assert fa.transform.pix_per_m == fb.transform.pix_per_m
        assert fa.transform.resolution == fb.transform.resolution


def test_corrupt_node_rows_rejected(round_trip_records):
    doc = record_to_json(round_trip_records[0])
    short = json.loads(json.dumps(doc))
    short["graph"] = short["graph"][:-1]
    with pytest.raises(DatasetError, match="expected 120"):
        record_from_json(short)
    long = json.loads(json.dumps(doc))
    long["canonical"] = long["canonical"] + [long["canonical"][-1]]
    with pytest.raises(DatasetError, match="canonical"):
        record_from_json(long)


def test_load_dataset_reports_bad_lines(tmp_path, round_trip_records):
    path = tmp_path / "broken.ndjson"
    save_dataset(round_trip_records[:1], path)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write("{not json}\n")
    with pytest.raises(DatasetError, match="line 2"):
        load_dataset(path)


def test_load_dataset_rejects_duplicate_ids(tmp_path, round_trip_records):
    path = tmp_path / "dup.ndjson"
    save_dataset([round_trip_records[0], round_trip_records[0]], path)
    with pytest.raises(DatasetError, match="duplicate"):
        load_dataset(path)


# -- SVG ----------------------------------------------------------------------

def test_svg_structure(tmp_path):
    block = Polygon(rect_ring(0, 0, 40, 20))
    b1 = Polygon(rect_ring(-10, 0, 8, 6))
    b2 = Polygon(rect_ring(10, 0, 8, 6))
    b3 = Polygon(rect_ring(100, 5, 8, 6))
    path = tmp_path / "scene.svg"
    render_svg([
        {"block": block, "label": "blk-a",
         "buildings": [(b1, ShapeType.RECT), (b2, ShapeType.L)]},
        {"block": None, "buildings": [(b3, ShapeType.U)], "label": None},
    ], path)
    root = ET.parse(path).getroot()
    assert root.tag == SVG + "svg"
    groups = root.findall(SVG + "g")
    assert len(groups) == 2
    assert groups[0].get("data-label") == "blk-a"
    assert groups[1].get("data-label") is None
    paths = root.findall(".//" + SVG + "path")
    assert len(paths) == 4
    fills = [p.get("fill") for p in paths]
    assert fills[0] == "none"    # block is an outline
    assert len(set(fills[1:])) == 3    # taxonomy gets distinct colors
    # viewBox covers everything with the 10 m margin; y axis is flipped
    min_x, min_y, w, h = map(float, root.get("viewBox").split())
    assert min_x == pytest.approx(-30.0)
    assert min_y == pytest.approx(-20.0)
    assert w == pytest.approx(144.0)
    assert h == pytest.approx(40.0)
    # b3 sits at y in [2, 8], so its rendered ys are all negative
    tokens = paths[3].get("d").replace("M", " ").replace("L", " ") \
        .replace("Z", " ").split()
    ys = [float(v) for v in tokens[1::2]]
    assert all(y < 0 for y in ys)


def test_svg_empty_scene_is_valid(tmp_path):
    path = tmp_path / "empty.svg"
    render_svg([], path)
    root = ET.parse(path).getroot()
    assert root.get("viewBox") == "0 0 1 1"
    assert len(list(root)) == 0


# -- reports ------------------------------------------------------------------

def test_write_report_artifacts(tmp_path):
    breakdown = [
        {"block_id": "a", "n_buildings": 3, "layout_sim": 52.5,
         "overlap_pct": 1.25, "out_block_pct": 0.0,
         "position_err_pct": 2.5, "coverage_err_pct": 3.0},
        {"block_id": "b", "n_buildings": 5, "layout_sim": 48.0,
         "overlap_pct": 0.5, "out_block_pct": 0.1,
         "position_err_pct": None, "coverage_err_pct": 1.0},
    ]
    aggregate = {"layout_sim": 50.25, "n_blocks": 2}
    json_path, csv_path, png_path = write_report(
        tmp_path / "report", aggregate, breakdown)
    with open(json_path, encoding="utf-8") as fh:
        doc = json.load(fh)
    assert doc["aggregate"] == aggregate
    assert doc["per_block"] == breakdown
    with open(csv_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["block_id"] for r in rows] == ["a", "b"]
    assert float(rows[0]["layout_sim"]) == 52.5
    assert rows[1]["position_err_pct"] == ""    # null metric stays blank
    assert png_path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_training_figure(tmp_path):
    history = [{"total": 10.0 * 0.99 ** i + 0.05} for i in range(250)]
    path = tmp_path / "loss.png"
    training_figure(path, history)
    assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    short = tmp_path / "short.png"
    training_figure(short, history[:5])    # below the smoothing window
    assert short.exists()


# -- config -------------------------------------------------------------------

def test_parse_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment only\n"
                    "seed = 12\n"
                    "lr=0.5  # trailing comment\n"
                    "\n"
                    "name = night run\n", encoding="utf-8")
    assert parse_config(path) == {"seed": "12", "lr": "0.5",
                                  "name": "night run"}


def test_parse_config_rejects_bad_lines(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("seed = 1\nepochs\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="line 2"):
        parse_config(path)


def test_settings_precedence():
    settings = Settings(defaults={"seed": "0", "k": "5", "sigma": "0.1"},
                        file_values={"seed": "3", "out": "file.svg"},
                        overrides={"seed": 7, "out": None})
    assert settings.get_int("seed") == 7    # CLI wins
    assert settings.get_str("out") == "file.svg"    # None falls through
    assert settings.get_int("k") == 5    # defaults fill the rest
    assert settings.get_float("sigma") == 0.1
    assert settings.get_str("missing") is None
    assert settings.get_int("missing", 9) == 9
    with pytest.raises(ConfigError, match="integer"):
        Settings(defaults={"k": "five"}).get_int("k")


# -- CLI ----------------------------------------------------------------------

def test_cli_pipeline_happy_path(tmp_path, capsys):
    gj = tmp_path / "city.geojson"
    mini_city(gj, n_blocks=2)
    nd = tmp_path / "city.ndjson"
    assert cli.main(["ingest", "--input", str(gj), "--out", str(nd)]) == 0
    docs = [json.loads(l) for l in nd.read_text().splitlines()]
    assert [d["id"] for d in docs] == ["blk0", "blk1"]
    assert all(len(d["buildings"]) == 3 for d in docs)

    fits = tmp_path / "fits.ndjson"
    assert cli.main(["fit-shapes", "--input", str(nd),
                     "--out", str(fits)]) == 0
    fitted = [json.loads(l) for l in fits.read_text().splitlines()]
    assert all(f["shape"] == int(ShapeType.RECT) and f["iou"] > 0.95
               for d in fitted for f in d["fits"])

    ds = tmp_path / "city.dataset.ndjson"
    assert cli.main(["build-dataset", "--input", str(nd), "--out", str(ds),
                     "--seed", "0"]) == 0
    records = load_dataset(ds)
    assert len(records) == 2
    assert all(len(r.buildings) == 3 for r in records)

    svg = tmp_path / "truth.svg"
    assert cli.main(["render", "--dataset", str(ds), "--split", "all",
                     "--out", str(svg)]) == 0
    root = ET.parse(svg).getroot()
    assert len(root.findall(SVG + "g")) == 2
    assert len(root.findall(".//" + SVG + "path")) == 8


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main([]) == 1
    assert cli.main(["frobnicate"]) == 1
    assert cli.main(["--help"]) == 0
    assert cli.main(["ingest", "--input", str(tmp_path / "nope.geojson"),
                     "--out", str(tmp_path / "o.ndjson")]) == 1

    gj = tmp_path / "ok.geojson"
    mini_city(gj, n_blocks=1)
    # generate without a checkpoint is a user error
    assert cli.main(["generate", "--blocks", str(gj),
                     "--out", str(tmp_path / "g.svg")]) == 1
    assert cli.main(["ingest", "--config", str(tmp_path / "nope.cfg"),
                     "--input", str(gj),
                     "--out", str(tmp_path / "o.ndjson")]) == 1
    bad_cfg = tmp_path / "bad.cfg"
    bad_cfg.write_text("epochs\n", encoding="utf-8")
    assert cli.main(["ingest", "--config", str(bad_cfg), "--input", str(gj),
                     "--out", str(tmp_path / "o2.ndjson")]) == 1
    # writing onto a directory is nobody's contract: internal error
    assert cli.main(["ingest", "--input", str(gj),
                     "--out", str(tmp_path)]) == 2
