"""Command-line interface wiring all pipeline stages together.

Every subcommand reads an optional key=value config file; the flags
--seed, --epochs, --checkpoint, --out override config values.  Exit
codes: 0 success, 1 user error, 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..canonical import from_canonical
from ..generator import (
    GeneratorConfig, LayoutGenerator, decode_canonical, generate_canonical,
    load_checkpoint, posterior_latent, save_checkpoint, train_layout_vae,
    train_shape_encoder, shape_input, GeneratorError,
)
from ..geometry import GeometryError, Polygon
from ..graphrep import block_shape_feature
from ..latentops import interpolate, sparse_prior_latent
from ..metrics import (
    MetricError, bbox_wasserstein, count_wasserstein, coverage_error,
    layout_sim, out_block_index, overlap_index, position_error,
)
from ..shapefit import fit_building
from ..synthesis import realize_block
from .config import ConfigError, Settings, parse_config
from .dataset import (
    DatasetError, build_dataset, load_dataset, save_dataset,
)
from .ingest import BlockGroup, IngestError, ingest_geojson
from .render import render_svg
from .report import training_figure, write_report

log = logging.getLogger("blocklayout")

DEFAULTS = {
    "seed": "0",
    "epochs": "50",
    "workers": "1",
    "batch_size": "32",
    "width": "128",
    "latent_dim": "512",
    "shape_dim": "64",
    "encoder_steps": "400",
    "k": "5",
    "sigma": "0.1",
    "alpha_steps": "5",
}


class UserError(Exception):
    """Input problems the user can fix; mapped to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write("error: %s\n" % message)
        raise SystemExit(1)


def _settings(args) -> Settings:
    file_values = {}
    if args.config:
        try:
            file_values = parse_config(args.config)
        except FileNotFoundError as exc:
            raise UserError("config file not found: %s" % args.config) \
                from exc
    overrides = {k: v for k, v in vars(args).items() if v is not None}
    return Settings(DEFAULTS, file_values, overrides)


def _require_file(path, what) -> Path:
    path = Path(path)
    if not path.is_file():
        raise UserError("%s not found: %s" % (what, path))
    return path


def _load_groups(path) -> list:
    """Groups from either a .geojson collection or an ingested .ndjson."""
    path = _require_file(path, "input file")
    if path.suffix.lower() == ".ndjson":
        groups = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                doc = json.loads(line)
                groups.append(BlockGroup(
                    block_id=doc["id"],
                    block=Polygon(np.asarray(doc["block"])),
                    buildings=tuple(Polygon(np.asarray(r))
                                    for r in doc["buildings"]),
                ))
        return groups
    return ingest_geojson(path)


def _load_generator(settings) -> LayoutGenerator:
    checkpoint = settings.get_str("checkpoint")
    if not checkpoint:
        raise UserError("--checkpoint is required")
    _require_file(checkpoint, "checkpoint")
    return load_checkpoint(checkpoint)


def _scene(block, buildings, label=None) -> dict:
    return {"block": block, "label": label,
            "buildings": [(b.footprint, b.shape) for b in buildings]}


# -- subcommand implementations ------------------------------------------------

def cmd_ingest(args):
    settings = _settings(args)
    out = settings.get_str("out")
    if not out:
        raise UserError("--out is required")
    groups = ingest_geojson(_require_file(args.input, "input file"))
    with open(out, "w", encoding="utf-8") as fh:
        for g in groups:
            fh.write(json.dumps({
                "id": g.block_id,
                "block": g.block.ring.tolist(),
                "buildings": [b.ring.tolist() for b in g.buildings],
            }, separators=(",", ":")))
            fh.write("\n")
    print("ingested %d block(s) -> %s" % (len(groups), out))
    return 0


def cmd_fit_shapes(args):
    settings = _settings(args)
    out = settings.get_str("out")
    if not out:
        raise UserError("--out is required")
    groups = _load_groups(args.input)
    with open(out, "w", encoding="utf-8") as fh:
        for g in groups:
            fits = [fit_building(p) for p in g.buildings]
            fh.write(json.dumps({
                "id": g.block_id,
                "fits": [{
                    "shape": int(f.shape), "occupancy": f.occupancy,
                    "iou": f.iou, "hausdorff": f.hausdorff,
                    "fractions": list(f.params.fractions),
                    "flip": bool(f.params.flip),
                } for f in fits],
            }, separators=(",", ":")))
            fh.write("\n")
    print("fitted %d block(s) -> %s" % (len(groups), out))
    return 0


def cmd_build_dataset(args):
    settings = _settings(args)
    out = settings.get_str("out")
    if not out:
        raise UserError("--out is required")
    seed = settings.get_int("seed")
    workers = settings.get_int("workers")
    groups = _load_groups(args.input)
    records, failed = build_dataset(groups, seed=seed, workers=workers)
    save_dataset(records, out)
    print("dataset: %d record(s) (%d skipped) -> %s"
          % (len(records), failed, out))
    return 0


def _generator_config(settings) -> GeneratorConfig:
    return GeneratorConfig(
        width=settings.get_int("width"),
        latent_dim=settings.get_int("latent_dim"),
        shape_dim=settings.get_int("shape_dim"),
    )


def cmd_train_shape_encoder(args):
    settings = _settings(args)
    out = settings.get_str("out")
    if not out:
        raise UserError("--out is required")
    seed = settings.get_int("seed")
    records = load_dataset(_require_file(args.dataset, "dataset"))
    train = [r for r in records if r.split == "train"]
    if not train:
        raise UserError("dataset has no training records")
    checkpoint = settings.get_str("checkpoint")
    if checkpoint:
        generator = load_checkpoint(_require_file(checkpoint,
                                                  "checkpoint"))
    else:
        generator = LayoutGenerator(_generator_config(settings),
                                    seed=seed)
    steps = settings.get_int("encoder_steps")
    images = np.stack([
        shape_input(r.feature, generator.config.mask_resolution)
        for r in train])
    history = train_shape_encoder(generator.shape_encoder, images,
                                  steps=steps,
                                  rng=np.random.default_rng(seed))
    save_checkpoint(out, generator,
                    extra_meta={"encoder_steps": steps})
    print("shape encoder: %d step(s), loss %.4f -> %.4f, saved %s"
          % (steps, history[0], history[-1], out))
    return 0


def cmd_train(args):
    settings = _settings(args)
    out = settings.get_str("out")
    if not out:
        raise UserError("--out is required")
    seed = settings.get_int("seed")
    epochs = settings.get_int("epochs")
    batch = settings.get_int("batch_size")
    records = load_dataset(_require_file(args.dataset, "dataset"))
    train = [r for r in records if r.split == "train"]
    if not train:
        raise UserError("dataset has no training records")
    checkpoint = settings.get_str("checkpoint")
    if checkpoint:
        generator = load_checkpoint(_require_file(checkpoint,
                                                  "checkpoint"))
    else:
        generator = LayoutGenerator(_generator_config(settings),
                                    seed=seed)
    graphs = [r.canonical for r in train]
    features = [r.feature for r in train]
    steps_per_epoch = max(1, (len(train) + batch - 1) // batch)
    steps = epochs * steps_per_epoch
    history = train_layout_vae(generator, graphs, features, steps=steps,
                               rng=np.random.default_rng(seed),
                               batch_size=batch)
    save_checkpoint(out, generator, extra_meta={"train_steps": steps})
    curve = Path(out).with_suffix(".loss.png")
    training_figure(curve, history)
    aborted = sum(1 for h in history if h.get("aborted"))
    print("trained %d step(s) (%d aborted), loss %.4f -> %.4f, saved %s"
          % (steps, aborted, history[0]["total"], history[-1]["total"],
             out))
    return 0


def _realized_scenes(generator, groups, seed):
    scenes = []
    layouts = []
    rng = np.random.default_rng(seed)
    for i, group in enumerate(groups):
        feature = block_shape_feature(group.block)
        canonical = generate_canonical(generator, feature, rng)
        buildings, warns = realize_block(canonical, feature,
                                         seed=seed + i)
        for warning in warns:
            log.info("block %s: %s", group.block_id, warning)
        scenes.append(_scene(group.block, buildings,
                             label=group.block_id))
        layouts.append((group.block_id, group.block, buildings))
    return scenes, layouts


def cmd_generate(args):
    settings = _settings(args)
    out = settings.get_str("out")
    if not out:
        raise UserError("--out is required")
    seed = settings.get_int("seed")
    generator = _load_generator(settings)
    groups = _load_groups(args.blocks)
    if not groups:
        raise UserError("no blocks in %s" % args.blocks)
    scenes, layouts = _realized_scenes(generator, groups, seed)
    render_svg(scenes, out)
    if args.layouts_out:
        with open(args.layouts_out, "w", encoding="utf-8") as fh:
            for block_id, _, buildings in layouts:
                fh.write(json.dumps({
                    "id": block_id,
                    "buildings": [b.footprint.ring.tolist()
                                  for b in buildings],
                    "shapes": [int(b.shape) for b in buildings],
                }, separators=(",", ":")))
                fh.write("\n")
    print("generated layouts for %d block(s) -> %s"
          % (len(groups), out))
    return 0


def cmd_sparse_generate(args):
    settings = _settings(args)
    out = settings.get_str("out")
    if not out:
        raise UserError("--out is required")
    seed = settings.get_int("seed")
    k = settings.get_int("k")
    sigma = settings.get_float("sigma")
    generator = _load_generator(settings)
    records = load_dataset(_require_file(args.priors, "prior dataset"))
    priors = []
    for record in records:
        z = posterior_latent(generator, record.canonical, record.feature)
        priors.append((record.block.centroid, z))
    groups = _load_groups(args.blocks)
    if not groups:
        raise UserError("no blocks in %s" % args.blocks)
    rng = np.random.default_rng(seed)
    scenes = []
    for i, group in enumerate(groups):
        feature = block_shape_feature(group.block)
        z = sparse_prior_latent(group.block.centroid, priors, k=k,
                                sigma=sigma, rng=rng)
        latent = generator.shape_latents([feature])[0]
        canonical = decode_canonical(generator, latent, z)
        buildings, warns = realize_block(canonical, feature,
                                         seed=seed + i)
        for warning in warns:
            log.info("block %s: %s", group.block_id, warning)
        scenes.append(_scene(group.block, buildings,
                             label=group.block_id))
    render_svg(scenes, out)
    print("sparse-generated %d block(s) from %d prior(s) -> %s"
          % (len(groups), len(priors), out))
    return 0


def cmd_interpolate(args):
    settings = _settings(args)
    out = settings.get_str("out")
    if not out:
        raise UserError("--out is required")
    seed = settings.get_int("seed")
    n_steps = settings.get_int("alpha_steps")
    generator = _load_generator(settings)
    records = {r.block_id: r
               for r in load_dataset(_require_file(args.dataset,
                                                   "dataset"))}
    try:
        rec_a = records[args.block_a]
        rec_b = records[args.block_b]
    except KeyError as exc:
        raise UserError("block id %s not in dataset" % exc) from exc
    z_a = posterior_latent(generator, rec_a.canonical, rec_a.feature)
    z_b = posterior_latent(generator, rec_b.canonical, rec_b.feature)
    m_a = generator.shape_latents([rec_a.feature])[0]
    m_b = generator.shape_latents([rec_b.feature])[0]
    scenes = []
    span = rec_a.block.ring[:, 0].max() - rec_a.block.ring[:, 0].min()
    for i in range(n_steps):
        alpha = i / max(1, n_steps - 1)
        z = interpolate(z_a, z_b, alpha)
        m = interpolate(m_a, m_b, alpha)
        canonical = decode_canonical(generator, m, z)
        buildings, _ = realize_block(canonical, rec_a.feature,
                                     seed=seed + i)
        offset = i * (span + 30.0)
        moved = [type(b)(footprint=b.footprint.translated(offset, 0.0),
                         box=b.box, shape=b.shape, occupancy=b.occupancy)
                 for b in buildings]
        scenes.append({
            "block": rec_a.block.translated(offset, 0.0),
            "label": "alpha=%.2f" % alpha,
            "buildings": [(b.footprint, b.shape) for b in moved],
        })
    render_svg(scenes, out)
    print("interpolated %d step(s) %s -> %s into %s"
          % (n_steps, args.block_a, args.block_b, out))
    return 0


def cmd_evaluate(args):
    settings = _settings(args)
    out = settings.get_str("out")
    if not out:
        raise UserError("--out is required")
    seed = settings.get_int("seed")
    generator = _load_generator(settings)
    records = load_dataset(_require_file(args.dataset, "dataset"))
    chosen = [r for r in records if args.split in ("all", r.split)]
    if not chosen:
        raise UserError("no records in split %r" % args.split)
    rng = np.random.default_rng(seed)
    breakdown = []
    pred_layouts, truth_layouts = [], []
    for i, record in enumerate(chosen):
        canonical = generate_canonical(generator, record.feature, rng)
        buildings, _ = realize_block(canonical, record.feature,
                                     seed=seed + i)
        pred_layouts.append(buildings)
        truth_layouts.append(list(record.buildings))
        pred_graph, _ = from_canonical(canonical, record.feature)
        row = {"block_id": record.block_id,
               "n_buildings": len(buildings)}
        row["layout_sim"] = (layout_sim(buildings, record.buildings)
                             if buildings else 0.0)
        row["overlap_pct"] = (overlap_index(buildings)
                              if buildings else 0.0)
        row["out_block_pct"] = (out_block_index(buildings, record.block)
                                if buildings else 0.0)
        try:
            row["position_err_pct"] = position_error(pred_graph,
                                                     record.graph)
        except MetricError:
            row["position_err_pct"] = None
        row["coverage_err_pct"] = coverage_error(pred_graph,
                                                 record.graph)
        breakdown.append(row)

    def mean_of(key):
        values = [r[key] for r in breakdown if r[key] is not None]
        return float(np.mean(values)) if values else None

    aggregate = {
        "n_blocks": len(chosen),
        "layout_sim": mean_of("layout_sim"),
        "overlap_pct": mean_of("overlap_pct"),
        "out_block_pct": mean_of("out_block_pct"),
        "position_err_pct": mean_of("position_err_pct"),
        "coverage_err_pct": mean_of("coverage_err_pct"),
        "count_wd": count_wasserstein(pred_layouts, truth_layouts),
    }
    if any(pred_layouts) and any(truth_layouts):
        aggregate["bbox_wd"] = bbox_wasserstein(
            [p for p in pred_layouts if p],
            [t for t in truth_layouts if t])
    paths = write_report(out, aggregate, breakdown)
    print("evaluated %d block(s); report at %s"
          % (len(chosen), ", ".join(str(p) for p in paths)))
    return 0


def cmd_render(args):
    settings = _settings(args)
    out = settings.get_str("out")
    if not out:
        raise UserError("--out is required")
    records = load_dataset(_require_file(args.dataset, "dataset"))
    chosen = [r for r in records if args.split in ("all", r.split)]
    scenes = [_scene(r.block, r.buildings, label=r.block_id)
              for r in chosen]
    render_svg(scenes, out)
    print("rendered %d block(s) -> %s" % (len(chosen), out))
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="blocklayout",
                     description="block layout modeling pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int, help="global random seed")
        p.add_argument("--out", help="output path")
        p.add_argument("--checkpoint", help="model checkpoint path")

    p = sub.add_parser("ingest", help="GeoJSON to metric block groups")
    common(p)
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fit-shapes", help="fit shape taxonomy per building")
    common(p)
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_fit_shapes)

    p = sub.add_parser("build-dataset", help="full per-block records")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train-shape-encoder",
                       help="pretrain the mask autoencoder")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--encoder-steps", dest="encoder_steps", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--latent-dim", dest="latent_dim", type=int)
    p.add_argument("--shape-dim", dest="shape_dim", type=int)
    p.set_defaults(func=cmd_train_shape_encoder)

    p = sub.add_parser("train", help="train the layout model")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--latent-dim", dest="latent_dim", type=int)
    p.add_argument("--shape-dim", dest="shape_dim", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="layouts for block shapes")
    common(p)
    p.add_argument("--blocks", required=True,
                   help="GeoJSON or ingested NDJSON of blocks")
    p.add_argument("--layouts-out", dest="layouts_out",
                   help="optional NDJSON of generated footprints")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("sparse-generate",
                       help="generation conditioned on nearby priors")
    common(p)
    p.add_argument("--blocks", required=True)
    p.add_argument("--priors", required=True,
                   help="dataset NDJSON supplying prior latents")
    p.add_argument("--k", type=int)
    p.add_argument("--sigma", type=float)
    p.set_defaults(func=cmd_sparse_generate)

    p = sub.add_parser("interpolate", help="latent interpolation strip")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--block-a", dest="block_a", required=True)
    p.add_argument("--block-b", dest="block_b", required=True)
    p.add_argument("--alpha-steps", dest="alpha_steps", type=int)
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("evaluate", help="generate and score against truth")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=("train", "val", "all"),
                   default="val")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("render", help="render dataset ground truth")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=("train", "val", "all"),
                   default="all")
    p.set_defaults(func=cmd_render)
    return parser


USER_ERRORS = (UserError, IngestError, DatasetError, ConfigError,
               GeneratorError, GeometryError, FileNotFoundError)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        sys.stderr.write("error: %s\n" % exc)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        sys.stderr.write("internal error: %r\n" % exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
