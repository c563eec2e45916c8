"""Command line entry point: ``saliency-prompt <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import manifest as mf
from .pipeline import (ConfigError, NumericError, RunConfig, export_heatmap, init_state,
                       load_checkpoint, load_dataset, load_image, prepare, pretrain, read_log,
                       report, save_checkpoint, write_scene_dir)
from .proposals import ProposalConfig, propose_masks
from .synthetic import SceneSpec, make_dataset, make_synthetic_scene, toy_feature_extractor
from .tensor import TensorFileError, read_tensor, write_tensor

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("saliency_prompt")


def _image_source(src: str) -> np.ndarray:
    if src.startswith("scene:"):
        return make_synthetic_scene(SceneSpec(), int(src.split(":", 1)[1])).image
    return load_image(src)


def cmd_extract_features(args) -> int:
    feats = toy_feature_extractor(_image_source(args.source), stride=args.stride)
    write_tensor(args.output, feats)
    log.info("wrote %s with shape %s", args.output, feats.shape)
    return EXIT_OK


def cmd_propose_masks(args) -> int:
    feats = read_tensor(args.features, widen=True)
    if feats.ndim != 3:
        raise ConfigError(f"expected a D x H x W tensor, got shape {feats.shape}")
    cfg = ProposalConfig(args.grid_h, args.grid_w, args.binarize_threshold,
                         args.nms_threshold, args.min_area_fraction)
    props = propose_masks(np.moveaxis(feats, 0, -1), cfg)
    image_id = args.image_id or Path(args.features).stem
    _, h, w = feats.shape
    mf.write_manifest(args.output, mf.proposals_to_manifest(image_id, h, w, props, cfg))
    if args.pgm_dir:
        out = Path(args.pgm_dir)
        out.mkdir(parents=True, exist_ok=True)
        for k, p in enumerate(props):
            mf.write_pgm(out / f"{image_id}_mask{k:02d}.pgm", p.mask.astype(float))
    log.info("%d proposals -> %s", len(props), args.output)
    return EXIT_OK


def _read_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return RunConfig.from_dict(doc)


def cmd_pretrain(args) -> int:
    cfg = _read_config(args.config)
    if args.steps is not None:
        cfg.steps = args.steps
    if cfg.dataset is None:
        raise ConfigError("config needs a 'dataset' entry")
    data = prepare(load_dataset(cfg.dataset), cfg)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.jsonl"
    log_path.write_text("")
    state, records = pretrain(cfg, data, init_state(cfg), log_path)
    save_checkpoint(out, state, cfg)
    if records:
        log.info("step %d: loss %.4f -> %.4f", state.step, records[0]["total"], records[-1]["total"])
    return EXIT_OK


def cmd_eval(args) -> int:
    state, cfg = load_checkpoint(args.checkpoint)
    data = prepare(load_dataset(args.dataset), cfg)
    log_path = Path(args.checkpoint) / "train_log.jsonl"
    train_log = read_log(log_path) if log_path.exists() and log_path.stat().st_size else None
    doc = report(state.params, data, cfg, args.assignment, train_log, args.output,
                 figures=not args.no_figures)
    print(json.dumps(doc["metrics"]))
    return EXIT_OK


def cmd_export_heatmap(args) -> int:
    state, cfg = load_checkpoint(args.checkpoint)
    data = prepare(load_dataset(args.dataset), cfg)
    info = export_heatmap(state.params, data, cfg, args.output, args.threshold,
                          pgm=not args.no_pgm, figure=not args.no_figures)
    print(json.dumps(info))
    return EXIT_OK


def cmd_make_scenes(args) -> int:
    write_scene_dir(args.output, make_dataset(args.count, args.seed, SceneSpec()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="saliency-prompt", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-features", help="filter-bank features of a PPM/PGM image or scene:SEED")
    p.add_argument("source")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--stride", type=int, default=1)
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("propose-masks", help="saliency proposals from a feature tensor")
    p.add_argument("features")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--image-id")
    p.add_argument("--grid-h", type=int, default=10)
    p.add_argument("--grid-w", type=int, default=10)
    p.add_argument("--binarize-threshold", type=float, default=0.5)
    p.add_argument("--nms-threshold", type=float, default=0.5)
    p.add_argument("--min-area-fraction", type=float, default=0.005)
    p.add_argument("--pgm-dir", help="also write one PGM per proposal mask")
    p.set_defaults(func=cmd_propose_masks)

    p = sub.add_parser("pretrain", help="run pre-training from a JSON RunConfig")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("-o", "--output", required=True, help="checkpoint directory")
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("eval", help="class-agnostic AP report for a checkpoint")
    p.add_argument("-k", "--checkpoint", required=True)
    p.add_argument("-d", "--dataset", required=True)
    p.add_argument("-o", "--output", required=True, help="report JSON path")
    p.add_argument("--assignment", choices=("cosine", "sequential", "random", "none"))
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-heatmap", help="per-kernel average activation maps")
    p.add_argument("-k", "--checkpoint", required=True)
    p.add_argument("-d", "--dataset", required=True)
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--threshold", type=float, help="binarize masks before averaging")
    p.add_argument("--no-pgm", action="store_true")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_export_heatmap)

    p = sub.add_parser("make-scenes", help="write synthetic scenes as PPM + ground-truth JSON")
    p.add_argument("-n", "--count", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_make_scenes)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (NumericError, FloatingPointError) as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (TensorFileError, OSError) as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
