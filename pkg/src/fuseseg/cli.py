"""Command-line entry points.

Exit codes: 0 success, 1 configuration or usage problems, 2 data or
checkpoint problems, 3 numeric failures.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np
from scipy.ndimage import binary_erosion

from .ablation import run_ablation
from .checkpoint import load_checkpoint
from .config import (RunConfig, model_config_from_flat, resolve_flat,
                     run_config_from_flat, run_config_to_flat)
from .data import (Sample, generate_synthetic, image_to_bytes, load_dataset,
                   save_dataset, save_pgm, select_split, split_patients)
from .evaluation import evaluate_model, format_aggregate, welch_t_test
from .exceptions import (CheckpointError, ConfigurationError, DataError,
                         NumericError, ShapeError)
from .gradcheck import DEFAULT_EPS, DEFAULT_TOLERANCE, run_gradcheck
from .model import SegmentationModel
from .training import train


def _add_config_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--preset", default=None,
                     help="named config preset (full, desk, base, large, giant)")
    sub.add_argument("--config", default=None, help="key=value config file")
    sub.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE", help="override one config key; repeatable")


def _resolve(args) -> RunConfig:
    return run_config_from_flat(
        resolve_flat(args.preset, args.config, args.overrides))


def _load_sized_dataset(path: str, encoder_cfg) -> list[Sample]:
    samples = load_dataset(path)
    h, w = samples[0].image.shape
    if (h, w) != (encoder_cfg.image_height, encoder_cfg.image_width):
        raise ConfigurationError(
            f"dataset slices are {h}x{w} but the encoder expects "
            f"{encoder_cfg.image_height}x{encoder_cfg.image_width}; adjust "
            f"encoder.image_height/encoder.image_width or regenerate the data")
    return samples


def _split_sets(samples: list[Sample], seed: int, val_fraction: float,
                test_fraction: float):
    ids = [s.patient_id for s in samples]
    tr, va, te = split_patients(ids, seed=seed, val_fraction=val_fraction,
                                test_fraction=test_fraction)
    return (select_split(samples, tr), select_split(samples, va),
            select_split(samples, te))


def _cmd_synth(args) -> int:
    rc = _resolve(args)
    dc = rc.data
    samples = generate_synthetic(dc.num_patients, dc.slices_per_patient,
                                 image_size=dc.image_size, seed=dc.seed,
                                 noise=dc.noise)
    manifest = save_dataset(samples, args.out)
    print(f"wrote {len(samples)} slices for {dc.num_patients} patients "
          f"({dc.image_size}x{dc.image_size}) to {manifest}")
    return 0


def _cmd_train(args) -> int:
    rc = _resolve(args)
    if args.data:
        samples = _load_sized_dataset(args.data, rc.model.encoder)
    else:
        dc = rc.data
        if dc.image_size != rc.model.encoder.image_height:
            raise ConfigurationError(
                f"data.image_size={dc.image_size} does not match "
                f"encoder.image_height={rc.model.encoder.image_height}")
        samples = generate_synthetic(dc.num_patients, dc.slices_per_patient,
                                     image_size=dc.image_size, seed=dc.seed,
                                     noise=dc.noise)
    train_set, val_set, test_set = _split_sets(
        samples, rc.data.seed, rc.data.val_fraction, rc.data.test_fraction)
    say = (lambda msg: None) if args.quiet else print
    say(f"training on {len(train_set)} slices, validating on {len(val_set)}, "
        f"holding out {len(test_set)}")
    model = SegmentationModel(rc.model)
    result = train(model, train_set, val_set, rc.train, out_dir=args.out,
                   metadata=run_config_to_flat(rc), log=say)
    model.load_state_dict(result.best_state)
    _, agg = evaluate_model(model, test_set, batch_size=rc.train.batch_size)
    weights = model.block_weights()
    selection = model.fusion.select(weights)
    report = "\n".join([
        f"best epoch:         {result.best_epoch}",
        f"best val dice:      {result.best_val_dice!r}",
        format_aggregate(agg, label="test"),
        "block weights:      " + " ".join(repr(float(w)) for w in weights),
        "selected blocks:    " + ",".join(str(i) for i in selection),
    ])
    print(report)
    with open(os.path.join(args.out, "metrics.txt"), "w", encoding="utf-8") as fh:
        fh.write(report + "\n")
    return 0


def _load_model_from_checkpoint(path: str) -> tuple[SegmentationModel, dict[str, str]]:
    tensors, meta = load_checkpoint(path)
    model = SegmentationModel(model_config_from_flat(meta))
    model.load_state_dict(tensors)
    return model, meta


def _pick_split(samples: list[Sample], split: str, meta: dict[str, str]) -> list[Sample]:
    if split == "all":
        return samples
    seed = int(meta.get("data.seed", "0"))
    val_f = float(meta.get("data.val_fraction", "0.1"))
    test_f = float(meta.get("data.test_fraction", "0.2"))
    train_set, val_set, test_set = _split_sets(samples, seed, val_f, test_f)
    return {"train": train_set, "val": val_set, "test": test_set}[split]


def _cmd_eval(args) -> int:
    model, meta = _load_model_from_checkpoint(args.checkpoint)
    samples = _load_sized_dataset(args.data, model.config.encoder)
    chosen = _pick_split(samples, args.split, meta)
    if not chosen:
        raise DataError(f"split {args.split!r} selected no samples")
    _, agg = evaluate_model(model, chosen, batch_size=args.batch_size,
                            threshold=args.threshold)
    print(format_aggregate(agg, label=args.split))
    if args.per_patient:
        for pid, score in agg.per_patient_dice.items():
            print(f"  {pid}  dice {score:.4f}  iou {agg.per_patient_iou[pid]:.4f}")
    if args.compare:
        other, _ = _load_model_from_checkpoint(args.compare)
        if other.config.encoder.image_height != model.config.encoder.image_height \
                or other.config.encoder.image_width != model.config.encoder.image_width:
            raise ConfigurationError("compared checkpoints expect different "
                                     "image sizes")
        _, agg_b = evaluate_model(other, chosen, batch_size=args.batch_size,
                                  threshold=args.threshold)
        print(format_aggregate(agg_b, label="compare"))
        w = welch_t_test(list(agg.per_patient_dice.values()),
                         list(agg_b.per_patient_dice.values()))
        print(f"welch per-patient dice, checkpoint vs compare: "
              f"t={w.t:.4f} df={w.df:.4f} p={w.p:.6f}")
    return 0


def _cmd_ablate(args) -> int:
    rc = _resolve(args)
    try:
        seeds = [int(part) for part in args.seeds.split(",") if part.strip()]
    except ValueError:
        raise ConfigurationError(f"--seeds must be comma-separated integers, "
                                 f"got {args.seeds!r}")
    say = (lambda msg: None) if args.quiet else print
    result = run_ablation(rc, seeds, out_dir=args.out, log=say)
    with open(result.summary_path, "r", encoding="utf-8") as fh:
        print(fh.read().rstrip())
    return 0


def _cmd_gradcheck(args) -> int:
    try:
        seeds = tuple(int(part) for part in args.seeds.split(",") if part.strip())
    except ValueError:
        raise ConfigurationError(f"--seeds must be comma-separated integers, "
                                 f"got {args.seeds!r}")
    reports = run_gradcheck(seeds=seeds, eps=args.eps, tolerance=args.tolerance,
                            log=print)
    failed = [r.name for r in reports if not r.passed]
    if failed:
        print(f"gradient check FAILED for: {', '.join(failed)}", file=sys.stderr)
        return 3
    print(f"all {len(reports)} gradient checks passed "
          f"(tolerance {args.tolerance:g})")
    return 0


def _boundary(mask: np.ndarray) -> np.ndarray:
    mask = mask.astype(bool)
    if not mask.any():
        return mask
    return mask & ~binary_erosion(mask)


def _triptych(image: np.ndarray, reference: np.ndarray,
              pred: np.ndarray) -> np.ndarray:
    """Three panels, input | reference outline | prediction outline."""
    base = image_to_bytes(image)
    ref_panel = (base * 0.66).astype(np.uint8)
    ref_panel[_boundary(reference)] = 255
    pred_panel = (base * 0.66).astype(np.uint8)
    pred_panel[_boundary(pred)] = 255
    gap = np.full((base.shape[0], 2), 255, dtype=np.uint8)
    return np.concatenate([base, gap, ref_panel, gap, pred_panel], axis=1)


def _cmd_overlay(args) -> int:
    model, meta = _load_model_from_checkpoint(args.checkpoint)
    samples = _load_sized_dataset(args.data, model.config.encoder)
    chosen = _pick_split(samples, args.split, meta)[:args.limit]
    if not chosen:
        raise DataError(f"split {args.split!r} selected no samples")
    os.makedirs(args.out, exist_ok=True)
    for s in chosen:
        pred = model.predict_mask(s.image[None, None])[0, 0]
        name = f"{s.patient_id}_{s.slice_index:03d}_triptych.pgm"
        save_pgm(os.path.join(args.out, name),
                 _triptych(s.image, s.mask, pred))
    print(f"wrote {len(chosen)} triptychs to {args.out} "
          f"(panels: input, reference outline, predicted outline)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fuseseg",
        description="Frozen-encoder block-fusion segmentation toolkit")
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("synth", help="generate a synthetic dataset")
    _add_config_args(sub)
    sub.add_argument("--out", required=True, help="output dataset directory")
    sub.set_defaults(func=_cmd_synth)

    sub = subs.add_parser("train", help="train a model and report test metrics")
    _add_config_args(sub)
    sub.add_argument("--data", default=None,
                     help="dataset directory or manifest; omitted: synthesize")
    sub.add_argument("--out", required=True,
                     help="directory for checkpoints, history.csv, metrics.txt")
    sub.add_argument("--quiet", action="store_true", help="suppress progress lines")
    sub.set_defaults(func=_cmd_train)

    sub = subs.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    sub.add_argument("--checkpoint", required=True)
    sub.add_argument("--data", required=True)
    sub.add_argument("--split", choices=("train", "val", "test", "all"),
                     default="test")
    sub.add_argument("--batch-size", type=int, default=8)
    sub.add_argument("--threshold", type=float, default=0.5)
    sub.add_argument("--per-patient", action="store_true",
                     help="also print one line per patient")
    sub.add_argument("--compare", default=None, metavar="CHECKPOINT",
                     help="second checkpoint; adds a Welch t-test over "
                          "per-patient Dice")
    sub.set_defaults(func=_cmd_eval)

    sub = subs.add_parser("ablate",
                          help="selection-arm x integration grid over seeds")
    _add_config_args(sub)
    sub.add_argument("--out", required=True, help="directory for CSV and summary")
    sub.add_argument("--seeds", default="0,1,2,3,4",
                     help="comma-separated repeat seeds")
    sub.add_argument("--quiet", action="store_true")
    sub.set_defaults(func=_cmd_ablate)

    sub = subs.add_parser("gradcheck",
                          help="finite-difference checks for all differentiable ops")
    sub.add_argument("--seeds", default="0,1,2")
    sub.add_argument("--eps", type=float, default=DEFAULT_EPS)
    sub.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    sub.set_defaults(func=_cmd_gradcheck)

    sub = subs.add_parser("overlay",
                          help="render prediction/reference outlines as PGM")
    sub.add_argument("--checkpoint", required=True)
    sub.add_argument("--data", required=True)
    sub.add_argument("--split", choices=("train", "val", "test", "all"),
                     default="test")
    sub.add_argument("--out", required=True)
    sub.add_argument("--limit", type=int, default=8)
    sub.set_defaults(func=_cmd_overlay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return 0 if err.code in (0, None) else 1
    try:
        return args.func(args)
    except ConfigurationError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (DataError, CheckpointError, ShapeError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except NumericError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
