"""Ablation grid: fixed block-selection arms crossed with image integration.

Every run in the grid shares one dataset and one patient split; only the
model seed and shuffling seed vary per repeat.  Per arm, the integration-on
and integration-off score lists are compared with Welch's t-test.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from .config import RunConfig
from .data import generate_synthetic, select_split, split_patients
from .evaluation import WelchResult, evaluate_model, welch_t_test
from .exceptions import ConfigurationError
from .model import SegmentationModel
from .training import EpochStats, train

ARMS = ("last_4", "fixed_list")


def arm_blocks(arm: str, num_blocks: int, k: int) -> tuple[int, ...]:
    """Block indices for a named selection arm (0-based from the shallowest)."""
    if arm == "last_4":
        return tuple(range(num_blocks - k, num_blocks))
    if arm == "fixed_list":
        blocks = tuple(range(0, 2 * k, 2))  # evenly spread: 0,2,4,6 for k=4
        if blocks[-1] >= num_blocks:
            raise ConfigurationError(
                f"fixed_list arm needs at least {blocks[-1] + 1} blocks, "
                f"encoder has {num_blocks}")
        return blocks
    raise ConfigurationError(f"unknown ablation arm {arm!r}; choose from {ARMS}")


@dataclass
class AblationCell:
    arm: str
    integration: bool
    seed: int
    test_dice: float
    test_iou: float
    best_val_dice: float
    history: list[EpochStats]


@dataclass
class ArmSummary:
    arm: str
    on_scores: list[float]
    off_scores: list[float]
    on_mean: float
    on_std: float
    off_mean: float
    off_std: float
    welch: WelchResult


@dataclass
class AblationResult:
    cells: list[AblationCell]
    summaries: list[ArmSummary]
    csv_path: str | None = None
    summary_path: str | None = None
    summary_csv_path: str | None = None


def run_ablation(run_config: RunConfig, seeds: list[int],
                 out_dir: str | None = None, log=None,
                 arms: tuple[str, ...] = ARMS) -> AblationResult:
    if len(seeds) != len(set(seeds)):
        raise ConfigurationError(f"ablation seeds must be distinct: {seeds}")
    if len(seeds) < 2:
        raise ConfigurationError("need at least 2 seeds for a variance estimate")
    say = log or (lambda msg: None)

    dc = run_config.data
    samples = generate_synthetic(dc.num_patients, dc.slices_per_patient,
                                 image_size=dc.image_size, seed=dc.seed,
                                 noise=dc.noise)
    tr_ids, va_ids, te_ids = split_patients(
        [s.patient_id for s in samples], seed=dc.seed,
        val_fraction=dc.val_fraction, test_fraction=dc.test_fraction)
    train_set = select_split(samples, tr_ids)
    val_set = select_split(samples, va_ids)
    test_set = select_split(samples, te_ids)

    base_model = run_config.model
    cells: list[AblationCell] = []
    total = len(arms) * 2 * len(seeds)
    done = 0
    for arm in arms:
        blocks = arm_blocks(arm, base_model.encoder.num_blocks,
                            base_model.fusion.k)
        for integration in (True, False):
            for seed in seeds:
                model_cfg = replace(
                    base_model,
                    fusion=replace(base_model.fusion,
                                   selection_mode="fixed_list",
                                   fixed_blocks=blocks),
                    decoder=replace(base_model.decoder,
                                    spatial_integration=integration),
                    seed=seed)
                train_cfg = replace(run_config.train, seed=seed)
                model = SegmentationModel(model_cfg)
                result = train(model, train_set, val_set, train_cfg)
                model.load_state_dict(result.best_state)
                _, agg = evaluate_model(model, test_set,
                                        batch_size=train_cfg.batch_size)
                done += 1
                say(f"[{done}/{total}] arm={arm} integration="
                    f"{'on' if integration else 'off'} seed={seed} "
                    f"test_dice={agg.mean_dice:.4f}")
                cells.append(AblationCell(
                    arm=arm, integration=integration, seed=seed,
                    test_dice=agg.mean_dice, test_iou=agg.mean_iou,
                    best_val_dice=result.best_val_dice,
                    history=result.history))

    summaries = []
    for arm in arms:
        on = [c.test_dice for c in cells if c.arm == arm and c.integration]
        off = [c.test_dice for c in cells if c.arm == arm and not c.integration]
        summaries.append(ArmSummary(
            arm=arm, on_scores=on, off_scores=off,
            on_mean=float(np.mean(on)),
            on_std=float(np.std(on, ddof=1)) if len(on) > 1 else 0.0,
            off_mean=float(np.mean(off)),
            off_std=float(np.std(off, ddof=1)) if len(off) > 1 else 0.0,
            welch=welch_t_test(on, off)))

    result = AblationResult(cells=cells, summaries=summaries)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        result.csv_path = os.path.join(out_dir, "ablation.csv")
        with open(result.csv_path, "w", encoding="utf-8") as fh:
            fh.write("arm,integration,seed,test_dice,test_iou,best_val_dice\n")
            for c in cells:
                fh.write(f"{c.arm},{'on' if c.integration else 'off'},{c.seed},"
                         f"{c.test_dice!r},{c.test_iou!r},{c.best_val_dice!r}\n")
        result.summary_path = os.path.join(out_dir, "summary.txt")
        with open(result.summary_path, "w", encoding="utf-8") as fh:
            fh.write(format_summaries(summaries) + "\n")
        result.summary_csv_path = os.path.join(out_dir, "summary.csv")
        with open(result.summary_csv_path, "w", encoding="utf-8") as fh:
            fh.write("arm,integration,mean_dice,std_dice,n,"
                     "welch_t,welch_df,welch_p\n")
            for s in summaries:
                w = s.welch
                fh.write(f"{s.arm},on,{s.on_mean!r},{s.on_std!r},"
                         f"{len(s.on_scores)},{w.t!r},{w.df!r},{w.p!r}\n")
                fh.write(f"{s.arm},off,{s.off_mean!r},{s.off_std!r},"
                         f"{len(s.off_scores)},{w.t!r},{w.df!r},{w.p!r}\n")
    return result


def format_summaries(summaries: list[ArmSummary]) -> str:
    lines = [f"{'arm':<12} {'integration':<12} {'mean dice':>10} {'std':>8} {'n':>3}"]
    for s in summaries:
        lines.append(f"{s.arm:<12} {'on':<12} {s.on_mean:>10.4f} "
                     f"{s.on_std:>8.4f} {len(s.on_scores):>3}")
        lines.append(f"{s.arm:<12} {'off':<12} {s.off_mean:>10.4f} "
                     f"{s.off_std:>8.4f} {len(s.off_scores):>3}")
    for s in summaries:
        w = s.welch
        lines.append(f"welch on-vs-off {s.arm}: t={w.t:.4f} df={w.df:.4f} "
                     f"p={w.p:.6f}")
    return "\n".join(lines)
