"""Overlap metrics, patient-level aggregation, and Welch's unequal-variance t-test.

Dice and IoU are computed per slice, averaged within each patient, and only
then averaged across patients, so patients with many slices do not dominate.
Reported spreads are sample standard deviations across patients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

from .data import Sample, stack_batch
from .exceptions import DataError, ShapeError


def _as_binary(arr, name: str) -> np.ndarray:
    a = np.asarray(arr)
    if a.dtype == bool:
        return a
    vals = np.unique(a)
    if not np.isin(vals, (0, 1)).all():
        raise DataError(f"{name} must be binary, found values {vals[:8]}")
    return a.astype(bool)


def dice_score(pred, target) -> float:
    """2|P∩G| / (|P|+|G|); two empty masks agree perfectly (1.0)."""
    p = _as_binary(pred, "pred")
    g = _as_binary(target, "target")
    if p.shape != g.shape:
        raise ShapeError(f"pred {p.shape} and target {g.shape} differ")
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    inter = int(np.logical_and(p, g).sum())
    return 2.0 * inter / total


def iou_score(pred, target) -> float:
    """|P∩G| / |P∪G|; two empty masks agree perfectly (1.0)."""
    p = _as_binary(pred, "pred")
    g = _as_binary(target, "target")
    if p.shape != g.shape:
        raise ShapeError(f"pred {p.shape} and target {g.shape} differ")
    union = int(np.logical_or(p, g).sum())
    if union == 0:
        return 1.0
    inter = int(np.logical_and(p, g).sum())
    return inter / union


@dataclass
class CaseMetrics:
    patient_id: str
    slice_index: int
    dice: float
    iou: float


@dataclass
class PatientAggregate:
    """Patient-level summary; ``degenerate_std`` flags a single-patient set."""

    n_patients: int
    mean_dice: float
    std_dice: float
    mean_iou: float
    std_iou: float
    degenerate_std: bool
    per_patient_dice: dict[str, float] = field(default_factory=dict)
    per_patient_iou: dict[str, float] = field(default_factory=dict)


def aggregate_cases(cases: list[CaseMetrics]) -> PatientAggregate:
    if not cases:
        raise DataError("cannot aggregate zero cases")
    by_patient: dict[str, list[CaseMetrics]] = {}
    for c in cases:
        by_patient.setdefault(c.patient_id, []).append(c)
    dice = {pid: float(np.mean([c.dice for c in cs]))
            for pid, cs in sorted(by_patient.items())}
    iou = {pid: float(np.mean([c.iou for c in cs]))
           for pid, cs in sorted(by_patient.items())}
    dvals = np.array(list(dice.values()))
    ivals = np.array(list(iou.values()))
    n = len(dvals)
    degenerate = n < 2
    return PatientAggregate(
        n_patients=n,
        mean_dice=float(dvals.mean()),
        std_dice=0.0 if degenerate else float(dvals.std(ddof=1)),
        mean_iou=float(ivals.mean()),
        std_iou=0.0 if degenerate else float(ivals.std(ddof=1)),
        degenerate_std=degenerate,
        per_patient_dice=dice,
        per_patient_iou=iou)


def evaluate_samples(model, samples: list[Sample], batch_size: int = 8,
                     threshold: float = 0.5) -> list[CaseMetrics]:
    """Per-slice metrics of thresholded model predictions."""
    if not samples:
        raise DataError("cannot evaluate zero samples")
    cases = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        images, _ = stack_batch(chunk)
        preds = model.predict_proba(images)[:, 0] >= threshold
        for s, pred in zip(chunk, preds):
            cases.append(CaseMetrics(patient_id=s.patient_id,
                                     slice_index=s.slice_index,
                                     dice=dice_score(pred, s.mask),
                                     iou=iou_score(pred, s.mask)))
    return cases


def evaluate_model(model, samples: list[Sample], batch_size: int = 8,
                   threshold: float = 0.5) -> tuple[list[CaseMetrics], PatientAggregate]:
    cases = evaluate_samples(model, samples, batch_size, threshold)
    return cases, aggregate_cases(cases)


@dataclass
class WelchResult:
    t: float
    df: float
    p: float
    mean_a: float
    mean_b: float
    n_a: int
    n_b: int


def welch_t_test(a, b) -> WelchResult:
    """Two-sided Welch t-test (unequal variances, unpaired).

    The p-value comes from the regularized incomplete beta function:
    ``p = I_{df/(df+t^2)}(df/2, 1/2)``.  Identical groups give t=0, p=1.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size < 2 or b.size < 2:
        raise DataError(f"Welch test needs >= 2 values per group, "
                        f"got {a.size} and {b.size}")
    na, nb = a.size, b.size
    ma, mb = float(a.mean()), float(b.mean())
    sa, sb = float(a.var(ddof=1)) / na, float(b.var(ddof=1)) / nb
    se2 = sa + sb
    if se2 == 0.0:
        # both groups constant: identical means is exact agreement
        diff = ma - mb
        t = 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
        df = float(na + nb - 2)
    else:
        t = (ma - mb) / math.sqrt(se2)
        df = se2 ** 2 / (sa ** 2 / (na - 1) + sb ** 2 / (nb - 1))
    if math.isinf(t):
        p = 0.0
    else:
        p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return WelchResult(t=float(t), df=float(df), p=p,
                       mean_a=ma, mean_b=mb, n_a=na, n_b=nb)


def format_aggregate(agg: PatientAggregate, label: str = "test") -> str:
    lines = [
        f"{label} patients:      {agg.n_patients}",
        f"{label} mean dice:     {agg.mean_dice:.4f} +/- {agg.std_dice:.4f}",
        f"{label} mean iou:      {agg.mean_iou:.4f} +/- {agg.std_iou:.4f}",
    ]
    if agg.degenerate_std:
        lines.append(f"{label} std is 0 by convention: single patient")
    return "\n".join(lines)
