"""Metric tests: Dice/IoU identities, patient aggregation against a worked
example, and Welch's t-test against an independent quadrature oracle."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate, stats

from fuseseg.evaluation import (CaseMetrics, aggregate_cases, dice_score,
                                evaluate_model, format_aggregate, iou_score,
                                welch_t_test)
from fuseseg.exceptions import DataError, ShapeError
from fuseseg.model import SegmentationModel

from conftest import tiny_model_config


# ---------------------------------------------------------------------------
# dice / iou
# ---------------------------------------------------------------------------

def test_dice_iou_identity_on_random_pairs(rng):
    for _ in range(1000):
        shape = (rng.integers(2, 9), rng.integers(2, 9))
        p = rng.random(shape) > rng.random()
        g = rng.random(shape) > rng.random()
        d = dice_score(p, g)
        i = iou_score(p, g)
        assert abs(i - d / (2.0 - d)) <= 1e-12
        assert i <= d + 1e-15
        assert 0.0 <= d <= 1.0 and 0.0 <= i <= 1.0


def test_metrics_are_symmetric(rng):
    for _ in range(100):
        p = rng.random((6, 6)) > 0.5
        g = rng.random((6, 6)) > 0.5
        assert dice_score(p, g) == dice_score(g, p)
        assert iou_score(p, g) == iou_score(g, p)


def test_empty_mask_conventions():
    empty = np.zeros((4, 4), dtype=np.uint8)
    full = np.ones((4, 4), dtype=np.uint8)
    assert dice_score(empty, empty) == 1.0
    assert iou_score(empty, empty) == 1.0
    assert dice_score(empty, full) == 0.0
    assert iou_score(full, empty) == 0.0


def test_known_overlap_values():
    pred = np.array([[1, 1, 0, 0]])
    target = np.array([[0, 1, 1, 0]])
    assert dice_score(pred, target) == pytest.approx(0.5)
    assert iou_score(pred, target) == pytest.approx(1.0 / 3.0)


def test_metric_input_validation():
    with pytest.raises(ShapeError):
        dice_score(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(DataError):
        dice_score(np.array([[0, 2]]), np.array([[0, 1]]))
    with pytest.raises(DataError):
        iou_score(np.array([[0.5, 0.0]]), np.array([[0, 1]]))


# ---------------------------------------------------------------------------
# patient aggregation
# ---------------------------------------------------------------------------

def _case(pid, idx, dice, iou=0.0):
    return CaseMetrics(patient_id=pid, slice_index=idx, dice=dice, iou=iou)


def test_aggregation_matches_worked_example():
    cases = [_case("a", 0, 0.8, 0.7), _case("a", 1, 0.6, 0.5),
             _case("b", 0, 1.0, 1.0),
             _case("c", 0, 0.5, 0.4), _case("c", 1, 0.5, 0.4),
             _case("c", 2, 0.5, 0.4)]
    agg = aggregate_cases(cases)
    assert agg.n_patients == 3
    # per-patient means first, so patient c's three slices count once
    assert agg.per_patient_dice == {"a": pytest.approx(0.7), "b": 1.0,
                                    "c": pytest.approx(0.5)}
    assert agg.mean_dice == pytest.approx((0.7 + 1.0 + 0.5) / 3)
    assert agg.std_dice == pytest.approx(np.std([0.7, 1.0, 0.5], ddof=1))
    assert agg.mean_iou == pytest.approx((0.6 + 1.0 + 0.4) / 3)
    assert not agg.degenerate_std


def test_slice_level_mean_would_differ():
    cases = [_case("a", 0, 1.0), _case("b", 0, 0.0), _case("b", 1, 0.0),
             _case("b", 2, 0.0)]
    agg = aggregate_cases(cases)
    assert agg.mean_dice == pytest.approx(0.5)  # not the slice mean 0.25


def test_single_patient_aggregate_is_degenerate():
    agg = aggregate_cases([_case("solo", 0, 0.9), _case("solo", 1, 0.7)])
    assert agg.n_patients == 1
    assert agg.degenerate_std
    assert agg.std_dice == 0.0 and agg.std_iou == 0.0
    assert "single patient" in format_aggregate(agg)


def test_aggregate_rejects_empty():
    with pytest.raises(DataError):
        aggregate_cases([])


def test_format_aggregate_lines():
    agg = aggregate_cases([_case("a", 0, 0.5, 0.25), _case("b", 0, 0.7, 0.55)])
    text = format_aggregate(agg, label="val")
    assert "val patients:      2" in text
    assert "val mean dice:     0.6000" in text


def test_evaluate_model_on_tiny_net(small_dataset):
    model = SegmentationModel(tiny_model_config(image_size=32))
    cases, agg = evaluate_model(model, small_dataset, batch_size=4)
    assert len(cases) == len(small_dataset)
    assert agg.n_patients == 6
    assert 0.0 <= agg.mean_dice <= 1.0
    # threshold 0 predicts everything foreground: dice strictly positive
    _, agg_all = evaluate_model(model, small_dataset, threshold=0.0)
    assert agg_all.mean_dice > 0.0


# ---------------------------------------------------------------------------
# Welch's t-test
# ---------------------------------------------------------------------------

def _t_pdf(x, df):
    lognum = math.lgamma((df + 1) / 2) - math.lgamma(df / 2)
    norm = math.exp(lognum) / math.sqrt(df * math.pi)
    return norm * (1.0 + x * x / df) ** (-(df + 1) / 2)


def _p_by_quadrature(t, df):
    """Two-sided tail mass of the t distribution, integrated numerically."""
    tail, _ = integrate.quad(_t_pdf, abs(t), math.inf, args=(df,),
                             epsabs=1e-12, epsrel=1e-12)
    return 2.0 * tail


FIXED_PAIRS = [
    ([0.92, 0.93, 0.91, 0.95, 0.94], [0.88, 0.90, 0.89, 0.91, 0.87]),
    ([1.2, 1.9, 0.8, 1.4], [1.3, 1.1, 1.0, 1.6, 1.2, 0.9]),
    ([10.0, 10.5, 9.5, 10.2, 9.8, 10.1], [10.05, 10.4, 9.6, 10.3]),
]


@pytest.mark.parametrize("a,b", FIXED_PAIRS)
def test_welch_matches_quadrature_oracle(a, b):
    res = welch_t_test(a, b)
    assert res.p == pytest.approx(_p_by_quadrature(res.t, res.df), abs=1e-9)


@pytest.mark.parametrize("a,b", FIXED_PAIRS)
def test_welch_statistic_matches_textbook_formula(a, b):
    res = welch_t_test(a, b)
    a, b = np.asarray(a), np.asarray(b)
    sa, sb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    t = (a.mean() - b.mean()) / math.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (sa ** 2 / (a.size - 1) + sb ** 2 / (b.size - 1))
    assert res.t == pytest.approx(t, abs=1e-12)
    assert res.df == pytest.approx(df, abs=1e-12)


@pytest.mark.parametrize("a,b", FIXED_PAIRS)
def test_welch_agrees_with_scipy(a, b):
    res = welch_t_test(a, b)
    ref = stats.ttest_ind(a, b, equal_var=False)
    assert res.t == pytest.approx(ref.statistic, abs=1e-10)
    assert res.p == pytest.approx(ref.pvalue, abs=1e-10)


def test_welch_identical_groups():
    a = [0.5, 0.6, 0.7, 0.8]
    res = welch_t_test(a, a)
    assert res.t == 0.0
    assert res.p == 1.0


def test_welch_constant_group_edge_cases():
    same = welch_t_test([2.0, 2.0, 2.0], [2.0, 2.0])
    assert same.t == 0.0 and same.p == 1.0
    assert same.df == 3.0
    apart = welch_t_test([2.0, 2.0], [3.0, 3.0, 3.0])
    assert math.isinf(apart.t) and apart.t < 0
    assert apart.p == 0.0


def test_welch_needs_two_values_per_group():
    with pytest.raises(DataError):
        welch_t_test([1.0], [1.0, 2.0])
    with pytest.raises(DataError):
        welch_t_test([1.0, 2.0], [])


def test_welch_records_group_summaries():
    res = welch_t_test([1.0, 2.0, 3.0], [4.0, 5.0])
    assert (res.n_a, res.n_b) == (3, 2)
    assert res.mean_a == pytest.approx(2.0)
    assert res.mean_b == pytest.approx(4.5)
    assert res.t < 0  # first group mean is lower
