"""Block-weight normalization, aggregation, and top-k selection tests."""

from __future__ import annotations

import numpy as np
import pytest

from fuseseg.autodiff import Tensor
from fuseseg.exceptions import ConfigurationError, ShapeError
from fuseseg.fusion import (BlockFusion, FusionConfig, fuse_features,
                            normalize_weights, select_top_k)


def test_normalized_weights_sum_to_one_and_are_positive(rng):
    for _ in range(1000):
        theta = rng.normal(0.0, 2.0, size=rng.integers(2, 13))
        w = normalize_weights(Tensor(theta)).data
        assert abs(w.sum() - 1.0) <= 1e-12
        assert (w > 0).all()


def test_normalization_is_shift_invariant(rng):
    for _ in range(100):
        theta = rng.normal(0.0, 2.0, size=8)
        shift = rng.normal(0.0, 50.0)
        a = normalize_weights(Tensor(theta)).data
        b = normalize_weights(Tensor(theta + shift)).data
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_one_hot_fusion_reproduces_block_bitwise(rng):
    feats = [Tensor(rng.normal(size=(2, 4, 8))) for _ in range(5)]
    for hot in range(5):
        w = np.zeros(5)
        w[hot] = 1.0
        fused = fuse_features(feats, Tensor(w))
        assert np.array_equal(fused.data, feats[hot].data)


def test_fusion_matches_loop_sum_oracle(rng):
    feats = [Tensor(rng.normal(size=(3, 6, 4))) for _ in range(6)]
    w = normalize_weights(Tensor(rng.normal(size=6)))
    fused = fuse_features(feats, w).data
    acc = None
    for wi, f in zip(w.data, feats):
        if wi == 0.0:
            continue
        term = wi * f.data
        acc = term if acc is None else acc + term
    assert np.array_equal(fused, acc)


def test_fusion_accepts_block_feature_wrappers(rng):
    class Wrapped:
        def __init__(self, t):
            self.tokens = t

    feats = [Tensor(rng.normal(size=(1, 2, 3))) for _ in range(3)]
    w = Tensor(np.array([0.2, 0.3, 0.5]))
    a = fuse_features(feats, w).data
    b = fuse_features([Wrapped(f) for f in feats], w).data
    assert np.array_equal(a, b)


def test_fusion_rejects_weight_count_mismatch(rng):
    feats = [Tensor(rng.normal(size=(1, 2, 3))) for _ in range(3)]
    with pytest.raises(ShapeError):
        fuse_features(feats, Tensor(np.ones(4)))


def test_top_k_returns_largest_ascending():
    w = np.array([0.05, 0.4, 0.1, 0.3, 0.15])
    assert select_top_k(w, 2) == [1, 3]
    assert select_top_k(w, 4) == [1, 2, 3, 4]
    assert select_top_k(w, 5) == [0, 1, 2, 3, 4]


def test_top_k_ties_prefer_deeper_block():
    w = np.array([0.3, 0.2, 0.3, 0.2])
    assert select_top_k(w, 1) == [2]
    assert select_top_k(w, 2) == [0, 2]
    assert select_top_k(w, 3) == [0, 2, 3]


def test_top_k_selection_is_shift_invariant(rng):
    for _ in range(50):
        theta = rng.normal(0.0, 1.0, size=8)
        base = select_top_k(normalize_weights(Tensor(theta)), 4)
        shifted = select_top_k(normalize_weights(Tensor(theta + 123.0)), 4)
        assert base == shifted


def test_top_k_range_validation():
    with pytest.raises(ConfigurationError):
        select_top_k(np.ones(4), 0)
    with pytest.raises(ConfigurationError):
        select_top_k(np.ones(4), 5)


def test_fixed_list_selection_ignores_weights(rng):
    fus = BlockFusion(FusionConfig(num_blocks=8, k=4, selection_mode="fixed_list",
                                   fixed_blocks=(6, 0, 4, 2)))
    for _ in range(5):
        w = normalize_weights(Tensor(rng.normal(size=8)))
        assert fus.select(w) == [0, 2, 4, 6]


def test_fusion_config_validation():
    with pytest.raises(ConfigurationError):
        FusionConfig(num_blocks=8, k=0)
    with pytest.raises(ConfigurationError):
        FusionConfig(num_blocks=8, k=9)
    with pytest.raises(ConfigurationError):
        FusionConfig(num_blocks=8, selection_mode="best_guess")
    with pytest.raises(ConfigurationError):
        FusionConfig(num_blocks=8, k=2, selection_mode="fixed_list")
    with pytest.raises(ConfigurationError):
        FusionConfig(num_blocks=8, k=2, selection_mode="fixed_list",
                     fixed_blocks=(1, 1))
    with pytest.raises(ConfigurationError):
        FusionConfig(num_blocks=8, k=2, selection_mode="fixed_list",
                     fixed_blocks=(1, 8))
    with pytest.raises(ConfigurationError):
        FusionConfig(num_blocks=8, k=2, selection_mode="fixed_list",
                     fixed_blocks=(1, 2, 3))


def test_block_fusion_state():
    a = BlockFusion(FusionConfig(num_blocks=8), np.random.default_rng(4))
    b = BlockFusion(FusionConfig(num_blocks=8), np.random.default_rng(4))
    assert a.theta.name == "fusion.theta"
    assert not a.theta.frozen and a.theta.tensor.requires_grad
    assert a.theta.data.shape == (8,)
    assert np.array_equal(a.theta.data, b.theta.data)
    # near-uniform start: tiny logits, no exact ties
    assert np.abs(a.theta.data).max() < 0.1
    assert len(np.unique(a.theta.data)) == 8
    assert a.named_parameters() == {"fusion.theta": a.theta}


def test_weights_are_recomputed_not_cached():
    fus = BlockFusion(FusionConfig(num_blocks=4))
    before = fus.weights().data.copy()
    fus.theta.data[0] += 3.0
    after = fus.weights().data
    assert after[0] > before[0]
    assert abs(after.sum() - 1.0) <= 1e-12
