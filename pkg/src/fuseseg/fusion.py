"""Learnable per-block importance weights and top-k block selection.

A single logit per encoder block is kept as the only trainable state.  Every
forward pass renormalizes the logits with a softmax (never cached across
steps) and aggregates all block features into one tensor; the k highest
weights pick the blocks routed to decoder skip connections.  Selection is
non-differentiable, but the logits still learn because the aggregated tensor
participates in the decoder's forward graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .exceptions import ConfigurationError, ShapeError

SELECTION_MODES = ("learned_topk", "fixed_list")


@dataclass(frozen=True)
class FusionConfig:
    num_blocks: int
    k: int = 4
    selection_mode: str = "learned_topk"
    fixed_blocks: tuple[int, ...] | None = None
    init_std: float = 0.01

    def __post_init__(self):
        if not 1 <= self.k <= self.num_blocks:
            raise ConfigurationError(
                f"k must be in [1, {self.num_blocks}], got {self.k}")
        if self.selection_mode not in SELECTION_MODES:
            raise ConfigurationError(
                f"selection_mode must be one of {SELECTION_MODES}, got "
                f"{self.selection_mode!r}")
        if self.selection_mode == "fixed_list":
            if not self.fixed_blocks:
                raise ConfigurationError("fixed_list mode requires fixed_blocks")
            blocks = tuple(self.fixed_blocks)
            if len(set(blocks)) != len(blocks):
                raise ConfigurationError(f"fixed_blocks contains duplicates: {blocks}")
            if any(b < 0 or b >= self.num_blocks for b in blocks):
                raise ConfigurationError(
                    f"fixed_blocks out of range [0, {self.num_blocks}): {blocks}")
            if len(blocks) != self.k:
                raise ConfigurationError(
                    f"fixed_blocks has {len(blocks)} entries but k={self.k}")


def normalize_weights(theta: Tensor) -> Tensor:
    """Softmax normalization of the block logits (recomputed per forward)."""
    return ad.softmax(theta, axis=-1)


def fuse_features(features: list, weights: Tensor) -> Tensor:
    """Weighted aggregation ``sum_i w[i] * F_i`` over same-shaped block tensors.

    Accepts raw token tensors or :class:`~fuseseg.encoder.BlockFeatures`.
    Differentiable with respect to the weights and every feature tensor.
    """
    tensors = [f.tokens if hasattr(f, "tokens") else f for f in features]
    if len(tensors) != weights.shape[0]:
        raise ShapeError(f"{len(tensors)} feature tensors but {weights.shape[0]} weights")
    return ad.weighted_sum(tensors, weights)


def select_top_k(weights, k: int) -> list[int]:
    """Indices of the k largest weights, ties broken toward the deeper block.

    The result is sorted ascending so the skip-to-stage mapping downstream is
    deterministic.
    """
    w = weights.data if isinstance(weights, Tensor) else np.asarray(weights)
    n = w.shape[0]
    if not 1 <= k <= n:
        raise ConfigurationError(f"k must be in [1, {n}], got {k}")
    # lexsort: primary descending weight, secondary descending index
    order = np.lexsort((-np.arange(n), -w))
    return sorted(int(i) for i in order[:k])


class BlockFusion:
    """Holds the trainable logits and applies normalization/selection."""

    def __init__(self, config: FusionConfig, rng: np.random.Generator | None = None):
        self.config = config
        rng = rng or np.random.default_rng(0)
        # small random values: near-uniform importance at the start, no exact ties
        self.theta = Parameter(rng.normal(0.0, config.init_std, size=config.num_blocks),
                               name="fusion.theta", frozen=False)

    @property
    def num_blocks(self) -> int:
        return self.config.num_blocks

    def named_parameters(self) -> dict[str, Parameter]:
        return {self.theta.name: self.theta}

    def weights(self) -> Tensor:
        return normalize_weights(self.theta.tensor)

    def fuse(self, features: list, weights: Tensor) -> Tensor:
        return fuse_features(features, weights)

    def select(self, weights) -> list[int]:
        if self.config.selection_mode == "fixed_list":
            return sorted(self.config.fixed_blocks)
        return select_top_k(weights, self.config.k)
