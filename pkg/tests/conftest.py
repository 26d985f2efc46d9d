"""Shared fixtures: tiny model configurations and cached synthetic data.

Everything here is sized for speed; the full-size desk pipeline lives in
test_acceptance.py behind session-scoped fixtures.
"""

from __future__ import annotations

import numpy as np
import pytest

from fuseseg.data import Sample, generate_synthetic
from fuseseg.decoder import DecoderConfig
from fuseseg.encoder import EncoderConfig
from fuseseg.fusion import FusionConfig
from fuseseg.model import ModelConfig, SegmentationModel


def tiny_model_config(seed: int = 0, *, image_size: int = 16,
                      spatial_integration: bool = True,
                      use_fused_bottleneck: bool = True,
                      selection_mode: str = "learned_topk",
                      fixed_blocks: tuple[int, ...] | None = None,
                      num_blocks: int = 4, k: int = 2) -> ModelConfig:
    """Smallest config that still exercises every code path."""
    return ModelConfig(
        encoder=EncoderConfig(patch_size=4, embed_dim=8, num_blocks=num_blocks,
                              num_heads=2, mlp_ratio=2,
                              image_height=image_size, image_width=image_size),
        fusion=FusionConfig(num_blocks=num_blocks, k=k,
                            selection_mode=selection_mode,
                            fixed_blocks=fixed_blocks),
        decoder=DecoderConfig(num_stages=k, stage_channels=(8, 6, 4, 4)[:k],
                              image_adapter_channels=3,
                              spatial_integration=spatial_integration,
                              use_fused_bottleneck=use_fused_bottleneck),
        seed=seed)


@pytest.fixture
def tiny_model() -> SegmentationModel:
    return SegmentationModel(tiny_model_config())


@pytest.fixture(scope="session")
def small_dataset() -> list[Sample]:
    """Six patients of two 32x32 slices each; shared read-only."""
    return generate_synthetic(num_patients=6, slices_per_patient=2,
                              image_size=32, seed=7)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
