"""Assembled-model tests: parameter namespace, seeding, prediction API,
and state dict round trips."""

from __future__ import annotations

import numpy as np
import pytest

from fuseseg.decoder import DecoderConfig
from fuseseg.encoder import EncoderConfig
from fuseseg.exceptions import CheckpointError, ConfigurationError
from fuseseg.fusion import FusionConfig
from fuseseg.model import ModelConfig, SegmentationModel, desk_model_config

from conftest import tiny_model_config


def test_parameter_namespace_is_flat_and_prefixed(tiny_model):
    params = tiny_model.named_parameters()
    assert len(params) == (len(tiny_model.encoder.named_parameters())
                           + 1 + len(tiny_model.decoder.named_parameters()))
    for name, p in params.items():
        assert name == p.name
        assert name.split(".", 1)[0] in ("encoder", "fusion", "decoder")


def test_only_fusion_and_decoder_are_trainable(tiny_model):
    trainable = {p.name for p in tiny_model.trainable_parameters()}
    assert "fusion.theta" in trainable
    assert any(n.startswith("decoder.") for n in trainable)
    assert not any(n.startswith("encoder.") for n in trainable)


def test_same_seed_builds_identical_models():
    a = SegmentationModel(tiny_model_config(seed=5))
    b = SegmentationModel(tiny_model_config(seed=5))
    c = SegmentationModel(tiny_model_config(seed=6))
    sa, sb, sc = a.state_dict(), b.state_dict(), c.state_dict()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)
    assert any(not np.array_equal(sa[k], sc[k]) for k in sa)


def test_predict_proba_and_mask(rng, tiny_model):
    x = rng.normal(size=(3, 1, 16, 16))
    proba = tiny_model.predict_proba(x)
    assert isinstance(proba, np.ndarray)
    assert proba.shape == (3, 1, 16, 16)
    assert (proba >= 0).all() and (proba <= 1).all()
    mask = tiny_model.predict_mask(x)
    assert mask.dtype == np.uint8
    assert set(np.unique(mask)) <= {0, 1}
    assert (tiny_model.predict_mask(x, threshold=0.0) == 1).all()
    assert (tiny_model.predict_mask(x, threshold=1.1) == 0).all()


def test_block_weights_returns_independent_copy(tiny_model):
    w = tiny_model.block_weights()
    assert w.shape == (tiny_model.config.fusion.num_blocks,)
    assert abs(w.sum() - 1.0) <= 1e-12
    w[:] = 0.0
    assert abs(tiny_model.block_weights().sum() - 1.0) <= 1e-12


def test_state_dict_round_trip(rng):
    src = SegmentationModel(tiny_model_config(seed=1))
    dst = SegmentationModel(tiny_model_config(seed=2))
    x = rng.normal(size=(1, 1, 16, 16))
    assert not np.array_equal(src.predict_proba(x), dst.predict_proba(x))
    dst.load_state_dict(src.state_dict())
    assert np.array_equal(src.predict_proba(x), dst.predict_proba(x))


def test_load_state_dict_validates(tiny_model):
    state = tiny_model.state_dict()
    extra = dict(state, bogus=np.zeros(2))
    with pytest.raises(CheckpointError):
        tiny_model.load_state_dict(extra)
    short = dict(state)
    short.pop("fusion.theta")
    with pytest.raises(CheckpointError):
        tiny_model.load_state_dict(short)
    bad = dict(state)
    bad["fusion.theta"] = np.zeros(99)
    with pytest.raises(CheckpointError):
        tiny_model.load_state_dict(bad)


def test_traced_forward_reports_selection(rng, tiny_model):
    _, trace = tiny_model.forward(rng.normal(size=(1, 1, 16, 16)), trace=True)
    assert trace.selection == sorted(trace.selection)
    assert len(trace.selection) == tiny_model.config.decoder.num_stages
    assert abs(trace.weights.sum() - 1.0) <= 1e-12


def test_model_config_cross_validation():
    enc = EncoderConfig(patch_size=4, embed_dim=8, num_blocks=4, num_heads=2,
                        mlp_ratio=2, image_height=16, image_width=16)
    with pytest.raises(ConfigurationError):
        ModelConfig(encoder=enc, fusion=FusionConfig(num_blocks=6, k=2),
                    decoder=DecoderConfig(num_stages=2, stage_channels=(8, 4),
                                          image_adapter_channels=3))
    with pytest.raises(ConfigurationError):
        ModelConfig(encoder=enc, fusion=FusionConfig(num_blocks=4, k=3),
                    decoder=DecoderConfig(num_stages=2, stage_channels=(8, 4),
                                          image_adapter_channels=3))
    tall = EncoderConfig(patch_size=1, embed_dim=8, num_blocks=4, num_heads=2,
                         mlp_ratio=2, image_height=8, image_width=8)
    with pytest.raises(ConfigurationError):
        ModelConfig(encoder=tall, fusion=FusionConfig(num_blocks=4, k=4),
                    decoder=DecoderConfig(num_stages=4,
                                          stage_channels=(8, 8, 4, 4),
                                          image_adapter_channels=3))


def test_desk_model_config_geometry():
    cfg = desk_model_config()
    assert cfg.encoder.image_height == cfg.encoder.image_width == 64
    assert cfg.encoder.patch_size == 8
    assert cfg.fusion.k == 4 and cfg.decoder.num_stages == 4
    assert cfg.encoder.embed_dim % cfg.encoder.num_heads == 0
    fixed = desk_model_config(selection_mode="fixed_list",
                              fixed_blocks=(0, 2, 4, 6))
    assert fixed.fusion.fixed_blocks == (0, 2, 4, 6)
