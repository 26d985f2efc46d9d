"""Encoder tests: patch geometry, block wiring against a numpy oracle,
freezing, and weight container round trips."""

from __future__ import annotations

import math

import numpy as np
import pytest

from fuseseg.autodiff import Tensor
from fuseseg.encoder import (EncoderConfig, ViTEncoder, depatchify,
                             embed_patches, patchify)
from fuseseg.exceptions import CheckpointError, ConfigurationError, NumericError

TINY = EncoderConfig(patch_size=4, embed_dim=8, num_blocks=2, num_heads=2,
                     mlp_ratio=2, image_height=8, image_width=8)


def _naive_patchify(x, p):
    b, c, h, w = x.shape
    gh, gw = h // p, w // p
    out = np.zeros((b, gh * gw, c * p * p))
    for n in range(b):
        for pi in range(gh):
            for pj in range(gw):
                patch = x[n, :, pi * p:(pi + 1) * p, pj * p:(pj + 1) * p]
                out[n, pi * gw + pj] = patch.reshape(-1)
    return out


def test_patchify_matches_loop_oracle(rng):
    x = rng.normal(size=(2, 3, 8, 12))
    got = patchify(Tensor(x), 4).data
    assert np.array_equal(got, _naive_patchify(x, 4))


def test_depatchify_round_trip_bit_exact(rng):
    x = rng.normal(size=(2, 2, 8, 12))
    patches = patchify(Tensor(x), 4)
    back = depatchify(patches, 4, channels=2, height=8, width=12)
    assert np.array_equal(back.data, x)


def test_patchify_rejects_indivisible_image(rng):
    with pytest.raises(ConfigurationError):
        patchify(Tensor(rng.normal(size=(1, 1, 9, 8))), 4)


def test_grid_and_token_count_properties():
    cfg = EncoderConfig(patch_size=14, embed_dim=96, num_blocks=12, num_heads=6,
                        image_height=448, image_width=448)
    assert cfg.grid == (32, 32)
    assert cfg.num_tokens == 1024
    assert cfg.patch_dim == 196
    assert TINY.grid == (2, 2) and TINY.num_tokens == 4


def test_config_validation():
    with pytest.raises(ConfigurationError):
        EncoderConfig(patch_size=8, image_height=60, image_width=64)
    with pytest.raises(ConfigurationError):
        EncoderConfig(embed_dim=10, num_heads=4)
    with pytest.raises(ConfigurationError):
        EncoderConfig(num_blocks=0)


def _ln(x, gamma, beta, eps=1e-6):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return gamma * (x - mu) / np.sqrt(var + eps) + beta


def _attn(x, w_qkv, b_qkv, w_out, b_out, heads):
    b, n, d = x.shape
    dh = d // heads
    qkv = x @ w_qkv + b_qkv
    q, k, v = qkv[..., :d], qkv[..., d:2 * d], qkv[..., 2 * d:]
    out = np.zeros((b, n, d))
    for bi in range(b):
        for h in range(heads):
            sl = slice(h * dh, (h + 1) * dh)
            scores = q[bi, :, sl] @ k[bi, :, sl].T / math.sqrt(dh)
            e = np.exp(scores - scores.max(axis=1, keepdims=True))
            out[bi, :, sl] = (e / e.sum(axis=1, keepdims=True)) @ v[bi, :, sl]
    return out @ w_out + b_out


def _gelu(x):
    from scipy.special import erf
    return x * 0.5 * (1.0 + erf(x / math.sqrt(2.0)))


def test_forward_matches_straight_line_block_oracle(rng):
    enc = ViTEncoder(TINY, np.random.default_rng(3))
    x = rng.normal(size=(2, 1, 8, 8))
    feats = enc.forward(x)

    tokens = _naive_patchify(x, 4) @ enc.patch_weight.data + enc.patch_bias.data
    cur = tokens + enc.pos_embed.data
    for i, blk in enumerate(enc.blocks):
        h = cur + _attn(_ln(cur, blk["ln1_gamma"].data, blk["ln1_beta"].data),
                        blk["w_qkv"].data, blk["b_qkv"].data,
                        blk["w_out"].data, blk["b_out"].data, TINY.num_heads)
        mlp_in = _ln(h, blk["ln2_gamma"].data, blk["ln2_beta"].data)
        cur = h + _gelu(mlp_in @ blk["w_fc1"].data + blk["b_fc1"].data) \
            @ blk["w_fc2"].data + blk["b_fc2"].data
        np.testing.assert_allclose(feats[i].tokens.data, cur,
                                   rtol=1e-10, atol=1e-10)


def test_forward_emits_every_block_shallow_to_deep(rng):
    enc = ViTEncoder(TINY)
    feats = enc.forward(rng.normal(size=(3, 1, 8, 8)))
    assert [f.block_index for f in feats] == [0, 1]
    for f in feats:
        assert f.tokens.shape == (3, 4, 8)
    assert not np.array_equal(feats[0].tokens.data, feats[1].tokens.data)


def test_frozen_encoder_builds_no_tape(rng):
    enc = ViTEncoder(TINY)
    assert all(p.frozen and not p.tensor.requires_grad
               for p in enc.named_parameters().values())
    feats = enc.forward(rng.normal(size=(1, 1, 8, 8)))
    assert not feats[-1].tokens.requires_grad
    assert feats[-1].tokens._parents == ()


def test_same_rng_seed_gives_identical_parameters():
    a = ViTEncoder(TINY, np.random.default_rng(11))
    b = ViTEncoder(TINY, np.random.default_rng(11))
    c = ViTEncoder(TINY, np.random.default_rng(12))
    pa, pb, pc = (e.named_parameters() for e in (a, b, c))
    assert all(np.array_equal(pa[k].data, pb[k].data) for k in pa)
    assert any(not np.array_equal(pa[k].data, pc[k].data) for k in pa)


def test_forward_rejects_wrong_image_shape(rng):
    enc = ViTEncoder(TINY)
    with pytest.raises(ConfigurationError):
        enc.forward(rng.normal(size=(1, 1, 16, 16)))


def test_export_bind_round_trip(rng):
    enc = ViTEncoder(TINY, np.random.default_rng(5))
    saved = enc.export_weights()
    other = ViTEncoder(TINY, np.random.default_rng(99))
    other.bind_weights(saved)
    for name, p in enc.named_parameters().items():
        assert np.array_equal(p.data, other.named_parameters()[name].data)


def test_bind_rejects_mismatched_containers():
    enc = ViTEncoder(TINY)
    weights = enc.export_weights()
    del weights["encoder.pos_embed"]
    with pytest.raises(CheckpointError):
        enc.bind_weights(weights)
    weights = enc.export_weights()
    weights["encoder.bogus"] = np.zeros(3)
    with pytest.raises(CheckpointError):
        enc.bind_weights(weights)
    weights = enc.export_weights()
    weights["encoder.pos_embed"] = np.zeros((1, 1))
    with pytest.raises(CheckpointError):
        enc.bind_weights(weights)


@pytest.mark.filterwarnings("ignore:invalid value encountered")
def test_nonfinite_activation_raises(rng):
    enc = ViTEncoder(TINY)
    weights = enc.export_weights()
    weights["encoder.blocks.0.mlp.w2"] = np.full_like(
        weights["encoder.blocks.0.mlp.w2"], np.inf)
    enc.bind_weights(weights)
    with pytest.raises(NumericError):
        enc.forward(rng.normal(size=(1, 1, 8, 8)))


def test_embed_patches_adds_positional_table(rng):
    patches = rng.normal(size=(2, 4, 16))
    w = rng.normal(size=(16, 8))
    b = rng.normal(size=8)
    pos = rng.normal(size=(4, 8))
    got = embed_patches(Tensor(patches), Tensor(w), Tensor(b), Tensor(pos)).data
    np.testing.assert_allclose(got, patches @ w + b + pos, rtol=1e-12)
