"""Finite-difference gradient checks for every differentiable operation.

Each case builds small random inputs, forms a scalar functional of the op
output (a fixed random projection so every output element matters), and
compares the tape gradient against central differences.  The final case runs
a complete miniature model through the training loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, grad_check
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .fusion import FusionConfig
from .model import ModelConfig, SegmentationModel
from .training import combined_loss, soft_dice_loss

DEFAULT_TOLERANCE = 1e-4
DEFAULT_EPS = 1e-5


def _t(rng, *shape, scale: float = 1.0) -> Tensor:
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def _simple(op_builder):
    """Build (closure, params) where the projection array is sampled once."""
    def build(rng):
        out_fn, params = op_builder(rng)
        probe = out_fn()
        h = rng.normal(size=probe.shape)
        def closure():
            return ad.tsum(out_fn() * h)
        return closure, params
    return build


@_simple
def case_arithmetic(rng):
    a, b = _t(rng, 3, 4), _t(rng, 3, 4)
    c = _t(rng, 4)
    return (lambda: (a + b) * c - a / (b * b + 2.0) + (-a)), [a, b, c]


@_simple
def case_matmul(rng):
    a, b = _t(rng, 2, 3, 4), _t(rng, 4, 5)
    return (lambda: ad.matmul(a, b)), [a, b]


@_simple
def case_reshape_transpose(rng):
    a = _t(rng, 2, 3, 4)
    return (lambda: ad.transpose(ad.reshape(a, (2, 12, 1)), (1, 0, 2))), [a]


@_simple
def case_concat_split(rng):
    a, b = _t(rng, 2, 3), _t(rng, 2, 5)
    def run():
        joined = ad.concat([a, b], axis=1)
        left, right = ad.split(joined, [3, 5], axis=1)
        return ad.concat([right, left], axis=1)
    return run, [a, b]


@_simple
def case_reductions(rng):
    a = _t(rng, 3, 4, 5)
    return (lambda: ad.tsum(a, axis=2) + ad.tmean(a)
            + ad.tsum(ad.tsum(a, axis=(0, 1), keepdims=True))), [a]


@_simple
def case_gelu(rng):
    a = _t(rng, 4, 7)
    return (lambda: ad.gelu(a)), [a]


@_simple
def case_sigmoid(rng):
    a = _t(rng, 4, 7, scale=3.0)
    return (lambda: ad.sigmoid(a)), [a]


@_simple
def case_softmax(rng):
    a = _t(rng, 3, 6, scale=2.0)
    return (lambda: ad.softmax(a, axis=-1)), [a]


@_simple
def case_layer_norm(rng):
    a = _t(rng, 3, 8)
    gamma, beta = _t(rng, 8), _t(rng, 8)
    return (lambda: ad.layer_norm(a, gamma, beta)), [a, gamma, beta]


@_simple
def case_conv2d_same(rng):
    x = _t(rng, 2, 3, 6, 6)
    w, b = _t(rng, 4, 3, 3, 3, scale=0.5), _t(rng, 4)
    return (lambda: ad.conv2d(x, w, b, padding="same")), [x, w, b]


@_simple
def case_conv2d_1x1(rng):
    x = _t(rng, 2, 5, 4, 4)
    w, b = _t(rng, 3, 5, 1, 1, scale=0.5), _t(rng, 3)
    return (lambda: ad.conv2d(x, w, b, padding="same")), [x, w, b]


@_simple
def case_upsample2x(rng):
    x = _t(rng, 2, 3, 4, 4)
    w, b = _t(rng, 3, 3, 2, 2, scale=0.5), _t(rng, 3)
    return (lambda: ad.upsample2x(x, w, b)), [x, w, b]


@_simple
def case_resize_bilinear(rng):
    x = _t(rng, 2, 3, 5, 7)
    return (lambda: ad.resize_bilinear(x, 8, 6)), [x]


@_simple
def case_weighted_sum(rng):
    feats = [_t(rng, 2, 4, 3) for _ in range(5)]
    w = _t(rng, 5)
    return (lambda: ad.weighted_sum(feats, w)), feats + [w]


@_simple
def case_fusion_weights(rng):
    # the theta path: logits -> softmax -> weighted aggregation
    feats = [Tensor(rng.normal(size=(2, 4, 3))) for _ in range(5)]
    theta = _t(rng, 5, scale=0.5)
    return (lambda: ad.weighted_sum(feats, ad.softmax(theta, axis=-1))), [theta]


@_simple
def case_image_adapter(rng):
    # lightweight 3x3 conv + GELU over the raw image
    x = _t(rng, 2, 1, 8, 8)
    w, b = _t(rng, 4, 1, 3, 3, scale=0.5), _t(rng, 4)
    return (lambda: ad.gelu(ad.conv2d(x, w, b, padding="same"))), [x, w, b]


@_simple
def case_attention(rng):
    x = _t(rng, 2, 5, 8)
    wqkv, bqkv = _t(rng, 8, 24, scale=0.3), _t(rng, 24)
    wout, bout = _t(rng, 8, 8, scale=0.3), _t(rng, 8)
    return (lambda: ad.multi_head_attention(x, wqkv, bqkv, wout, bout, num_heads=2)), \
        [x, wqkv, bqkv, wout, bout]


def case_bce_with_logits(rng):
    z = _t(rng, 2, 1, 4, 4, scale=2.0)
    t = (rng.random((2, 1, 4, 4)) > 0.5).astype(float)
    return (lambda: ad.bce_with_logits(z, t)), [z]


def case_soft_dice(rng):
    z = _t(rng, 2, 1, 4, 4, scale=2.0)
    t = (rng.random((2, 1, 4, 4)) > 0.5).astype(float)
    return (lambda: soft_dice_loss(z, t)), [z]


def case_combined_loss(rng):
    z = _t(rng, 2, 1, 4, 4, scale=2.0)
    t = (rng.random((2, 1, 4, 4)) > 0.5).astype(float)
    return (lambda: combined_loss(z, t)), [z]


def tiny_model_config(seed: int = 0) -> ModelConfig:
    return ModelConfig(
        encoder=EncoderConfig(patch_size=4, embed_dim=8, num_blocks=2,
                              num_heads=2, mlp_ratio=2,
                              image_height=8, image_width=8),
        fusion=FusionConfig(num_blocks=2, k=2),
        decoder=DecoderConfig(num_stages=2, stage_channels=(6, 4),
                              image_adapter_channels=3),
        seed=seed)


def case_end_to_end_model(rng):
    """Whole model through the training objective, all trainable parameters."""
    model = SegmentationModel(tiny_model_config(seed=int(rng.integers(2 ** 31))))
    x = rng.random((2, 1, 8, 8))
    t = (rng.random((2, 1, 8, 8)) > 0.5).astype(float)
    return (lambda: combined_loss(model.forward(x), t)), model.trainable_parameters()


CASES = [
    ("arithmetic", case_arithmetic),
    ("matmul", case_matmul),
    ("reshape_transpose", case_reshape_transpose),
    ("concat_split", case_concat_split),
    ("sum_mean", case_reductions),
    ("gelu", case_gelu),
    ("sigmoid", case_sigmoid),
    ("softmax", case_softmax),
    ("layer_norm", case_layer_norm),
    ("conv2d_same", case_conv2d_same),
    ("conv2d_1x1", case_conv2d_1x1),
    ("upsample2x", case_upsample2x),
    ("resize_bilinear", case_resize_bilinear),
    ("weighted_sum", case_weighted_sum),
    ("fusion_weights", case_fusion_weights),
    ("image_adapter", case_image_adapter),
    ("attention", case_attention),
    ("bce_with_logits", case_bce_with_logits),
    ("soft_dice", case_soft_dice),
    ("combined_loss", case_combined_loss),
    ("end_to_end_model", case_end_to_end_model),
]


@dataclass
class CheckReport:
    name: str
    max_rel_err: float
    passed: bool


def run_gradcheck(seeds: tuple[int, ...] = (0, 1, 2), eps: float = DEFAULT_EPS,
                  tolerance: float = DEFAULT_TOLERANCE, log=None) -> list[CheckReport]:
    """Run every registered case across ``seeds``; report the worst error."""
    say = log or (lambda msg: None)
    reports = []
    for name, builder in CASES:
        case_seeds = seeds if name != "end_to_end_model" else seeds[:1]
        worst = 0.0
        for seed in case_seeds:
            closure, params = builder(np.random.default_rng(seed))
            worst = max(worst, grad_check(closure, params, eps=eps))
        report = CheckReport(name=name, max_rel_err=worst, passed=worst <= tolerance)
        reports.append(report)
        say(f"{'PASS' if report.passed else 'FAIL'}  {name:<20} "
            f"max rel err {worst:.3e}")
    return reports
