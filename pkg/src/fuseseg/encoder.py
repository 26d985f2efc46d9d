"""Frozen ViT-style encoder emitting per-block token features.

The encoder mirrors the usual pre-norm ViT layout (patch embedding with a
learned positional table, then ``LN -> MHSA -> residual, LN -> MLP ->
residual`` blocks) and returns the residual-stream tokens of every block,
shallow to deep.  All parameters are frozen by default: they are initialized
randomly (or bound from an exported container) and receive no optimizer
updates, so the trainable heads downstream learn against fixed features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .exceptions import CheckpointError, ConfigurationError, NumericError

INIT_STD = 0.02


@dataclass(frozen=True)
class EncoderConfig:
    """Geometry and width of the encoder."""

    patch_size: int = 8
    embed_dim: int = 64
    num_blocks: int = 8
    num_heads: int = 4
    mlp_ratio: int = 4
    image_height: int = 64
    image_width: int = 64
    in_channels: int = 1

    def __post_init__(self):
        if self.patch_size < 1:
            raise ConfigurationError(f"patch_size must be >= 1, got {self.patch_size}")
        if self.num_blocks < 1:
            raise ConfigurationError(f"num_blocks must be >= 1, got {self.num_blocks}")
        if self.num_heads < 1 or self.embed_dim % self.num_heads:
            raise ConfigurationError(
                f"embed_dim {self.embed_dim} must be divisible by num_heads "
                f"{self.num_heads}")
        if self.image_height % self.patch_size or self.image_width % self.patch_size:
            raise ConfigurationError(
                f"image {self.image_height}x{self.image_width} not divisible by "
                f"patch size {self.patch_size}")
        if self.mlp_ratio < 1:
            raise ConfigurationError(f"mlp_ratio must be >= 1, got {self.mlp_ratio}")
        if self.in_channels < 1:
            raise ConfigurationError(f"in_channels must be >= 1, got {self.in_channels}")

    @property
    def grid(self) -> tuple[int, int]:
        return (self.image_height // self.patch_size,
                self.image_width // self.patch_size)

    @property
    def num_tokens(self) -> int:
        gh, gw = self.grid
        return gh * gw

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.in_channels


@dataclass
class BlockFeatures:
    """Token tensor emitted by one encoder block (0-based, shallow to deep)."""

    block_index: int
    tokens: Tensor  # (B, N, D)


def patchify(image, patch_size: int) -> Tensor:
    """Split (B, C, H, W) into non-overlapping patch vectors (B, N, P*P*C).

    Patches are enumerated row-major over the grid; within a patch, values
    are laid out channel-major then row-major, so the inverse mapping in
    :func:`depatchify` round-trips bit-exactly.
    """
    image = image if isinstance(image, Tensor) else Tensor(image)
    b, c, h, w = image.shape
    p = patch_size
    if h % p or w % p:
        raise ConfigurationError(f"image {h}x{w} not divisible by patch size {p}")
    gh, gw = h // p, w // p
    x = ad.reshape(image, (b, c, gh, p, gw, p))
    x = ad.transpose(x, (0, 2, 4, 1, 3, 5))        # (B, gh, gw, C, P, P)
    return ad.reshape(x, (b, gh * gw, c * p * p))


def depatchify(patches, patch_size: int, channels: int,
               height: int, width: int) -> Tensor:
    """Inverse of :func:`patchify`."""
    patches = patches if isinstance(patches, Tensor) else Tensor(patches)
    b = patches.shape[0]
    p = patch_size
    gh, gw = height // p, width // p
    x = ad.reshape(patches, (b, gh, gw, channels, p, p))
    x = ad.transpose(x, (0, 3, 1, 4, 2, 5))        # (B, C, gh, P, gw, P)
    return ad.reshape(x, (b, channels, height, width))


def embed_patches(patches, weight, bias, positional) -> Tensor:
    """Linear projection of patch vectors plus a per-token positional table."""
    tokens = ad.add(ad.matmul(patches, weight), bias)
    return ad.add(tokens, positional)


class ViTEncoder:
    """Stack of pre-norm transformer blocks over patch tokens.

    Stateless after construction; forward passes are read-only and
    deterministic.
    """

    def __init__(self, config: EncoderConfig, rng: np.random.Generator | None = None,
                 frozen: bool = True):
        self.config = config
        self.frozen = frozen
        rng = rng or np.random.default_rng(0)
        d = config.embed_dim
        hidden = config.mlp_ratio * d

        def param(name: str, shape, std: float | None = INIT_STD) -> Parameter:
            if std is None:
                data = np.zeros(shape)
            elif std == 0.0:
                data = np.ones(shape)
            else:
                data = rng.normal(0.0, std, size=shape)
            return Parameter(data, name=f"encoder.{name}", frozen=frozen)

        self._params: dict[str, Parameter] = {}

        def reg(p: Parameter) -> Parameter:
            self._params[p.name] = p
            return p

        self.patch_weight = reg(param("patch_embed.weight", (config.patch_dim, d)))
        self.patch_bias = reg(param("patch_embed.bias", (d,), std=None))
        self.pos_embed = reg(param("pos_embed", (config.num_tokens, d)))
        self.blocks = []
        for i in range(config.num_blocks):
            blk = {
                "ln1_gamma": reg(param(f"blocks.{i}.ln1.gamma", (d,), std=0.0)),
                "ln1_beta": reg(param(f"blocks.{i}.ln1.beta", (d,), std=None)),
                "w_qkv": reg(param(f"blocks.{i}.attn.w_qkv", (d, 3 * d))),
                "b_qkv": reg(param(f"blocks.{i}.attn.b_qkv", (3 * d,), std=None)),
                "w_out": reg(param(f"blocks.{i}.attn.w_out", (d, d))),
                "b_out": reg(param(f"blocks.{i}.attn.b_out", (d,), std=None)),
                "ln2_gamma": reg(param(f"blocks.{i}.ln2.gamma", (d,), std=0.0)),
                "ln2_beta": reg(param(f"blocks.{i}.ln2.beta", (d,), std=None)),
                "w_fc1": reg(param(f"blocks.{i}.mlp.w1", (d, hidden))),
                "b_fc1": reg(param(f"blocks.{i}.mlp.b1", (hidden,), std=None)),
                "w_fc2": reg(param(f"blocks.{i}.mlp.w2", (hidden, d))),
                "b_fc2": reg(param(f"blocks.{i}.mlp.b2", (d,), std=None)),
            }
            self.blocks.append(blk)

    def named_parameters(self) -> dict[str, Parameter]:
        return dict(self._params)

    def forward(self, image) -> list[BlockFeatures]:
        """Run the block stack, returning every block's tokens shallow to deep."""
        cfg = self.config
        image = image if isinstance(image, Tensor) else Tensor(image)
        if image.shape[1:] != (cfg.in_channels, cfg.image_height, cfg.image_width):
            raise ConfigurationError(
                f"encoder expects (B, {cfg.in_channels}, {cfg.image_height}, "
                f"{cfg.image_width}) input, got {image.shape}")
        patches = patchify(image, cfg.patch_size)
        x = embed_patches(patches, self.patch_weight.tensor, self.patch_bias.tensor,
                          self.pos_embed.tensor)
        feats: list[BlockFeatures] = []
        for i, blk in enumerate(self.blocks):
            h = ad.add(x, ad.multi_head_attention(
                ad.layer_norm(x, blk["ln1_gamma"].tensor, blk["ln1_beta"].tensor),
                blk["w_qkv"].tensor, blk["b_qkv"].tensor,
                blk["w_out"].tensor, blk["b_out"].tensor, cfg.num_heads))
            mlp_in = ad.layer_norm(h, blk["ln2_gamma"].tensor, blk["ln2_beta"].tensor)
            mlp = ad.add(ad.matmul(ad.gelu(ad.add(ad.matmul(mlp_in, blk["w_fc1"].tensor),
                                                  blk["b_fc1"].tensor)),
                                   blk["w_fc2"].tensor),
                         blk["b_fc2"].tensor)
            x = ad.add(h, mlp)
            if not np.isfinite(x.data).all():
                raise NumericError(f"non-finite activation in encoder block {i}")
            feats.append(BlockFeatures(block_index=i, tokens=x))
        return feats

    def bind_weights(self, tensors: dict[str, np.ndarray]) -> None:
        """Bind named tensors onto the encoder; names must match exactly."""
        expected = set(self._params)
        got = set(tensors)
        missing = sorted(expected - got)
        extra = sorted(got - expected)
        if missing or extra:
            parts = []
            if missing:
                parts.append(f"missing tensors: {', '.join(missing)}")
            if extra:
                parts.append(f"unexpected tensors: {', '.join(extra)}")
            raise CheckpointError("encoder weight container mismatch: " + "; ".join(parts))
        for name, p in self._params.items():
            arr = np.asarray(tensors[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise CheckpointError(
                    f"encoder tensor {name} has shape {arr.shape}, expected "
                    f"{p.data.shape}")
            p.tensor.data = arr.copy()

    def export_weights(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}
