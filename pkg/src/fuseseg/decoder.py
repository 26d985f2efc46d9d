"""UNet-style decoder over fused ViT block features.

The bottleneck is the deepest encoder block's feature map, enriched with the
weighted aggregate of all blocks.  Each stage concatenates (in this order) a
downsized copy of the adapted input image, one skip-projected block map, and
the previous stage's output, then refines with a 3x3 convolution and doubles
the resolution with a learnable 2x2/stride-2 transposed convolution.  Stage n
therefore runs at exactly ``grid * 2**n``; the final head logits are resized
bilinearly to the input resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .exceptions import ConfigurationError, ShapeError
from .fusion import BlockFusion

DESK_STAGE_CHANNELS = (64, 32, 16, 8)
FULL_STAGE_CHANNELS = (256, 128, 64, 32)


@dataclass(frozen=True)
class DecoderConfig:
    num_stages: int = 4
    stage_channels: tuple[int, ...] = DESK_STAGE_CHANNELS
    image_adapter_channels: int = 8
    out_classes: int = 1
    spatial_integration: bool = True
    use_fused_bottleneck: bool = True

    def __post_init__(self):
        if self.num_stages < 1:
            raise ConfigurationError(f"num_stages must be >= 1, got {self.num_stages}")
        if len(self.stage_channels) != self.num_stages:
            raise ConfigurationError(
                f"stage_channels has {len(self.stage_channels)} entries for "
                f"{self.num_stages} stages")
        if any(c < 1 for c in self.stage_channels):
            raise ConfigurationError(f"stage_channels must be positive: "
                                     f"{self.stage_channels}")
        if self.image_adapter_channels < 1 or self.out_classes < 1:
            raise ConfigurationError("adapter channels and out_classes must be >= 1")


@dataclass
class DecodeTrace:
    """Diagnostics captured during a traced forward pass."""

    selection: list[int]
    weights: np.ndarray
    stage_output_sizes: list[tuple[int, int]]
    concat_channels: list[int]
    head_size: tuple[int, int]


def tokens_to_map(tokens, grid: tuple[int, int]) -> Tensor:
    """Reshape (B, N, D) tokens to a (B, D, gh, gw) feature map.

    Token t lands in grid cell (t // gw, t % gw), the inverse of the patch
    enumeration; :func:`map_to_tokens` round-trips bit-exactly.
    """
    tokens = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
    gh, gw = grid
    b, n, d = tokens.shape
    if n != gh * gw:
        raise ShapeError(f"{n} tokens do not fill a {gh}x{gw} grid")
    x = ad.reshape(tokens, (b, gh, gw, d))
    return ad.transpose(x, (0, 3, 1, 2))


def map_to_tokens(fmap) -> Tensor:
    """Inverse of :func:`tokens_to_map`."""
    fmap = fmap if isinstance(fmap, Tensor) else Tensor(fmap)
    b, d, gh, gw = fmap.shape
    x = ad.transpose(fmap, (0, 2, 3, 1))
    return ad.reshape(x, (b, gh * gw, d))


class UNetDecoder:
    """Trainable decoder head; construct once per model, forward is pure."""

    def __init__(self, config: DecoderConfig, embed_dim: int, in_channels: int,
                 grid: tuple[int, int], image_size: tuple[int, int],
                 rng: np.random.Generator | None = None):
        self.config = config
        self.embed_dim = embed_dim
        self.in_channels = in_channels
        self.grid = grid
        self.image_size = image_size
        rng = rng or np.random.default_rng(0)
        self._params: dict[str, Parameter] = {}

        def conv_param(name: str, cout: int, cin: int, k: int) -> Parameter:
            std = np.sqrt(2.0 / (cin * k * k))
            p = Parameter(rng.normal(0.0, std, size=(cout, cin, k, k)),
                          name=f"decoder.{name}.weight")
            self._params[p.name] = p
            bias = Parameter(np.zeros(cout), name=f"decoder.{name}.bias")
            self._params[bias.name] = bias
            return p, bias

        def up_param(name: str, channels: int) -> Parameter:
            std = np.sqrt(1.0 / channels)
            p = Parameter(rng.normal(0.0, std, size=(channels, channels, 2, 2)),
                          name=f"decoder.{name}.weight")
            self._params[p.name] = p
            bias = Parameter(np.zeros(channels), name=f"decoder.{name}.bias")
            self._params[bias.name] = bias
            return p, bias

        ch = config.stage_channels
        cimg = config.image_adapter_channels
        self.adapter = conv_param("adapter", cimg, in_channels, 3)
        bottleneck_in = 2 * embed_dim if config.use_fused_bottleneck else embed_dim
        self.bottleneck = conv_param("bottleneck", ch[0], bottleneck_in, 1)
        self.stages = []
        prev = ch[0]
        for j in range(config.num_stages):
            concat_in = ch[j] + prev + (cimg if config.spatial_integration else 0)
            self.stages.append({
                "skip": conv_param(f"stages.{j}.skip", ch[j], embed_dim, 1),
                "conv": conv_param(f"stages.{j}.conv", ch[j], concat_in, 3),
                "up": up_param(f"stages.{j}.up", ch[j]),
                "concat_in": concat_in,
            })
            prev = ch[j]
        self.head = conv_param("head", config.out_classes, ch[-1], 3)

    def named_parameters(self) -> dict[str, Parameter]:
        return dict(self._params)

    def image_adapter(self, image) -> Tensor:
        """Lightweight 3x3 conv + GELU aligning the raw image with decoder widths."""
        image = image if isinstance(image, Tensor) else Tensor(image)
        w, b = self.adapter
        return ad.gelu(ad.conv2d(image, w.tensor, b.tensor, padding="same"))

    def skip_project(self, block_map: Tensor, stage: int,
                     target_size: tuple[int, int]) -> Tensor:
        """1x1 channel reduction then bilinear resize to the stage resolution."""
        w, b = self.stages[stage]["skip"]
        proj = ad.conv2d(block_map, w.tensor, b.tensor, padding="same")
        return ad.resize_bilinear(proj, *target_size)

    def decoder_stage(self, stage: int, prev: Tensor, skip: Tensor,
                      image: Tensor | None) -> Tensor:
        """concat(image', skip, prev) -> 3x3 conv + GELU -> 2x upsample."""
        operands = [skip, prev] if image is None else [image, skip, prev]
        sizes = {op.shape[2:] for op in operands}
        if len(sizes) != 1:
            raise AssertionError(
                f"decoder stage {stage} operands disagree spatially: "
                f"{[op.shape for op in operands]}")
        cat = ad.concat(operands, axis=1)
        wc, bc = self.stages[stage]["conv"]
        wu, bu = self.stages[stage]["up"]
        y = ad.gelu(ad.conv2d(cat, wc.tensor, bc.tensor, padding="same"))
        return ad.upsample2x(y, wu.tensor, bu.tensor)

    def forward(self, image, encoder_out: list, fusion: BlockFusion,
                trace: bool = False):
        """Decode fused block features into full-resolution logits.

        With ``trace=True`` returns ``(logits, DecodeTrace)``.
        """
        cfg = self.config
        if len(encoder_out) != fusion.num_blocks:
            raise ShapeError(f"got {len(encoder_out)} block features for "
                             f"{fusion.num_blocks} fusion weights")
        feats = [f.tokens if hasattr(f, "tokens") else f for f in encoder_out]
        image = image if isinstance(image, Tensor) else Tensor(image)

        weights = fusion.weights()
        selection = fusion.select(weights)
        if len(selection) != cfg.num_stages:
            raise ConfigurationError(
                f"selection of {len(selection)} blocks does not match "
                f"{cfg.num_stages} decoder stages")

        last_map = tokens_to_map(feats[-1], self.grid)
        if cfg.use_fused_bottleneck:
            fused = fusion.fuse(feats, weights)
            bottleneck_in = ad.concat([last_map, tokens_to_map(fused, self.grid)], axis=1)
        else:
            bottleneck_in = last_map
        wb, bb = self.bottleneck
        x = ad.conv2d(bottleneck_in, wb.tensor, bb.tensor, padding="same")

        iprime = self.image_adapter(image) if cfg.spatial_integration else None

        gh, gw = self.grid
        stage_sizes: list[tuple[int, int]] = []
        concat_channels: list[int] = []
        for j in range(cfg.num_stages):
            res = (gh * 2 ** j, gw * 2 ** j)
            # deepest selected block feeds the lowest-resolution stage
            block_idx = selection[cfg.num_stages - 1 - j]
            skip = self.skip_project(tokens_to_map(feats[block_idx], self.grid), j, res)
            img_j = None
            if iprime is not None:
                img_j = ad.resize_bilinear(iprime, *res)
            concat_channels.append(self.stages[j]["concat_in"])
            x = self.decoder_stage(j, x, skip, img_j)
            stage_sizes.append(x.shape[2:])

        wh, bh = self.head
        core = ad.conv2d(x, wh.tensor, bh.tensor, padding="same")
        logits = ad.resize_bilinear(core, *self.image_size)
        if not trace:
            return logits
        return logits, DecodeTrace(selection=selection,
                                   weights=weights.data.copy(),
                                   stage_output_sizes=stage_sizes,
                                   concat_channels=concat_channels,
                                   head_size=core.shape[2:])
