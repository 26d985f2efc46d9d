"""Full segmentation model: frozen ViT encoder + block fusion + UNet decoder.

All randomness flows from a single integer seed through spawned generator
streams (encoder init, fusion init, decoder init), so two models built with
the same config are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .decoder import DecoderConfig, UNetDecoder
from .encoder import EncoderConfig, ViTEncoder
from .exceptions import CheckpointError, ConfigurationError
from .fusion import BlockFusion, FusionConfig


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    fusion: FusionConfig = field(default_factory=lambda: FusionConfig(num_blocks=8))
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    seed: int = 0

    def __post_init__(self):
        if self.fusion.num_blocks != self.encoder.num_blocks:
            raise ConfigurationError(
                f"fusion covers {self.fusion.num_blocks} blocks but the encoder "
                f"has {self.encoder.num_blocks}")
        if self.fusion.k != self.decoder.num_stages:
            raise ConfigurationError(
                f"{self.fusion.k} selected blocks cannot feed "
                f"{self.decoder.num_stages} decoder stages (need one per stage)")
        gh, gw = self.encoder.grid
        scale = 2 ** self.decoder.num_stages
        if gh * scale > 8 * self.encoder.image_height:
            raise ConfigurationError(
                f"decoder output {gh * scale}x{gw * scale} is implausibly larger "
                f"than the {self.encoder.image_height}x{self.encoder.image_width} input")


class SegmentationModel:
    """Owns the three submodules and exposes a flat parameter namespace."""

    def __init__(self, config: ModelConfig):
        self.config = config
        streams = np.random.SeedSequence(config.seed).spawn(3)
        enc_rng, fus_rng, dec_rng = (np.random.default_rng(s) for s in streams)
        self.encoder = ViTEncoder(config.encoder, enc_rng, frozen=True)
        self.fusion = BlockFusion(config.fusion, fus_rng)
        self.decoder = UNetDecoder(
            config.decoder,
            embed_dim=config.encoder.embed_dim,
            in_channels=config.encoder.in_channels,
            grid=config.encoder.grid,
            image_size=(config.encoder.image_height, config.encoder.image_width),
            rng=dec_rng)

    def named_parameters(self) -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        out.update(self.encoder.named_parameters())
        out.update(self.fusion.named_parameters())
        out.update(self.decoder.named_parameters())
        return out

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self.named_parameters().values() if not p.frozen]

    def forward(self, image, trace: bool = False):
        """Image batch (B, C, H, W) -> logits (B, out_classes, H, W)."""
        features = self.encoder.forward(image)
        return self.decoder.forward(image, features, self.fusion, trace=trace)

    def predict_proba(self, image) -> np.ndarray:
        """Foreground probabilities, computed off the autodiff tape."""
        with ad.no_grad():
            logits = self.forward(image)
            return ad.sigmoid(logits).data

    def predict_mask(self, image, threshold: float = 0.5) -> np.ndarray:
        return (self.predict_proba(image) >= threshold).astype(np.uint8)

    def block_weights(self) -> np.ndarray:
        return self.fusion.weights().data.copy()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, tensors: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = sorted(set(params) - set(tensors))
        extra = sorted(set(tensors) - set(params))
        if missing or extra:
            raise CheckpointError(
                f"state mismatch: missing {missing or 'none'}, unexpected {extra or 'none'}")
        for name, p in params.items():
            value = np.asarray(tensors[name], dtype=np.float64)
            if value.shape != p.data.shape:
                raise CheckpointError(
                    f"tensor {name!r} has shape {value.shape}, expected {p.data.shape}")
            np.copyto(p.data, value)


def desk_model_config(seed: int = 42, *, selection_mode: str = "learned_topk",
                      fixed_blocks: tuple[int, ...] | None = None,
                      spatial_integration: bool = True,
                      num_blocks: int = 8, embed_dim: int = 64,
                      image_size: int = 64) -> ModelConfig:
    """Small configuration that trains in minutes on one CPU core."""
    heads = max(2, embed_dim // 16)
    return ModelConfig(
        encoder=EncoderConfig(patch_size=8, embed_dim=embed_dim,
                              num_blocks=num_blocks, num_heads=heads,
                              image_height=image_size, image_width=image_size),
        fusion=FusionConfig(num_blocks=num_blocks, k=4,
                            selection_mode=selection_mode,
                            fixed_blocks=fixed_blocks),
        decoder=DecoderConfig(spatial_integration=spatial_integration),
        seed=seed)
