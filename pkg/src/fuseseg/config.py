"""Flat key=value configuration with presets and override layering.

Precedence, lowest to highest: built-in defaults (full-scale recipe), a named
preset, a config file, then repeated ``--set key=value`` overrides.  Every key
is typed and validated; unknown keys are rejected with their source location.
Block indices in ``fusion.fixed_blocks`` are 0-based counting from the
shallowest encoder block.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .exceptions import ConfigurationError
from .fusion import FusionConfig
from .model import ModelConfig
from .training import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    num_patients: int = 60
    slices_per_patient: int = 8
    image_size: int = 448
    seed: int = 0
    noise: float = 0.1
    val_fraction: float = 0.10
    test_fraction: float = 0.20

    def __post_init__(self):
        if self.num_patients < 3:
            raise ConfigurationError(f"data.num_patients={self.num_patients} "
                                     f"must be >= 3 for a patient-level split")
        if self.slices_per_patient < 1 or self.image_size < 8:
            raise ConfigurationError("slices_per_patient must be >= 1 and "
                                     "image_size >= 8")
        if self.noise < 0:
            raise ConfigurationError(f"data.noise={self.noise} must be >= 0")
        if not 0 < self.val_fraction < 1 or not 0 < self.test_fraction < 1 \
                or self.val_fraction + self.test_fraction >= 1:
            raise ConfigurationError(
                f"val_fraction={self.val_fraction} and test_fraction="
                f"{self.test_fraction} must be in (0, 1) and sum below 1")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    data: DataConfig


# key -> (type tag, full-scale default)
KEY_SPECS: dict[str, tuple[str, str]] = {
    "encoder.patch_size": ("int", "14"),
    "encoder.embed_dim": ("int", "96"),
    "encoder.num_blocks": ("int", "12"),
    "encoder.num_heads": ("int", "6"),
    "encoder.mlp_ratio": ("int", "4"),
    "encoder.image_height": ("int", "448"),
    "encoder.image_width": ("int", "448"),
    "encoder.in_channels": ("int", "1"),
    "fusion.k": ("int", "4"),
    "fusion.selection_mode": ("str", "learned_topk"),
    "fusion.fixed_blocks": ("opt_ints", "none"),
    "fusion.init_std": ("float", "0.01"),
    "decoder.num_stages": ("int", "4"),
    "decoder.stage_channels": ("ints", "256,128,64,32"),
    "decoder.image_adapter_channels": ("int", "8"),
    "decoder.out_classes": ("int", "1"),
    "decoder.spatial_integration": ("bool", "true"),
    "decoder.use_fused_bottleneck": ("bool", "true"),
    "model.seed": ("int", "0"),
    "train.epochs": ("int", "50"),
    "train.batch_size": ("int", "32"),
    "train.learning_rate": ("float", "5e-05"),
    "train.weight_decay": ("float", "0.0001"),
    "train.beta1": ("float", "0.9"),
    "train.beta2": ("float", "0.95"),
    "train.warmup_epochs": ("int", "5"),
    "train.seed": ("int", "0"),
    "train.dice_eps": ("float", "1e-06"),
    "train.fusion_lr_scale": ("float", "1.0"),
    "data.num_patients": ("int", "60"),
    "data.slices_per_patient": ("int", "8"),
    "data.image_size": ("int", "448"),
    "data.seed": ("int", "0"),
    "data.noise": ("float", "0.1"),
    "data.val_fraction": ("float", "0.1"),
    "data.test_fraction": ("float", "0.2"),
}

_DESK_COMMON = {
    "encoder.patch_size": "8",
    "encoder.image_height": "64",
    "encoder.image_width": "64",
    "train.epochs": "15",
    "train.batch_size": "8",
    "train.learning_rate": "0.006",
    "train.fusion_lr_scale": "8.0",
    "data.num_patients": "40",
    "data.slices_per_patient": "8",
    "data.image_size": "64",
}

PRESETS: dict[str, dict[str, str]] = {
    # full-scale recipe, i.e. the built-in defaults
    "full": {},
    # one-CPU run sized for minutes, seeds pinned to 42
    "desk": {**_DESK_COMMON,
             "encoder.embed_dim": "64", "encoder.num_blocks": "8",
             "encoder.num_heads": "4",
             "decoder.stage_channels": "64,32,16,8",
             "model.seed": "42", "train.seed": "42", "data.seed": "42"},
    # desk-scale stand-ins for increasing encoder capacity
    "base": {**_DESK_COMMON,
             "encoder.embed_dim": "48", "encoder.num_blocks": "8",
             "encoder.num_heads": "4",
             "decoder.stage_channels": "48,24,12,8"},
    "large": {**_DESK_COMMON,
              "encoder.embed_dim": "64", "encoder.num_blocks": "10",
              "encoder.num_heads": "4",
              "decoder.stage_channels": "64,32,16,8"},
    "giant": {**_DESK_COMMON,
              "encoder.embed_dim": "96", "encoder.num_blocks": "12",
              "encoder.num_heads": "6",
              "decoder.stage_channels": "96,48,24,12"},
    # further-reduced grid for the 20-run ablation sweep (2 arms x 2
    # integration modes x 5 seeds); minutes instead of an hour
    "ablation": {**_DESK_COMMON,
                 "encoder.patch_size": "4",
                 "encoder.image_height": "32", "encoder.image_width": "32",
                 "encoder.embed_dim": "32", "encoder.num_blocks": "8",
                 "encoder.num_heads": "2",
                 "decoder.stage_channels": "32,16,8,8",
                 "train.epochs": "10", "train.batch_size": "4",
                 "train.warmup_epochs": "3",
                 "data.num_patients": "18", "data.slices_per_patient": "4",
                 "data.image_size": "32"},
}


def _coerce(key: str, raw: str):
    kind = KEY_SPECS[key][0]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw in ("true", "false"):
                return raw == "true"
            raise ValueError
        if kind == "ints":
            return tuple(int(part) for part in raw.split(","))
        if kind == "opt_ints":
            if raw == "none":
                return None
            return tuple(int(part) for part in raw.split(","))
        return raw
    except ValueError as err:
        raise ConfigurationError(f"{key}={raw!r} is not a valid {kind}") from err


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def preset_flat(name: str) -> dict[str, str]:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from "
                                 + ", ".join(sorted(PRESETS)))
    return dict(PRESETS[name])


def read_config_file(path: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blanks are skipped."""
    if not os.path.exists(path):
        raise ConfigurationError(f"config file not found: {path}")
    flat: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw_line in enumerate(fh, start=1):
            line = raw_line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not key:
                raise ConfigurationError(f"{path}:{lineno}: expected key=value, "
                                         f"got {raw_line.strip()!r}")
            if key not in KEY_SPECS:
                raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
            if key in flat:
                raise ConfigurationError(f"{path}:{lineno}: duplicate key {key!r}")
            flat[key] = value
    return flat


def parse_override(text: str) -> tuple[str, str]:
    """Parse one ``--set key=value`` token."""
    key, sep, value = text.partition("=")
    key, value = key.strip(), value.strip()
    if not sep or not key:
        raise ConfigurationError(f"override {text!r} must look like key=value")
    if key not in KEY_SPECS:
        raise ConfigurationError(f"override names unknown key {key!r}")
    return key, value


def resolve_flat(preset: str | None = None, config_file: str | None = None,
                 overrides: list[str] | None = None) -> dict[str, str]:
    """Layer defaults <- preset <- file <- overrides into one flat dict."""
    flat = {key: default for key, (_, default) in KEY_SPECS.items()}
    if preset:
        flat.update(preset_flat(preset))
    if config_file:
        flat.update(read_config_file(config_file))
    for text in overrides or []:
        key, value = parse_override(text)
        flat[key] = value
    return flat


def run_config_from_flat(flat: dict[str, str]) -> RunConfig:
    unknown = sorted(set(flat) - set(KEY_SPECS))
    if unknown:
        raise ConfigurationError(f"unknown config keys: {unknown}")
    merged = {key: default for key, (_, default) in KEY_SPECS.items()}
    merged.update(flat)
    v = {key: _coerce(key, raw) for key, raw in merged.items()}

    encoder = EncoderConfig(
        patch_size=v["encoder.patch_size"], embed_dim=v["encoder.embed_dim"],
        num_blocks=v["encoder.num_blocks"], num_heads=v["encoder.num_heads"],
        mlp_ratio=v["encoder.mlp_ratio"],
        image_height=v["encoder.image_height"],
        image_width=v["encoder.image_width"],
        in_channels=v["encoder.in_channels"])
    fusion = FusionConfig(
        num_blocks=encoder.num_blocks, k=v["fusion.k"],
        selection_mode=v["fusion.selection_mode"],
        fixed_blocks=v["fusion.fixed_blocks"], init_std=v["fusion.init_std"])
    decoder = DecoderConfig(
        num_stages=v["decoder.num_stages"],
        stage_channels=v["decoder.stage_channels"],
        image_adapter_channels=v["decoder.image_adapter_channels"],
        out_classes=v["decoder.out_classes"],
        spatial_integration=v["decoder.spatial_integration"],
        use_fused_bottleneck=v["decoder.use_fused_bottleneck"])
    model = ModelConfig(encoder=encoder, fusion=fusion, decoder=decoder,
                        seed=v["model.seed"])
    train = TrainConfig(
        epochs=v["train.epochs"], batch_size=v["train.batch_size"],
        learning_rate=v["train.learning_rate"],
        weight_decay=v["train.weight_decay"],
        beta1=v["train.beta1"], beta2=v["train.beta2"],
        warmup_epochs=v["train.warmup_epochs"], seed=v["train.seed"],
        dice_eps=v["train.dice_eps"],
        fusion_lr_scale=v["train.fusion_lr_scale"])
    data = DataConfig(
        num_patients=v["data.num_patients"],
        slices_per_patient=v["data.slices_per_patient"],
        image_size=v["data.image_size"], seed=v["data.seed"],
        noise=v["data.noise"], val_fraction=v["data.val_fraction"],
        test_fraction=v["data.test_fraction"])
    return RunConfig(model=model, train=train, data=data)


def run_config_to_flat(rc: RunConfig) -> dict[str, str]:
    e, f, d = rc.model.encoder, rc.model.fusion, rc.model.decoder
    t, dt = rc.train, rc.data
    values = {
        "encoder.patch_size": e.patch_size, "encoder.embed_dim": e.embed_dim,
        "encoder.num_blocks": e.num_blocks, "encoder.num_heads": e.num_heads,
        "encoder.mlp_ratio": e.mlp_ratio,
        "encoder.image_height": e.image_height,
        "encoder.image_width": e.image_width,
        "encoder.in_channels": e.in_channels,
        "fusion.k": f.k, "fusion.selection_mode": f.selection_mode,
        "fusion.fixed_blocks": f.fixed_blocks, "fusion.init_std": f.init_std,
        "decoder.num_stages": d.num_stages,
        "decoder.stage_channels": d.stage_channels,
        "decoder.image_adapter_channels": d.image_adapter_channels,
        "decoder.out_classes": d.out_classes,
        "decoder.spatial_integration": d.spatial_integration,
        "decoder.use_fused_bottleneck": d.use_fused_bottleneck,
        "model.seed": rc.model.seed,
        "train.epochs": t.epochs, "train.batch_size": t.batch_size,
        "train.learning_rate": t.learning_rate,
        "train.weight_decay": t.weight_decay,
        "train.beta1": t.beta1, "train.beta2": t.beta2,
        "train.warmup_epochs": t.warmup_epochs, "train.seed": t.seed,
        "train.dice_eps": t.dice_eps,
        "train.fusion_lr_scale": t.fusion_lr_scale,
        "data.num_patients": dt.num_patients,
        "data.slices_per_patient": dt.slices_per_patient,
        "data.image_size": dt.image_size, "data.seed": dt.seed,
        "data.noise": dt.noise, "data.val_fraction": dt.val_fraction,
        "data.test_fraction": dt.test_fraction,
    }
    return {key: format_value(values[key]) for key in KEY_SPECS}


def model_config_from_flat(flat: dict[str, str]) -> ModelConfig:
    """Rebuild just the model part, e.g. from checkpoint metadata."""
    model_keys = {k: v for k, v in flat.items()
                  if k in KEY_SPECS and k.split(".")[0] in
                  ("encoder", "fusion", "decoder", "model")}
    return run_config_from_flat(model_keys).model
