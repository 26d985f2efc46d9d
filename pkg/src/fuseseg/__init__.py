"""fuseseg: frozen-encoder block-fusion segmentation on a desk-scale budget.

A frozen vision transformer emits one feature map per block; a learned
softmax weighting fuses them, a top-k rule picks skip connections, and a
UNet-style decoder (optionally re-reading the raw image at every stage)
produces full-resolution masks.  Everything runs on numpy float64 with a
small reverse-mode tape, so results are deterministic and checkable.
"""

from .ablation import AblationResult, run_ablation
from .autodiff import Parameter, Tensor, grad_check, no_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (DataConfig, RunConfig, model_config_from_flat,
                     preset_flat, read_config_file, resolve_flat,
                     run_config_from_flat, run_config_to_flat)
from .data import (Sample, generate_synthetic, load_dataset, load_pgm,
                   save_dataset, save_pgm, split_patients)
from .decoder import DecoderConfig, UNetDecoder
from .encoder import BlockFeatures, EncoderConfig, ViTEncoder
from .estimator import BlockFusionSegmenter
from .evaluation import (CaseMetrics, PatientAggregate, WelchResult,
                         aggregate_cases, dice_score, evaluate_model,
                         iou_score, welch_t_test)
from .exceptions import (CheckpointError, ConfigurationError, DataError,
                         FusesegError, NumericError, ShapeError)
from .fusion import BlockFusion, FusionConfig, normalize_weights, select_top_k
from .gradcheck import run_gradcheck
from .model import ModelConfig, SegmentationModel, desk_model_config
from .training import AdamW, TrainConfig, combined_loss, lr_at, soft_dice_loss, train
from .validation import check_image_batch, check_mask_batch

__version__ = "0.1.0"

__all__ = [
    "AblationResult", "AdamW", "BlockFeatures", "BlockFusion",
    "BlockFusionSegmenter", "CaseMetrics", "CheckpointError",
    "ConfigurationError", "DataConfig", "DataError", "DecoderConfig",
    "EncoderConfig", "FusesegError", "FusionConfig", "ModelConfig",
    "NumericError", "Parameter", "PatientAggregate", "RunConfig", "Sample",
    "SegmentationModel", "ShapeError", "Tensor", "TrainConfig", "UNetDecoder",
    "ViTEncoder", "WelchResult", "aggregate_cases", "check_image_batch",
    "check_mask_batch", "combined_loss", "desk_model_config", "dice_score",
    "evaluate_model", "generate_synthetic", "grad_check", "iou_score",
    "load_checkpoint", "load_dataset", "load_pgm", "lr_at",
    "model_config_from_flat", "no_grad", "normalize_weights", "preset_flat",
    "read_config_file", "resolve_flat", "run_ablation", "run_config_from_flat",
    "run_config_to_flat", "run_gradcheck", "save_checkpoint", "save_dataset",
    "save_pgm", "select_top_k", "soft_dice_loss", "split_patients", "train",
    "welch_t_test",
]
