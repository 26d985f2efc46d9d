"""Scikit-learn style estimator facade over the segmentation model."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import Sample
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .evaluation import dice_score
from .exceptions import DataError
from .fusion import FusionConfig
from .model import ModelConfig, SegmentationModel
from .training import TrainConfig, train
from .validation import check_image_batch, check_mask_batch


class BlockFusionSegmenter(BaseEstimator):
    """Binary image segmenter with fit/predict semantics.

    A frozen randomly initialized transformer encoder produces one feature
    map per block; a learned softmax weighting fuses them and a small
    convolutional decoder upsamples back to the input resolution.  Only the
    fusion weights and the decoder train.

    Parameters mirror the underlying configs; see the package README for the
    full glossary.  ``fit`` expects ``X`` shaped (n, H, W) (or (n, 1, H, W))
    with values in [0, 1] and binary ``y`` shaped (n, H, W).

    Examples
    --------
    >>> seg = BlockFusionSegmenter(epochs=2, random_state=0)
    >>> seg = seg.fit(X_train, y_train)          # doctest: +SKIP
    >>> masks = seg.predict(X_test)              # doctest: +SKIP
    """

    def __init__(self, patch_size=8, embed_dim=64, num_blocks=8, num_heads=4,
                 mlp_ratio=4, k=4, selection_mode="learned_topk",
                 fixed_blocks=None, stage_channels=(64, 32, 16, 8),
                 image_adapter_channels=8, spatial_integration=True,
                 use_fused_bottleneck=True, epochs=15, batch_size=8,
                 learning_rate=4e-3, weight_decay=1e-4, beta1=0.90,
                 beta2=0.95, warmup_epochs=5, fusion_lr_scale=8.0,
                 val_fraction=0.1, threshold=0.5, random_state=0,
                 verbose=False):
        self.patch_size = patch_size
        self.embed_dim = embed_dim
        self.num_blocks = num_blocks
        self.num_heads = num_heads
        self.mlp_ratio = mlp_ratio
        self.k = k
        self.selection_mode = selection_mode
        self.fixed_blocks = fixed_blocks
        self.stage_channels = stage_channels
        self.image_adapter_channels = image_adapter_channels
        self.spatial_integration = spatial_integration
        self.use_fused_bottleneck = use_fused_bottleneck
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.warmup_epochs = warmup_epochs
        self.fusion_lr_scale = fusion_lr_scale
        self.val_fraction = val_fraction
        self.threshold = threshold
        self.random_state = random_state
        self.verbose = verbose

    def _model_config(self, h: int, w: int) -> ModelConfig:
        fixed = None if self.fixed_blocks is None else tuple(self.fixed_blocks)
        return ModelConfig(
            encoder=EncoderConfig(patch_size=self.patch_size,
                                  embed_dim=self.embed_dim,
                                  num_blocks=self.num_blocks,
                                  num_heads=self.num_heads,
                                  mlp_ratio=self.mlp_ratio,
                                  image_height=h, image_width=w),
            fusion=FusionConfig(num_blocks=self.num_blocks, k=self.k,
                                selection_mode=self.selection_mode,
                                fixed_blocks=fixed),
            decoder=DecoderConfig(num_stages=len(self.stage_channels),
                                  stage_channels=tuple(self.stage_channels),
                                  image_adapter_channels=self.image_adapter_channels,
                                  spatial_integration=self.spatial_integration,
                                  use_fused_bottleneck=self.use_fused_bottleneck),
            seed=self.random_state)

    def fit(self, X, y):
        """Train on images X and binary masks y; returns self."""
        X = check_image_batch(X)
        y = check_mask_batch(y, X)
        n, _, h, w = X.shape
        n_val = max(1, round(n * self.val_fraction))
        if n - n_val < 1:
            raise DataError(f"{n} samples leave no training data after "
                            f"holding out {n_val} for validation")
        order = np.random.default_rng(self.random_state).permutation(n)
        samples = [Sample(image=X[i, 0], mask=y[i], patient_id=f"s{i:05d}",
                          slice_index=0) for i in range(n)]
        val = [samples[i] for i in order[:n_val]]
        tr = [samples[i] for i in order[n_val:]]

        model = SegmentationModel(self._model_config(h, w))
        result = train(
            model, tr, val,
            TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                        learning_rate=self.learning_rate,
                        weight_decay=self.weight_decay, beta1=self.beta1,
                        beta2=self.beta2, warmup_epochs=self.warmup_epochs,
                        fusion_lr_scale=self.fusion_lr_scale,
                        seed=self.random_state),
            log=print if self.verbose else None)
        model.load_state_dict(result.best_state)
        self.model_ = model
        self.history_ = result.history
        self.best_val_dice_ = result.best_val_dice
        self.block_weights_ = model.block_weights()
        self.selected_blocks_ = model.fusion.select(self.block_weights_)
        self.image_shape_ = (h, w)
        return self

    def _check_fitted_batch(self, X) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise NotFittedError("this BlockFusionSegmenter is not fitted; "
                                 "call fit first")
        X = check_image_batch(X)
        if X.shape[2:] != self.image_shape_:
            raise DataError(f"images are {X.shape[2:]}, fitted for "
                            f"{self.image_shape_}")
        return X

    def predict_proba(self, X) -> np.ndarray:
        """Per-pixel foreground probabilities, shaped (n, H, W)."""
        X = self._check_fitted_batch(X)
        chunks = [self.model_.predict_proba(X[i:i + self.batch_size])[:, 0]
                  for i in range(0, X.shape[0], self.batch_size)]
        return np.concatenate(chunks, axis=0)

    def predict(self, X) -> np.ndarray:
        """Binary masks shaped (n, H, W)."""
        return (self.predict_proba(X) >= self.threshold).astype(np.uint8)

    def score(self, X, y) -> float:
        """Mean per-sample Dice of thresholded predictions."""
        X = self._check_fitted_batch(X)
        y = check_mask_batch(y, X)
        preds = (self.predict_proba(X) >= self.threshold).astype(np.uint8)
        return float(np.mean([dice_score(p, t) for p, t in zip(preds, y)]))
