"""Loss, optimizer, learning-rate schedule, and the training loop.

The objective is an equal blend of pixel BCE and soft Dice.  Optimization is
AdamW with decoupled weight decay; the learning rate ramps linearly to its
base value over the warmup epochs, then follows a half cosine down to exactly
zero on the final step.  Only unfrozen parameters receive optimizer state, so
the frozen encoder is bit-identical before and after training.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import evaluation
from .autodiff import Parameter, Tensor
from .checkpoint import save_checkpoint
from .data import Sample, stack_batch
from .exceptions import ConfigurationError, DataError

HISTORY_BASE_COLUMNS = ("epoch", "train_loss", "val_dice", "lr")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 5e-5
    weight_decay: float = 1e-4
    beta1: float = 0.90
    beta2: float = 0.95
    warmup_epochs: int = 5
    seed: int = 0
    dice_eps: float = 1e-6
    # extra learning-rate factor for the fusion logits only; they see far
    # fewer effective steps than the decoder on short desk schedules
    fusion_lr_scale: float = 1.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError(f"epochs={self.epochs} batch_size="
                                     f"{self.batch_size} must be >= 1")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ConfigurationError(f"learning_rate={self.learning_rate} must be "
                                     f"> 0 and weight_decay={self.weight_decay} >= 0")
        if self.fusion_lr_scale <= 0:
            raise ConfigurationError(f"fusion_lr_scale={self.fusion_lr_scale} "
                                     f"must be > 0")
        for name, b in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not 0.0 <= b < 1.0:
                raise ConfigurationError(f"{name}={b} must lie in [0, 1)")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ConfigurationError(f"warmup_epochs={self.warmup_epochs} must lie "
                                     f"in [0, epochs={self.epochs}]")
        if self.dice_eps <= 0:
            raise ConfigurationError(f"dice_eps={self.dice_eps} must be > 0")


def soft_dice_loss(logits: Tensor, targets, eps: float = 1e-6) -> Tensor:
    """1 - mean over samples of the smoothed soft Dice coefficient."""
    targets = targets if isinstance(targets, Tensor) else Tensor(targets)
    b = logits.shape[0]
    probs = ad.reshape(ad.sigmoid(logits), (b, -1))
    t = ad.reshape(targets, (b, -1))
    inter = ad.tsum(probs * t, axis=1)
    sums = ad.tsum(probs, axis=1) + ad.tsum(t, axis=1)
    dice = (inter * 2.0 + eps) / (sums + eps)
    return 1.0 - ad.tmean(dice)


def combined_loss(logits: Tensor, targets, dice_eps: float = 1e-6) -> Tensor:
    """0.5 * BCE-with-logits + 0.5 * soft Dice."""
    targets = targets if isinstance(targets, Tensor) else Tensor(targets)
    return (ad.bce_with_logits(logits, targets) * 0.5
            + soft_dice_loss(logits, targets, eps=dice_eps) * 0.5)


def lr_at(step: int, total_steps: int, base_lr: float, warmup_steps: int) -> float:
    """Learning rate for 0-based global step ``step``.

    Linear ramp reaches ``base_lr`` exactly on the last warmup step; the
    cosine tail reaches exactly 0 on the last step overall.
    """
    if not 0 <= step < total_steps:
        raise ConfigurationError(f"step {step} outside [0, {total_steps})")
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    if total_steps <= warmup_steps:
        return base_lr
    progress = (step + 1 - warmup_steps) / (total_steps - warmup_steps)
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Adam with decoupled weight decay; frozen parameters are ignored.

    ``lr_scales`` maps parameter names to per-parameter learning-rate
    factors (unlisted parameters use factor 1).
    """

    def __init__(self, params: list[Parameter], lr: float,
                 beta1: float = 0.90, beta2: float = 0.95,
                 eps: float = 1e-8, weight_decay: float = 1e-4,
                 lr_scales: dict[str, float] | None = None):
        if lr <= 0:
            raise ConfigurationError(f"lr={lr} must be > 0")
        self.params = [p for p in params if not p.frozen]
        self.lr = lr
        self.beta1, self.beta2 = beta1, beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]
        self._scales = [(lr_scales or {}).get(p.name, 1.0) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v, scale in zip(self.params, self._m, self._v, self._scales):
            g = p.grad
            if g is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            w = p.data
            w -= (lr * scale) * (update + self.weight_decay * w)


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float
    val_dice: float
    weights: np.ndarray  # fusion weights at epoch end


@dataclass
class TrainResult:
    history: list[EpochStats]
    best_epoch: int
    best_val_dice: float
    best_state: dict[str, np.ndarray]
    best_checkpoint: str | None = None
    last_checkpoint: str | None = None
    history_path: str | None = None


def write_history_csv(path: str, history: list[EpochStats]) -> None:
    # repr() keeps full float precision so reruns can be compared byte-for-byte
    n_weights = len(history[0].weights) if history else 0
    columns = HISTORY_BASE_COLUMNS + tuple(f"w_{i}" for i in range(n_weights))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(columns) + "\n")
        for h in history:
            cells = [str(h.epoch), repr(h.train_loss), repr(h.val_dice),
                     repr(h.lr)] + [repr(float(w)) for w in h.weights]
            fh.write(",".join(cells) + "\n")


def _validation_pass(model, val_samples: list[Sample], batch_size: int,
                     dice_eps: float) -> tuple[float, float]:
    """Mean combined loss over slices and patient-level mean Dice."""
    cases = []
    loss_sum = 0.0
    with ad.no_grad():
        for start in range(0, len(val_samples), batch_size):
            chunk = val_samples[start:start + batch_size]
            images, masks = stack_batch(chunk)
            logits = model.forward(images)
            loss_sum += combined_loss(logits, masks, dice_eps).item() * len(chunk)
            preds = ad.sigmoid(logits).data[:, 0] >= 0.5
            for s, pred in zip(chunk, preds):
                cases.append(evaluation.CaseMetrics(
                    patient_id=s.patient_id, slice_index=s.slice_index,
                    dice=evaluation.dice_score(pred, s.mask), iou=0.0))
    agg = evaluation.aggregate_cases(cases)
    return loss_sum / len(val_samples), agg.mean_dice


def train(model, train_samples: list[Sample], val_samples: list[Sample],
          config: TrainConfig, out_dir: str | None = None,
          metadata: dict[str, str] | None = None, log=None) -> TrainResult:
    """Train ``model`` in place; returns history plus the best-validation state.

    The model with the highest patient-level validation Dice (earliest epoch
    wins ties) is kept and, when ``out_dir`` is given, written to
    ``best.ckpt`` next to ``last.ckpt`` and ``history.csv``.  Outputs contain
    no timestamps: two runs from the same seeds produce identical bytes.
    """
    if not train_samples:
        raise DataError("training set is empty")
    if not val_samples:
        raise DataError("validation set is empty; needed for model selection")
    say = log or (lambda msg: None)
    rng = np.random.default_rng(config.seed)
    opt = AdamW(model.trainable_parameters(), lr=config.learning_rate,
                beta1=config.beta1, beta2=config.beta2,
                weight_decay=config.weight_decay,
                lr_scales={"fusion.theta": config.fusion_lr_scale})
    n = len(train_samples)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    warmup_steps = config.warmup_epochs * steps_per_epoch

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    meta = dict(metadata or {})

    history: list[EpochStats] = []
    best_epoch, best_val_dice = -1, -1.0
    best_state = model.state_dict()
    best_path = os.path.join(out_dir, "best.ckpt") if out_dir else None
    global_step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        lr = config.learning_rate
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            images, masks = stack_batch([train_samples[i] for i in idx])
            logits = model.forward(images)
            loss = combined_loss(logits, masks, config.dice_eps)
            opt.zero_grad()
            loss.backward()
            lr = lr_at(global_step, total_steps, config.learning_rate, warmup_steps)
            opt.step(lr=lr)
            global_step += 1
            loss_sum += loss.item() * len(idx)
        val_loss, val_dice = _validation_pass(model, val_samples,
                                              config.batch_size, config.dice_eps)
        stats = EpochStats(epoch=epoch, lr=lr, train_loss=loss_sum / n,
                           val_loss=val_loss, val_dice=val_dice,
                           weights=model.block_weights())
        history.append(stats)
        say(f"epoch {epoch:3d}  lr {lr:.3e}  train {stats.train_loss:.4f}  "
            f"val {val_loss:.4f}  val_dice {val_dice:.4f}")
        if val_dice > best_val_dice:
            best_epoch, best_val_dice = epoch, val_dice
            best_state = model.state_dict()
            if best_path:
                save_checkpoint(best_path, best_state,
                                {**meta, "kind": "best", "epoch": str(epoch),
                                 "val_dice": repr(val_dice)})

    result = TrainResult(history=history, best_epoch=best_epoch,
                         best_val_dice=best_val_dice, best_state=best_state,
                         best_checkpoint=best_path)
    if out_dir:
        result.last_checkpoint = os.path.join(out_dir, "last.ckpt")
        save_checkpoint(result.last_checkpoint, model.state_dict(),
                        {**meta, "kind": "last", "epoch": str(config.epochs - 1),
                         "val_dice": repr(history[-1].val_dice)})
        result.history_path = os.path.join(out_dir, "history.csv")
        write_history_csv(result.history_path, history)
    return result
