"""Input validation helpers for array-facing entry points."""

from __future__ import annotations

import numpy as np

from .exceptions import DataError, ShapeError


def check_image_batch(X) -> np.ndarray:
    """Coerce to a (n, 1, H, W) float64 batch of single-channel images.

    Accepts (n, H, W) or (n, 1, H, W).  Values must be finite; the usual
    range is [0, 1] but that is not enforced.
    """
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[:, None, :, :]
    if arr.ndim != 4:
        raise ShapeError(f"expected images shaped (n, H, W) or (n, 1, H, W), "
                         f"got {np.asarray(X).shape}")
    if arr.shape[1] != 1:
        raise ShapeError(f"only single-channel images are supported, "
                         f"got {arr.shape[1]} channels")
    if arr.shape[0] == 0:
        raise DataError("image batch is empty")
    if not np.isfinite(arr).all():
        raise DataError("images contain non-finite values")
    return arr


def check_mask_batch(y, images: np.ndarray) -> np.ndarray:
    """Coerce to (n, H, W) uint8 binary masks matching ``images``."""
    arr = np.asarray(y)
    if arr.ndim == 4 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 3:
        raise ShapeError(f"expected masks shaped (n, H, W), got {np.asarray(y).shape}")
    n, _, h, w = images.shape
    if arr.shape != (n, h, w):
        raise ShapeError(f"masks {arr.shape} do not match images "
                         f"({n}, {h}, {w})")
    values = np.unique(arr)
    if not np.isin(values, (0, 1)).all():
        raise DataError(f"masks must be binary 0/1, found values {values[:8]}")
    return arr.astype(np.uint8)
