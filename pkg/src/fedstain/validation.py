"""Input validation helpers.

These mirror the checks scikit-learn estimators run on entry: they
normalize dtypes, verify shapes and finiteness, and raise early with a
readable message instead of failing deep inside numpy.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatchError


def check_image(image, min_hw: int = 8) -> np.ndarray:
    """Validate a single C×H×W image and return it as float64.

    Channels must be 1 or 3, spatial dims at least ``min_hw``, and all
    values finite.
    """
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeMismatchError(f"expected C*H*W image, got shape {arr.shape}")
    c, h, w = arr.shape
    if c not in (1, 3):
        raise ShapeMismatchError(f"expected 1 or 3 channels, got {c}")
    if h < min_hw or w < min_hw:
        raise ShapeMismatchError(f"image {h}x{w} smaller than minimum {min_hw}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    return arr


def check_image_batch(batch, min_hw: int = 8) -> np.ndarray:
    """Validate an N×C×H×W batch (also accepts a list of images)."""
    arr = np.asarray(batch, dtype=np.float64)
    if arr.ndim != 4:
        raise ShapeMismatchError(f"expected N*C*H*W batch, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ShapeMismatchError("empty batch")
    check_image(arr[0], min_hw=min_hw)
    if not np.all(np.isfinite(arr)):
        raise ValueError("batch contains non-finite values")
    return arr


def check_labels(labels, n: int, num_classes: int | None = None) -> np.ndarray:
    """Validate an integer label vector aligned with a batch of size ``n``."""
    lab = np.asarray(labels)
    if lab.shape != (n,):
        raise ShapeMismatchError(f"expected {n} labels, got shape {lab.shape}")
    lab = lab.astype(np.int64)
    if lab.min(initial=0) < 0:
        raise ValueError("labels must be nonnegative")
    if num_classes is not None and lab.size and lab.max() >= num_classes:
        raise ValueError(f"label {lab.max()} out of range for {num_classes} classes")
    return lab
