"""Input checks shared by the estimator API."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .data_pipeline import NATIVE_HW
from .exceptions import ShapeError, ValidationError


def check_images(X):
    """Coerce images to a finite ``(n, 1, 101, 101)`` float64 array in [0, 1].

    Accepts ``(n, 101, 101)`` or ``(n, 1, 101, 101)``.
    """
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float64)
    if X.ndim == 3:
        X = X[:, None]
    if X.ndim != 4 or X.shape[1:] != (1, *NATIVE_HW):
        raise ShapeError(f"expected images of shape (n, 101, 101) or (n, 1, 101, 101), got {X.shape}")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValidationError("image values must lie in [0, 1]")
    return X


def check_masks(y, n_samples):
    y = check_array(y, allow_nd=True, ensure_2d=False, dtype=np.float64)
    if y.ndim == 3:
        y = y[:, None]
    if y.shape != (n_samples, 1, *NATIVE_HW):
        raise ShapeError(f"masks must have shape ({n_samples}, 101, 101), got {y.shape}")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValidationError("mask values must be exactly 0 or 1")
    return y
