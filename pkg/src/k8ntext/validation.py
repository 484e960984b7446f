"""Input validation helpers shared by the estimator-style interfaces."""

from __future__ import annotations

import numpy as np

from .model.layers import ShapeMismatch


def check_feature_matrix(X, n_features: int | None = None) -> np.ndarray:
    """Validate and coerce an (N, F) feature matrix of finite floats."""
    X = np.asarray(X, dtype=np.float32)
    if X.ndim != 2:
        raise ShapeMismatch(f"expected a 2-d feature matrix, got shape {X.shape}")
    if X.shape[0] == 0:
        raise ShapeMismatch("feature matrix has no rows")
    if n_features is not None and X.shape[1] != n_features:
        raise ShapeMismatch(f"expected {n_features} features, got {X.shape[1]}")
    if not np.isfinite(X).all():
        raise ValueError("feature matrix contains non-finite values")
    return X


def check_label_matrix(y, n_rows: int, label_len: int) -> np.ndarray:
    """Validate an (N, label_len) integer target matrix."""
    y = np.asarray(y)
    if y.ndim != 2 or y.shape != (n_rows, label_len):
        raise ShapeMismatch(f"expected ({n_rows}, {label_len}) targets, got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        y = y.astype(np.int64)
    if (y < 0).any():
        raise ValueError("targets contain negative class ids")
    return y


def check_line_mask(mask, n_rows: int) -> np.ndarray:
    mask = np.asarray(mask, dtype=np.float32)
    if mask.shape != (n_rows,):
        raise ShapeMismatch(f"expected ({n_rows},) line mask, got {mask.shape}")
    return mask
