"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""

import zlib

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DimensionError, ValidationError


def check_windows(X, name="X", ndim=3):
    """Return ``X`` as a finite float64 array with ``ndim`` dimensions.

    Strided read-only views pass through without a copy.
    """
    try:
        X = check_array(X, dtype=np.float64, allow_nd=True, ensure_2d=False, copy=False)
    except ValueError as exc:
        raise ValidationError(f"{name}: {exc}") from None
    if X.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-D, got shape {X.shape}")
    return X


def check_binary(X, name="X_anc"):
    """Reject anything other than exact 0/1 entries."""
    X = np.asarray(X, dtype=np.float64)
    bad = (X != 0.0) & (X != 1.0)
    if bad.any():
        pos = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValidationError(f"{name} must contain only 0/1 indicators; found {X[pos]} at {pos}")
    return X


def check_targets(y, n_rows, horizon):
    y = check_windows(y, "y", ndim=2)
    if y.shape != (n_rows, horizon):
        raise DimensionError(f"y must have shape ({n_rows}, {horizon}), got {y.shape}")
    return y


def substream(seed, label):
    """Independent generator for a named purpose under one root seed."""
    return np.random.default_rng([int(seed), zlib.crc32(label.encode())])
