"""Small input-validation helpers shared across estimators and operations."""

import numpy as np


def check_matrix(X, name="X", allow_empty=False, allow_nan=False):
    """Coerce ``X`` to a 2-D float64 array and validate its contents."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got ndim={X.ndim}")
    if not allow_empty and X.shape[0] == 0:
        raise ValueError(f"{name} must contain at least one row")
    if not allow_nan and not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    return X


def check_vector(y, name="y", length=None, allow_empty=False):
    """Coerce ``y`` to a 1-D float64 array, optionally pinning its length."""
    y = np.asarray(y, dtype=np.float64).ravel()
    if not allow_empty and y.size == 0:
        raise ValueError(f"{name} must contain at least one element")
    if length is not None and y.size != length:
        raise ValueError(f"{name} has length {y.size}, expected {length}")
    if not np.all(np.isfinite(y)):
        raise ValueError(f"{name} contains non-finite values")
    return y


def check_consistent_length(*arrays, names=None):
    lengths = [len(a) for a in arrays]
    if len(set(lengths)) > 1:
        labels = names or [f"arg{i}" for i in range(len(arrays))]
        pairs = ", ".join(f"{n}={l}" for n, l in zip(labels, lengths))
        raise ValueError(f"inconsistent lengths: {pairs}")


def check_positive(value, name):
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_in_unit_interval(value, name, open_left=False, open_right=False):
    v = float(value)
    lo_ok = v > 0 if open_left else v >= 0
    hi_ok = v < 1 if open_right else v <= 1
    if not (lo_ok and hi_ok):
        raise ValueError(f"{name} must lie in the unit interval, got {value!r}")
    return v
