"""Input checks shared by the estimator wrapper and the harness."""

import numpy as np
from sklearn.utils.validation import check_array

__all__ = ["check_parametric_points", "check_indicator", "check_power_of_two"]


def check_parametric_points(X, dim):
    """Return ``X`` as a float ``(n, dim)`` array inside the unit box."""
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if X.shape[1] != dim:
        raise ValueError("expected %d coordinates per point, got %d" % (dim, X.shape[1]))
    if np.any(X < 0.0) or np.any(X > 1.0):
        raise ValueError("parametric points must lie in [0, 1]^%d" % dim)
    return X


def check_indicator(values):
    """Finite, non-negative, one-dimensional element indicator."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 1:
        raise ValueError("indicator must be one-dimensional")
    if not np.all(np.isfinite(values)):
        raise ValueError("indicator contains non-finite values")
    if np.any(values < 0):
        raise ValueError("indicator values must be non-negative")
    return values


def check_power_of_two(n, name="value"):
    """``log2(n)`` for a positive power of two, else ``ValueError``."""
    n = int(n)
    if n < 1 or n & (n - 1):
        raise ValueError("%s must be a positive power of two, got %d" % (name, n))
    return n.bit_length() - 1
