import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DimensionError


def check_points(X, dim=None, allow_empty=False):
    """Validate a batch of points as a finite float64 ``(n, L)`` array.

    A single point ``(L,)`` is promoted to ``(1, L)``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    X = check_array(X, dtype=np.float64, ensure_min_samples=0 if allow_empty else 1)
    if dim is not None and X.shape[1] != dim:
        raise DimensionError(f"expected points of dimension {dim}, got {X.shape[1]}")
    return X
