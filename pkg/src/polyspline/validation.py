"""Input validation helpers shared by the estimator layer."""

import numpy as np

from .errors import DimensionMismatchError, InvalidInputError, OutOfDomainError


def check_points(X, dim=None):
    """Coerce X to a float (n, d) array with d in {1, 2}.

    Accepts flat arrays for 1D input.  When ``dim`` is given the column
    count must match.  Entries must be finite and inside the unit box.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[1] not in (1, 2):
        raise DimensionMismatchError(
            f"expected points of shape (n,), (n, 1) or (n, 2); got {X.shape}"
        )
    if dim is not None and X.shape[1] != dim:
        raise DimensionMismatchError(
            f"expected {dim}-dimensional points, got {X.shape[1]} columns"
        )
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("points must be finite")
    if np.any(X < -1e-12) or np.any(X > 1 + 1e-12):
        raise OutOfDomainError("points must lie in the unit box [0, 1]^d")
    return X


def check_targets(y, n):
    y = np.asarray(y, dtype=float).ravel()
    if y.size != n:
        raise DimensionMismatchError(f"got {y.size} targets for {n} points")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("targets must be finite")
    return y
