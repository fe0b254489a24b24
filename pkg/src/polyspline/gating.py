"""Convex-combination gating: spline basis functions -> POU cells.

Each column of the weight matrix W (one column per spline basis function)
is a probability vector over cells, produced by a softmax over the cell
axis of an unconstrained logit matrix.  Cell functions
``pou = spline_values @ W.T`` then inherit the partition-of-unity property
from the hat functions.  A fixed (non-trainable) W can be supplied
directly for reductions such as W = I.
"""

import numpy as np

from .errors import DimensionMismatchError, InvalidInputError


def column_softmax(logits):
    z = np.exp(logits - logits.max(axis=0, keepdims=True))
    return z / z.sum(axis=0, keepdims=True)


def column_softmax_vjp(W, upstream):
    """Pull an upstream d(loss)/dW back to the logits, column by column."""
    inner = np.sum(W * upstream, axis=0, keepdims=True)
    return W * (upstream - inner)


class GatingWeights:
    """Column-stochastic map from n_basis spline functions to n_cells cells."""

    def __init__(self, logits=None, matrix=None):
        if (logits is None) == (matrix is None):
            raise InvalidInputError("provide exactly one of logits or matrix")
        if logits is not None:
            logits = np.asarray(logits, dtype=float)
            if logits.ndim != 2 or not np.all(np.isfinite(logits)):
                raise InvalidInputError("gating logits must be a finite 2D array")
            self.logits = logits
            self._matrix = None
        else:
            matrix = np.asarray(matrix, dtype=float)
            if matrix.ndim != 2 or np.any(matrix < -1e-12):
                raise InvalidInputError("gating matrix must be 2D and nonnegative")
            if not np.allclose(matrix.sum(axis=0), 1.0, atol=1e-10):
                raise InvalidInputError("gating matrix columns must sum to 1")
            self.logits = None
            self._matrix = matrix

    @classmethod
    def random(cls, n_cells, n_basis, scale=0.5, rng=None):
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        return cls(logits=scale * rng.standard_normal((n_cells, n_basis)))

    @classmethod
    def banded(cls, n_cells, n_basis, sharpness=8.0):
        """Assign contiguous blocks of spline functions to consecutive cells.

        Speeds up the B=0 reduction experiments where each cell should own
        a run of adjacent hats; softmax of the banded logits puts weight
        ~1 - (n_cells-1)*exp(-sharpness) on the owning cell.
        """
        blocks = np.minimum((np.arange(n_basis) * n_cells) // n_basis, n_cells - 1)
        logits = np.zeros((n_cells, n_basis))
        logits[blocks, np.arange(n_basis)] = sharpness
        return cls(logits=logits)

    @classmethod
    def from_matrix(cls, matrix):
        return cls(matrix=np.asarray(matrix, dtype=float))

    @property
    def trainable(self):
        return self.logits is not None

    @property
    def matrix(self):
        if self.logits is not None:
            return column_softmax(self.logits)
        return self._matrix

    @property
    def n_cells(self):
        return (self.logits if self.logits is not None else self._matrix).shape[0]

    @property
    def n_basis(self):
        return (self.logits if self.logits is not None else self._matrix).shape[1]

    def set_logits(self, logits):
        if self.logits is None:
            raise InvalidInputError("gating built from a fixed matrix is not trainable")
        self.logits = np.asarray(logits, dtype=float)

    def logit_vjp(self, upstream_w):
        if self.logits is None:
            raise InvalidInputError("gating built from a fixed matrix is not trainable")
        return column_softmax_vjp(self.matrix, upstream_w)


def pou_values(gating, spline_values):
    """Cell function values, shape (n, n_cells); rows sum to 1."""
    W = gating.matrix if isinstance(gating, GatingWeights) else np.asarray(gating)
    spline_values = np.asarray(spline_values)
    if spline_values.shape[1] != W.shape[1]:
        raise DimensionMismatchError(
            f"spline basis has {spline_values.shape[1]} functions, "
            f"gating expects {W.shape[1]}"
        )
    return spline_values @ W.T


def gating_gradient(gating, spline_values, upstream):
    """d(loss)/d(logits) given d(loss)/d(pou values).

    Chains the POU evaluation (linear in W) through the column softmax;
    ``upstream`` has shape (n, n_cells) matching ``pou_values`` output.
    """
    upstream = np.asarray(upstream)
    upstream_w = upstream.T @ np.asarray(spline_values)
    return gating.logit_vjp(upstream_w)
