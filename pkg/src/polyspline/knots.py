"""Free-knot parameterization and B1-spline (hat function) bases in 1D.

Knot locations are never optimized directly.  A logit vector ``mu`` of
length N defines interval widths ``softmax(mu)``, and the knots are the
cumulative sums scaled to span ``[lo, hi]``.  Softmax outputs are strictly
positive, so the knots stay strictly ordered for every finite ``mu`` and
unconstrained optimization is safe.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, OutOfDomainError


def softmax(mu):
    z = np.exp(mu - np.max(mu))
    return z / z.sum()


def knots_from_logits(mu, lo=0.0, hi=1.0):
    """Map width logits to a strictly increasing knot vector.

    Returns ``[lo, lo + cumsum(softmax(mu) * (hi - lo))]`` of length
    ``len(mu) + 1``; the last entry is pinned to ``hi`` exactly.
    """
    mu = np.asarray(mu, dtype=float)
    if mu.ndim != 1 or mu.size < 1:
        raise InvalidInputError("logits must be a 1D vector of length >= 1")
    if not np.all(np.isfinite(mu)):
        raise InvalidInputError("logits must be finite")
    if not hi > lo:
        raise InvalidInputError("domain bounds must satisfy hi > lo")
    widths = softmax(mu) * (hi - lo)
    t = np.empty(mu.size + 1)
    t[0] = lo
    np.cumsum(widths, out=t[1:])
    t[1:] += lo
    t[-1] = hi  # kill cumsum roundoff at the right endpoint
    return t


def knot_jacobian(mu, lo=0.0, hi=1.0):
    """d(knots)/d(logits), shape (N+1, N).

    Row 0 and row N are zero: both endpoints are pinned.  Interior rows
    follow from the softmax Jacobian summed over the leading intervals,
    dt_i/dmu_m = (hi-lo) * s_m * (1[m <= i] - T_i) with T_i the cumulative
    width fraction up to knot i.
    """
    mu = np.asarray(mu, dtype=float)
    if not np.all(np.isfinite(mu)):
        raise InvalidInputError("logits must be finite")
    n = mu.size
    s = softmax(mu)
    T = np.concatenate([[0.0], np.cumsum(s)])  # length N+1, T[N] == 1
    ind = (np.arange(1, n + 1)[None, :] <= np.arange(n + 1)[:, None]).astype(float)
    J = (hi - lo) * s[None, :] * (ind - T[:, None])
    J[0, :] = 0.0
    J[-1, :] = 0.0
    return J


@dataclass
class SplineEval:
    """Hat-function basis evaluated at a batch of points.

    values[i, g] = phi_g(x_i), derivs[i, g] = phi_g'(x_i), and
    cell_index[i] in 1..N names the interval (t_{k-1}, t_k] containing
    x_i (x = lo is assigned to cell 1).  Each row of ``values`` has at
    most two nonzeros and sums to one.
    """

    values: np.ndarray
    derivs: np.ndarray
    cell_index: np.ndarray


def locate_cells(knots, x):
    """Interval index k in 1..N with x in (t_{k-1}, t_k]; x = lo maps to 1."""
    k = np.searchsorted(knots, x, side="left")
    return np.clip(k, 1, len(knots) - 1)


def eval_b1_basis(knots, x):
    """Evaluate all N+1 hat functions and their slopes at points x.

    Points must lie in [lo, hi]; there is no extrapolation.  The slope
    reported at an interior knot is the left-interval slope (points at
    knots are assigned to the left interval).
    """
    knots = np.asarray(knots, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x < knots[0]) or np.any(x > knots[-1]):
        raise OutOfDomainError(
            f"points outside [{knots[0]}, {knots[-1]}] passed to spline basis"
        )
    n_basis = len(knots)
    k = locate_cells(knots, x)
    h = knots[k] - knots[k - 1]
    right = (x - knots[k - 1]) / h  # value of phi_k at x
    rows = np.arange(x.size)

    values = np.zeros((x.size, n_basis))
    values[rows, k - 1] = 1.0 - right
    values[rows, k] = right

    derivs = np.zeros((x.size, n_basis))
    derivs[rows, k - 1] = -1.0 / h
    derivs[rows, k] = 1.0 / h
    return SplineEval(values=values, derivs=derivs, cell_index=k)


def basis_knot_vjp(knots, x, ev, up_values, up_derivs=None):
    """Accumulate d(loss)/d(knots) given upstreams on basis values/slopes.

    ``ev`` is the SplineEval at ``x``.  Only the two knots bounding each
    point's cell receive contributions; derivative formulas follow from
    phi_{k-1} = (t_k - x)/h and phi_k = (x - t_{k-1})/h.  Points exactly
    at a knot sit on a kink of phi w.r.t. the knot; callers doing
    finite-difference checks should avoid them.
    """
    knots = np.asarray(knots, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    k = ev.cell_index
    h = knots[k] - knots[k - 1]
    rows = np.arange(x.size)

    grad_t = np.zeros(len(knots))
    dv = up_values[rows, k - 1] - up_values[rows, k]
    phi_left = ev.values[rows, k - 1]
    phi_right = ev.values[rows, k]
    np.add.at(grad_t, k - 1, dv * phi_left / h)
    np.add.at(grad_t, k, dv * phi_right / h)
    if up_derivs is not None:
        dd = (up_derivs[rows, k] - up_derivs[rows, k - 1]) / h**2
        np.add.at(grad_t, k - 1, dd)
        np.add.at(grad_t, k, -dd)
    return grad_t


@dataclass
class KnotLayer:
    """Trainable strictly ordered knot vector on a fixed interval.

    ``trainable=False`` freezes the layer: it is skipped when packing the
    optimizer parameter vector (uniform-knot baselines, reduction tests).
    """

    logits: np.ndarray
    lo: float = 0.0
    hi: float = 1.0
    trainable: bool = True
    _knots: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=float)
        if not np.all(np.isfinite(self.logits)):
            raise InvalidInputError("knot logits must be finite")
        self._knots = None

    @classmethod
    def uniform(cls, n_intervals, lo=0.0, hi=1.0, jitter=0.0, rng=None, trainable=True):
        """Zero logits give uniform knots; ``jitter`` adds Gaussian noise."""
        logits = np.zeros(n_intervals)
        if jitter > 0.0:
            rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
            logits = logits + jitter * rng.standard_normal(n_intervals)
        return cls(logits=logits, lo=lo, hi=hi, trainable=trainable)

    @property
    def n_intervals(self):
        return self.logits.size

    @property
    def n_basis(self):
        return self.logits.size + 1

    @property
    def knots(self):
        if self._knots is None:
            self._knots = knots_from_logits(self.logits, self.lo, self.hi)
        return self._knots

    def set_logits(self, logits):
        self.logits = np.asarray(logits, dtype=float)
        self._knots = None

    def jacobian(self):
        return knot_jacobian(self.logits, self.lo, self.hi)

    def eval_basis(self, x):
        return eval_b1_basis(self.knots, x)

    def logit_vjp(self, grad_t):
        """Pull a knot-space gradient back to logit space."""
        return self.jacobian().T @ grad_t
