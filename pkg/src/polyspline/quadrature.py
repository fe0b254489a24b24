"""Exact integration of the model on knot cells.

Restricted to one knot interval (or knot rectangle in 2D), the model is a
polynomial: gate functions are affine per interval along each axis, so a
degree-B expert gives per-axis degree B+d.  Two integration paths are
provided and agree to rounding:

* a closed-form path (1D) that expands each cell's restriction in the
  monomial basis and integrates power by power, and
* per-cell Gauss-Legendre rules with ``points_per_axis = B + d + 1``
  points per axis, exact for per-axis degree up to 2*(B+d)+1, which
  covers y, y**2, and |grad y|**2.

Quadrature nodes live strictly inside their cells and move with the
knots; rules therefore carry the cell index, reference coordinate, and
width of every node so that training can differentiate through node
positions and weights.
"""

from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import InvalidInputError

_leggauss_cache = {}


def gauss_legendre(n):
    """Nodes and weights on [-1, 1]; n points integrate degree 2n-1 exactly."""
    if n not in _leggauss_cache:
        _leggauss_cache[n] = np.polynomial.legendre.leggauss(int(n))
    return _leggauss_cache[n]


def points_per_axis(degree, dim):
    """Default Gauss point count per axis for polynomial model functionals."""
    return degree + dim + 1


@dataclass
class LineRule:
    """Composite Gauss rule along one axis, one block per (clipped) cell.

    ``ref`` is the node position within its subinterval mapped to (0, 1);
    ``lo_free``/``hi_free`` record whether the subinterval bound is a knot
    (moves with the knot vector) or a fixed clip bound.
    """

    points: np.ndarray
    weights: np.ndarray
    cell: np.ndarray
    ref: np.ndarray
    h: np.ndarray
    lo_free: np.ndarray
    hi_free: np.ndarray


def rule_on_intervals(knots, n_points):
    """Per-interval Gauss rule covering the full knot span."""
    return rule_on_segment(knots, n_points)


def rule_on_segment(knots, n_points, lo=None, hi=None):
    """Per-interval Gauss rule on [lo, hi], clipping cells that straddle."""
    knots = np.asarray(knots, dtype=float)
    lo = knots[0] if lo is None else float(lo)
    hi = knots[-1] if hi is None else float(hi)
    if not (knots[0] - 1e-12 <= lo < hi <= knots[-1] + 1e-12):
        raise InvalidInputError("segment bounds must lie within the knot span")
    xi, wi = gauss_legendre(n_points)
    s = (xi + 1.0) / 2.0

    pts, wts, cells, refs, hs, lofree, hifree = [], [], [], [], [], [], []
    for k in range(1, len(knots)):
        a, b = knots[k - 1], knots[k]
        ca, cb = max(a, lo), min(b, hi)
        if cb - ca <= 1e-15:
            continue
        h = cb - ca
        pts.append(ca + s * h)
        wts.append(wi * h / 2.0)
        cells.append(np.full(n_points, k))
        refs.append(s)
        hs.append(np.full(n_points, h))
        lofree.append(np.full(n_points, ca == a))
        hifree.append(np.full(n_points, cb == b))
    return LineRule(
        points=np.concatenate(pts),
        weights=np.concatenate(wts),
        cell=np.concatenate(cells),
        ref=np.concatenate(refs),
        h=np.concatenate(hs),
        lo_free=np.concatenate(lofree),
        hi_free=np.concatenate(hifree),
    )


@dataclass
class CellRule2D:
    """Tensorized Gauss rule over all knot rectangles of a 2D model."""

    points: np.ndarray  # (m, 2)
    weights: np.ndarray
    cell_x: np.ndarray
    cell_y: np.ndarray
    ref_x: np.ndarray
    ref_y: np.ndarray
    h_x: np.ndarray
    h_y: np.ndarray


def rule_on_cells_2d(knots_x, knots_y, n_points):
    rx = rule_on_intervals(knots_x, n_points)
    ry = rule_on_intervals(knots_y, n_points)
    mx, my = rx.points.size, ry.points.size
    ix, iy = np.repeat(np.arange(mx), my), np.tile(np.arange(my), mx)
    return CellRule2D(
        points=np.column_stack([rx.points[ix], ry.points[iy]]),
        weights=rx.weights[ix] * ry.weights[iy],
        cell_x=rx.cell[ix],
        cell_y=ry.cell[iy],
        ref_x=rx.ref[ix],
        ref_y=ry.ref[iy],
        h_x=rx.h[ix],
        h_y=ry.h[iy],
    )


def cell_decomposition_2d(knots_x, knots_y):
    """Knot rectangles tiling the 2D domain, x-major, as (x0, x1, y0, y1)."""
    knots_x = np.asarray(knots_x, dtype=float)
    knots_y = np.asarray(knots_y, dtype=float)
    nx, ny = len(knots_x) - 1, len(knots_y) - 1
    out = np.empty((nx * ny, 4))
    idx = 0
    for i in range(nx):
        for j in range(ny):
            out[idx] = (knots_x[i], knots_x[i + 1], knots_y[j], knots_y[j + 1])
            idx += 1
    return out


# ------------------------------------------------------------ closed form
def polyint_on_interval(coeffs, a, b):
    """Integrate sum_k c_k x^k over [a, b]; coeffs indexed by power."""
    k = np.arange(len(coeffs))
    return np.sum(coeffs / (k + 1.0) * (b ** (k + 1) - a ** (k + 1)))


def _taylor_shift_matrix(degree, a):
    """S with (S e)_j the u^j coefficient of e(a + u), e in x-powers."""
    S = np.zeros((degree + 1, degree + 1))
    for k in range(degree + 1):
        for j in range(k + 1):
            S[j, k] = comb(k, j) * a ** (k - j)
    return S


def cell_local_coeffs(model):
    """Local monomial coefficients of the model on each knot interval (1D).

    Row k holds the coefficients of the model restricted to interval k+1
    in powers of u = x - t_k (length degree + 2): the gate is affine in u
    per interval and the experts are Taylor-shifted to the interval's
    left knot.  Working locally keeps the closed-form integrals free of
    the cancellation that global powers of the knots would cause on
    narrow cells.
    """
    if model.dim != 1:
        raise InvalidInputError("closed-form expansion is implemented for d=1")
    knots = model.knots_x.knots
    W = model.gating.matrix
    experts_mono = model.coeff_blocks() @ model.poly.monomial_matrix()
    n_int = len(knots) - 1
    out = np.zeros((n_int, model.poly.degree + 2))
    for k in range(1, n_int + 1):
        a, b = knots[k - 1], knots[k]
        h = b - a
        local_experts = experts_mono @ _taylor_shift_matrix(model.poly.degree, a).T
        gate_const = W[:, k - 1]  # gate(a + u) = w_left + (w_right - w_left) u / h
        gate_slope = (W[:, k] - W[:, k - 1]) / h
        out[k - 1, :-1] += gate_const @ local_experts
        out[k - 1, 1:] += gate_slope @ local_experts
    return out


def cell_monomial_coeffs(model):
    """Global monomial coefficients of the model on each knot interval.

    Row k gives d with y(x) = sum_i d_i x^i on (t_k, t_{k+1}), so that
    int y = sum_i d_i (t_{k+1}^{i+1} - t_k^{i+1}) / (i+1).  Prefer
    cell_local_coeffs for numerics; this form documents the expansion in
    the coordinates the knots live in.
    """
    local = cell_local_coeffs(model)
    knots = model.knots_x.knots
    out = np.zeros_like(local)
    deg = local.shape[1] - 1
    for k in range(local.shape[0]):
        out[k] = _taylor_shift_matrix(deg, -knots[k]) @ local[k]
    return out


def _closed_form_cell_integrals(model, kind, f_mono=None):
    knots = model.knots_x.knots
    cells = cell_local_coeffs(model)
    total = 0.0
    for k in range(1, len(knots)):
        a = knots[k - 1]
        h = knots[k] - a
        c = cells[k - 1]
        if kind == "y":
            integrand = c
        elif kind == "y2":
            integrand = np.convolve(c, c)
        elif kind == "grad2":
            d = c[1:] * np.arange(1, len(c))
            integrand = np.convolve(d, d)
        elif kind == "yf":
            f_local = _taylor_shift_matrix(len(f_mono) - 1, a) @ np.asarray(f_mono, dtype=float)
            integrand = np.convolve(c, f_local)
        else:
            raise InvalidInputError(f"unknown integrand kind '{kind}'")
        powers = np.arange(1, len(integrand) + 1)
        total += np.sum(integrand * h**powers / powers)
    return total


def integrate_model_closed_form(model):
    """Exact integral of y over the 1D domain via monomial expansion."""
    return _closed_form_cell_integrals(model, "y")


# -------------------------------------------------------------- quadrature
def _quadrature_functional(model, kind, f=None, f_mono=None, n_points=None):
    if n_points is None:
        n_points = points_per_axis(model.poly.degree, model.dim)
    if model.dim == 1:
        rule = rule_on_intervals(model.knots_x.knots, n_points)
        pts = rule.points.reshape(-1, 1)
        w = rule.weights
    else:
        rule = rule_on_cells_2d(model.knots_x.knots, model.knots_y.knots, n_points)
        pts = rule.points
        w = rule.weights
    y, grad = model.forward(pts)
    if kind == "y":
        vals = y
    elif kind == "y2":
        vals = y * y
    elif kind == "grad2":
        vals = np.sum(grad * grad, axis=1)
    elif kind == "yf":
        if f_mono is not None:
            fv = np.polynomial.polynomial.polyval(pts[:, 0], np.asarray(f_mono))
        else:
            fv = np.asarray(f(pts if model.dim == 2 else pts[:, 0]), dtype=float)
        vals = y * fv
    else:
        raise InvalidInputError(f"unknown integrand kind '{kind}'")
    return float(np.dot(w, vals))


def integrate_model(model, method="auto", n_points=None):
    """Integral of y over the domain.

    ``method`` is 'closed-form' (1D only), 'quadrature', or 'auto'
    (closed form when available).  Both paths are exact and agree to
    rounding.
    """
    if method == "auto":
        method = "closed-form" if model.dim == 1 else "quadrature"
    if method == "closed-form":
        return float(integrate_model_closed_form(model))
    if method == "quadrature":
        return _quadrature_functional(model, "y", n_points=n_points)
    raise InvalidInputError(f"unknown integration method '{method}'")


def integrate_functional(model, kind, f=None, f_mono=None, n_points=None):
    """Integrate y, y**2, |grad y|**2, or y*f over the domain.

    ``kind`` in {'y', 'y2', 'grad2', 'yf'}.  For 'yf', pass the factor as
    monomial coefficients ``f_mono`` (exact integration, 1D) or as a
    callable ``f`` together with an explicit ``n_points`` override; a
    callable alone is rejected because no Gauss order makes a
    non-polynomial factor exact.
    """
    if kind == "yf":
        if f_mono is None and f is None:
            raise InvalidInputError("kind 'yf' needs f_mono or f")
        if f_mono is None and n_points is None:
            raise InvalidInputError(
                "non-polynomial factor f: pass an explicit n_points "
                "(over-integration order) to integrate_functional"
            )
        if f_mono is not None and n_points is None:
            extra = (len(np.atleast_1d(f_mono)) - 1 + 1) // 2 + 1
            n_points = points_per_axis(model.poly.degree, model.dim) + extra
    return _quadrature_functional(model, kind, f=f, f_mono=f_mono, n_points=n_points)


def boundary_quadrature(knots_along, n_points, lo=None, hi=None, q_extra=0):
    """Gauss rule along an axis-aligned boundary segment.

    The rule follows the knot intervals of the axis the segment runs
    along, clipped to [lo, hi].  ``q_extra`` adds points per interval for
    non-polynomial boundary data (default over-integration is +3 at the
    call sites that integrate such data).
    """
    return rule_on_segment(knots_along, n_points + q_extra, lo=lo, hi=hi)
