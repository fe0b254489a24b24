"""Polynomial expert bases of bounded total degree on [0,1]^d, d in {1, 2}.

Experts use Legendre polynomials shifted to [0,1] rather than monomials:
the shifted-Legendre Gram matrix on [0,1] is diagonal with condition
number 2*B+1 (13 at degree 6, versus ~5e8 for monomials), which keeps the
regularized least-squares solves well conditioned across the whole degree
sweep.  ``monomial_matrix`` exposes the change of basis needed by the
closed-form integration path and by hand-worked checks in monomial
coordinates.

Basis ordering is graded lexicographic: terms sorted by total degree,
then by decreasing power of the first coordinate, e.g. for d=2, B=2:
(0,0), (1,0), (0,1), (2,0), (1,1), (0,2).
"""

import numpy as np
from numpy.polynomial import legendre as L
from numpy.polynomial import polynomial as P

from .errors import DimensionMismatchError, OutOfDomainError


def total_degree_exponents(degree, dim):
    """Exponent tuples of total degree <= degree, graded lexicographic."""
    if dim == 1:
        return [(i,) for i in range(degree + 1)]
    out = []
    for total in range(degree + 1):
        for i in range(total, -1, -1):
            out.append((i, total - i))
    return out


def n_poly_terms(degree, dim):
    return degree + 1 if dim == 1 else (degree + 1) * (degree + 2) // 2


def _legendre_tables(u, degree, n_deriv):
    """Values and derivatives of P_0..P_degree at u in [-1,1].

    Returns a list of arrays [n_pts x (degree+1)], one per derivative
    order 0..n_deriv.
    """
    tables = [L.legvander(u, degree)]
    eye = np.eye(degree + 1)
    for order in range(1, n_deriv + 1):
        tab = np.empty((u.size, degree + 1))
        for n in range(degree + 1):
            c = L.legder(eye[:, n], m=order)
            tab[:, n] = L.legval(u, c) if c.size else 0.0
        tables.append(tab)
    return tables


class PolyBasis:
    """Shifted-Legendre basis of total degree <= ``degree`` on [0,1]^dim."""

    def __init__(self, degree, dim=1):
        if degree < 0:
            raise ValueError("degree must be >= 0")
        if dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        self.degree = degree
        self.dim = dim
        self.exponents = total_degree_exponents(degree, dim)
        self.n_terms = len(self.exponents)

    def _check_points(self, x):
        x = np.asarray(x, dtype=float)
        if self.dim == 1:
            x = x.reshape(-1, 1) if x.ndim == 1 else x
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise DimensionMismatchError(
                f"expected points of shape (n, {self.dim}), got {x.shape}"
            )
        if np.any(x < -1e-12) or np.any(x > 1 + 1e-12):
            raise OutOfDomainError("polynomial basis points must lie in [0,1]^d")
        return x

    def eval(self, x, hessian=False):
        """Values, gradients, and optionally Hessians of all basis terms.

        Returns ``(values, grads)`` with shapes (n, n_terms) and
        (n, n_terms, dim), or ``(values, grads, hess)`` with hess of
        shape (n, n_terms, dim, dim).  Derivatives of P_k(2u-1) carry a
        factor 2 per order from the affine rescaling.
        """
        x = self._check_points(x)
        n_deriv = 2 if hessian else 1
        axis_tabs = []
        for axis in range(self.dim):
            u = 2.0 * x[:, axis] - 1.0
            tabs = _legendre_tables(u, self.degree, n_deriv)
            scaled = [tabs[m] * (2.0**m) for m in range(n_deriv + 1)]
            axis_tabs.append(scaled)

        n = x.shape[0]
        values = np.empty((n, self.n_terms))
        grads = np.empty((n, self.n_terms, self.dim))
        hess = np.empty((n, self.n_terms, self.dim, self.dim)) if hessian else None
        for col, exps in enumerate(self.exponents):
            if self.dim == 1:
                (i,) = exps
                values[:, col] = axis_tabs[0][0][:, i]
                grads[:, col, 0] = axis_tabs[0][1][:, i]
                if hessian:
                    hess[:, col, 0, 0] = axis_tabs[0][2][:, i]
            else:
                i, j = exps
                a0, a1 = axis_tabs[0][0][:, i], axis_tabs[0][1][:, i]
                b0, b1 = axis_tabs[1][0][:, j], axis_tabs[1][1][:, j]
                values[:, col] = a0 * b0
                grads[:, col, 0] = a1 * b0
                grads[:, col, 1] = a0 * b1
                if hessian:
                    a2 = axis_tabs[0][2][:, i]
                    b2 = axis_tabs[1][2][:, j]
                    hess[:, col, 0, 0] = a2 * b0
                    hess[:, col, 1, 1] = a0 * b2
                    hess[:, col, 0, 1] = hess[:, col, 1, 0] = a1 * b1
        if hessian:
            return values, grads, hess
        return values, grads

    def monomial_matrix(self):
        """Change of basis to monomials, 1D only.

        Row k holds the coefficients of basis term k in powers of x:
        p_k(x) = sum_j M[k, j] * x**j.  Exact small rationals up to the
        float representation; used by the closed-form integration path.
        """
        if self.dim != 1:
            raise ValueError("monomial conversion is provided for d=1 only")
        m = np.zeros((self.degree + 1, self.degree + 1))
        affine = P.Polynomial([-1.0, 2.0])  # u = 2x - 1
        for k in range(self.degree + 1):
            coeffs_u = L.leg2poly(np.eye(self.degree + 1)[:, k])
            shifted = P.Polynomial(coeffs_u)(affine)
            c = shifted.coef
            m[k, : c.size] = c
        return m

    def gram_matrix(self):
        """Exact L2([0,1]) Gram matrix (1D): diag(1/(2k+1))."""
        if self.dim != 1:
            raise ValueError("gram_matrix is provided for d=1 only")
        return np.diag(1.0 / (2.0 * np.arange(self.degree + 1) + 1.0))
