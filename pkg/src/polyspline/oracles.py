"""Independent reference fits and FEM solutions used as test oracles.

Everything here deliberately avoids the package's own basis and feature
machinery: polynomial fits run through numpy's least squares on local
coordinates, spline fits build hat functions from the closed-form
max(0, 1 - |x - t|/h) expression, and the FEM solvers assemble classic
P1 stiffness matrices on their own meshes.
"""

from dataclasses import dataclass

import numpy as np

from .errors import SingularSystemError
from .problems import slit_boundary_value

# ------------------------------------------------------------------ 1D fits


@dataclass
class FitResult:
    predict: callable
    mse: float


def best_poly_fit(x, y, degree):
    """Unregularized least-squares polynomial of the given degree."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    # fit in centered coordinates for conditioning
    t = 2.0 * x - 1.0
    vand = np.polynomial.polynomial.polyvander(t, degree)
    coef, *_ = np.linalg.lstsq(vand, y, rcond=None)

    def predict(xq):
        return np.polynomial.polynomial.polyval(2.0 * np.asarray(xq) - 1.0, coef)

    return FitResult(predict=predict, mse=float(np.mean((predict(x) - y) ** 2)))


def uniform_spline_fit(x, y, n_intervals):
    """Least-squares continuous piecewise-linear fit on uniform knots."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    knots = np.linspace(0.0, 1.0, n_intervals + 1)
    h = 1.0 / n_intervals

    def design(xq):
        return np.maximum(0.0, 1.0 - np.abs(xq[:, None] - knots[None, :]) / h)

    coef, *_ = np.linalg.lstsq(design(x), y, rcond=None)

    def predict(xq):
        return design(np.asarray(xq, dtype=float)) @ coef

    return FitResult(predict=predict, mse=float(np.mean((predict(x) - y) ** 2)))


def piecewise_poly_fit(x, y, breakpoints, degree):
    """Independent per-piece polynomial fits (no continuity constraint).

    Pieces are the intervals between consecutive breakpoints; each piece
    is fitted on its own points in local coordinates.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    breakpoints = np.asarray(breakpoints, dtype=float)
    coefs = []
    for lo, hi in zip(breakpoints[:-1], breakpoints[1:]):
        mask = (x >= lo) & (x <= hi) if hi == breakpoints[-1] else (x >= lo) & (x < hi)
        t = (x[mask] - lo) / (hi - lo)
        vand = np.polynomial.polynomial.polyvander(t, degree)
        coef, *_ = np.linalg.lstsq(vand, y[mask], rcond=None)
        coefs.append(coef)

    def predict(xq):
        xq = np.asarray(xq, dtype=float)
        out = np.empty_like(xq)
        piece = np.clip(np.searchsorted(breakpoints, xq, side="right") - 1, 0, len(coefs) - 1)
        for i, coef in enumerate(coefs):
            mask = piece == i
            lo, hi = breakpoints[i], breakpoints[i + 1]
            out[mask] = np.polynomial.polynomial.polyval((xq[mask] - lo) / (hi - lo), coef)
        return out

    return FitResult(predict=predict, mse=float(np.mean((predict(x) - y) ** 2)))


# ------------------------------------------------------------------- 1D FEM


def fem_p1_1d(knots, source=2.0, beta=None):
    """P1 finite elements for -u'' = source with u = 0 at both ends.

    ``beta=None`` imposes the boundary condition strongly; a float adds
    the same (beta/2)*u^2 endpoint penalty the Ritz problems use, i.e.
    beta on the diagonal of the stiffness matrix.  Returns nodal values
    and a piecewise-linear predict callable.
    """
    knots = np.asarray(knots, dtype=float)
    n = len(knots)
    h = np.diff(knots)
    if np.any(h <= 0):
        raise SingularSystemError("knots must be strictly increasing")
    K = np.zeros((n, n))
    for i in range(n - 1):
        K[i, i] += 1.0 / h[i]
        K[i + 1, i + 1] += 1.0 / h[i]
        K[i, i + 1] -= 1.0 / h[i]
        K[i + 1, i] -= 1.0 / h[i]
    load = np.zeros(n)
    load[:-1] += source * h / 2.0
    load[1:] += source * h / 2.0

    u = np.zeros(n)
    if beta is None:
        interior = slice(1, n - 1)
        u[interior] = np.linalg.solve(K[interior, interior], load[interior])
    else:
        K[0, 0] += beta
        K[-1, -1] += beta
        u = np.linalg.solve(K, load)

    def predict(xq):
        return np.interp(np.asarray(xq, dtype=float), knots, u)

    return u, predict


# ------------------------------------------------------------------- 2D FEM

_DUNAVANT5_BARY = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [0.797426985353087, 0.101286507323456, 0.101286507323456],
        [0.101286507323456, 0.797426985353087, 0.101286507323456],
        [0.101286507323456, 0.101286507323456, 0.797426985353087],
        [0.059715871789770, 0.470142064105115, 0.470142064105115],
        [0.470142064105115, 0.059715871789770, 0.470142064105115],
        [0.470142064105115, 0.470142064105115, 0.059715871789770],
    ]
)
_DUNAVANT5_W = np.array(
    [
        0.225,
        0.125939180544827,
        0.125939180544827,
        0.125939180544827,
        0.132394152788506,
        0.132394152788506,
        0.132394152788506,
    ]
)


def right_split_mesh(n):
    """Uniform n x n squares on [0,1]^2, each split along the
    bottom-left -> top-right diagonal: 2 n^2 triangles, (n+1)^2 vertices."""
    verts = np.array([(i / n, j / n) for j in range(n + 1) for i in range(n + 1)])
    tris = []
    for j in range(n):
        for i in range(n):
            v00 = j * (n + 1) + i
            v10, v01 = v00 + 1, v00 + (n + 1)
            v11 = v01 + 1
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    return verts, np.array(tris, dtype=int)


@dataclass
class FemSolution:
    verts: np.ndarray
    tris: np.ndarray
    values: np.ndarray

    def _locate(self, points):
        """Barycentric coordinates of each point in its containing triangle."""
        points = np.clip(np.atleast_2d(points), 0.0, 1.0)
        out = np.empty(points.shape[0])
        for idx, p in enumerate(points):
            val = np.nan
            for tri in self.tris:
                a, b, c = self.verts[tri]
                det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
                l1 = ((b[0] - p[0]) * (c[1] - p[1]) - (c[0] - p[0]) * (b[1] - p[1])) / det
                l2 = ((c[0] - p[0]) * (a[1] - p[1]) - (a[0] - p[0]) * (c[1] - p[1])) / det
                l3 = 1.0 - l1 - l2
                if l1 >= -1e-12 and l2 >= -1e-12 and l3 >= -1e-12:
                    val = l1 * self.values[tri[0]] + l2 * self.values[tri[1]] + l3 * self.values[tri[2]]
                    break
            out[idx] = val
        return out

    def predict(self, points):
        return self._locate(points)

    def l2_error(self, exact, n_sub=16):
        """sqrt(int (u_h - exact)^2) over the unit square, by uniform
        subdivision of each triangle and a degree-5 rule per piece."""
        err2 = 0.0
        for tri in self.tris:
            p = self.verts[tri]
            uv = self.values[tri]
            x, y = p[:, 0], p[:, 1]
            area = 0.5 * abs((x[1] - x[0]) * (y[2] - y[0]) - (x[2] - x[0]) * (y[1] - y[0]))
            sub_area = area / n_sub**2
            for a_ in range(n_sub):
                for b_ in range(n_sub - a_):
                    l0 = np.array([a_, b_, n_sub - a_ - b_]) / n_sub
                    l1 = np.array([a_ + 1, b_, n_sub - a_ - b_ - 1]) / n_sub
                    l2 = np.array([a_, b_ + 1, n_sub - a_ - b_ - 1]) / n_sub
                    corner_sets = [(l0, l1, l2)]
                    if a_ + b_ + 2 <= n_sub:
                        l3 = np.array([a_ + 1, b_ + 1, n_sub - a_ - b_ - 2]) / n_sub
                        corner_sets.append((l1, l3, l2))
                    for cs in corner_sets:
                        lam = _DUNAVANT5_BARY @ np.array(cs)
                        pts = lam @ p
                        uh = lam @ uv
                        err2 += sub_area * np.sum(_DUNAVANT5_W * (uh - exact(pts)) ** 2)
        return float(np.sqrt(err2))

    def l2_reported(self, exact, n_sub=16):
        """Error in the slit problem's reported convention, sqrt(int e^2/2)."""
        return self.l2_error(exact, n_sub=n_sub) / np.sqrt(2.0)


def fem_p1_2d_uniform(n, g=slit_boundary_value, beta=None):
    """P1 FEM for the post-map slit problem on a uniform right-split mesh.

    Dirichlet data g is imposed strongly on the boundary minus the open
    Neumann segment (0, 0.5) x {0} (``beta=None``), or weakly through the
    (beta/2)*(u-g)^2 boundary penalty when ``beta`` is given.  A 3 x 3
    mesh has 16 degrees of freedom and 18 elements.
    """
    verts, tris = right_split_mesh(n)
    nv = len(verts)
    K = np.zeros((nv, nv))
    for tri in tris:
        p = verts[tri]
        x, y = p[:, 0], p[:, 1]
        area = 0.5 * abs((x[1] - x[0]) * (y[2] - y[0]) - (x[2] - x[0]) * (y[1] - y[0]))
        bb = np.array([y[1] - y[2], y[2] - y[0], y[0] - y[1]]) / (2 * area)
        cc = np.array([x[2] - x[1], x[0] - x[2], x[1] - x[0]]) / (2 * area)
        Ke = area * (np.outer(bb, bb) + np.outer(cc, cc))
        for a_ in range(3):
            for b_ in range(3):
                K[tri[a_], tri[b_]] += Ke[a_, b_]

    tol = 1e-12
    on_boundary = (
        (np.abs(verts[:, 0]) < tol)
        | (np.abs(verts[:, 0] - 1) < tol)
        | (np.abs(verts[:, 1]) < tol)
        | (np.abs(verts[:, 1] - 1) < tol)
    )
    on_neumann = (
        (np.abs(verts[:, 1]) < tol) & (verts[:, 0] > tol) & (verts[:, 0] < 0.5 - tol)
    )
    dirichlet = on_boundary & ~on_neumann

    u = np.zeros(nv)
    if beta is None:
        u[dirichlet] = g(verts[dirichlet])
        free = ~dirichlet
        rhs = -K[np.ix_(free, dirichlet)] @ u[dirichlet]
        u[free] = np.linalg.solve(K[np.ix_(free, free)], rhs)
    else:
        # lumped boundary penalty: beta * sum over Dirichlet edges of
        # edge-length-weighted nodal mismatch
        load = np.zeros(nv)
        for idx in np.flatnonzero(dirichlet):
            K[idx, idx] += beta
            load[idx] += beta * g(verts[[idx]])[0]
        u = np.linalg.solve(K, load)
    return FemSolution(verts=verts, tris=tris, values=u)
