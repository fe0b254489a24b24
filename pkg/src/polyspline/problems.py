"""The four reference problems: regression targets and Ritz energies.

Regression targets are plain callables with seeded uniform sampling.
Variational problems carry everything needed to train against a Ritz
energy: exact assembly of the quadratic form (A, b), an independent
node-loop evaluation of the energy, and the full parameter gradient of
the energy including the motion of quadrature nodes and weights with the
knots.

Problem 4 (Laplace on a slit domain) is posed on the unit square after
the affine remap of the half domain [-1,1]x[0,1]: the slit runs along
[0.5,1]x{0} with the singular corner at (0.5,0), the symmetry segment
(0,0.5)x{0} carries the natural (Neumann) condition, and the boundary
data g is evaluated in original coordinates (r measured from the slit
tip).  The Dirichlet energy is assembled isotropically on the square,
which reproduces the reference FEM errors; see l2_reported for the
error-norm convention.
"""

import numpy as np
import scipy.linalg

from .errors import InvalidInputError
from .quadrature import points_per_axis, rule_on_cells_2d, rule_on_intervals, rule_on_segment

# --------------------------------------------------------------- regression


class RegressionProblem:
    """A scalar target on [0,1] with seeded uniform train/validation sets."""

    def __init__(self, name, fn, n_train=1000, n_val=1000):
        self.name = name
        self.fn = fn
        self.n_train = n_train
        self.n_val = n_val
        self.dim = 1

    def sample(self, seed=1234):
        """Independent uniform train and validation draws from one stream."""
        rng = np.random.default_rng(seed)
        x_train = rng.uniform(0.0, 1.0, size=self.n_train)
        x_val = rng.uniform(0.0, 1.0, size=self.n_val)
        return x_train, self.fn(x_train), x_val, self.fn(x_val)


def f_sine(x):
    return np.sin(2.0 * np.pi * np.asarray(x))


def f_kinks(x):
    x = np.asarray(x)
    return np.abs(np.sin(3.0 * np.pi * x**2)) + np.abs(np.cos(5.0 * np.pi * x**2))


def kink_locations():
    """Interior derivative discontinuities of f_kinks: sign changes of
    sin(3 pi x^2) at x = sqrt(k/3) and of cos(5 pi x^2) at
    x = sqrt((2k+1)/10), seven points in (0,1)."""
    sin_kinks = [np.sqrt(k / 3.0) for k in (1, 2)]
    cos_kinks = [np.sqrt((2 * k + 1) / 10.0) for k in range(5)]
    return np.sort(np.array(sin_kinks + cos_kinks))


def make_problem_1():
    return RegressionProblem("p1-sine", f_sine)


def make_problem_2():
    return RegressionProblem("p2-kinks", f_kinks)


# -------------------------------------------------------------- variational


def slit_boundary_value(points):
    """g = sqrt(r) sin(theta/2) in original coordinates, on mapped points.

    theta is measured from the slit ray (the original positive x-axis)
    with branch [0, 2pi); the limit value 0 is used at the tip r = 0.
    """
    points = np.atleast_2d(points)
    u = 2.0 * points[:, 0] - 1.0
    v = points[:, 1]
    r = np.hypot(u, v)
    theta = np.mod(np.arctan2(v, u), 2.0 * np.pi)
    return np.sqrt(r) * np.sin(theta / 2.0)


def slit_boundary_gradient(points):
    """Gradient of the slit data w.r.t. the mapped coordinates.

    From the holomorphic derivative of Im(w^(1/2)); the x-component
    carries the factor 2 of the affine map.  Returns zeros at r = 0.
    """
    points = np.atleast_2d(points)
    u = 2.0 * points[:, 0] - 1.0
    v = points[:, 1]
    r = np.hypot(u, v)
    theta = np.mod(np.arctan2(v, u), 2.0 * np.pi)
    safe = np.where(r > 0, np.sqrt(r), 1.0)
    gx = -np.sin(theta / 2.0) / (2.0 * safe) * 2.0
    gy = np.cos(theta / 2.0) / (2.0 * safe)
    zero = r == 0
    gx[zero] = 0.0
    gy[zero] = 0.0
    return np.column_stack([gx, gy])


class BoundarySegment:
    """Axis-aligned Dirichlet segment: coordinate ``axis`` varies over
    [lo, hi] while the other coordinate is pinned at ``fixed``."""

    def __init__(self, axis, fixed, lo, hi):
        self.axis = axis
        self.fixed = fixed
        self.lo = lo
        self.hi = hi

    def embed(self, coords):
        pts = np.empty((coords.size, 2))
        pts[:, self.axis] = coords
        pts[:, 1 - self.axis] = self.fixed
        return pts


class RitzProblem:
    """Quadratic Ritz energy E(c) = 1/2 c^T A c - b^T c + const.

    The energy is  int 1/2 |grad y|^2 - f*y  dx  plus (beta/2) times the
    squared boundary mismatch (point evaluations in 1D, segment integrals
    in 2D), so its coefficient Hessian is exactly the assembled A and its
    linear term is -b.  Boundary integrals of the non-polynomial data are
    over-integrated by ``q_extra`` Gauss points per cell and the same rule
    is used for assembly, the energy, and its gradient.
    """

    def __init__(
        self,
        name,
        dim,
        beta,
        source=0.0,
        point_penalties=(),
        segments=(),
        boundary_value=None,
        boundary_gradient=None,
        exact=None,
        exact_l2_norm=None,
        q_extra=3,
    ):
        self.name = name
        self.dim = dim
        self.beta = beta
        self.source = float(source)
        self.point_penalties = tuple(point_penalties)
        self.segments = tuple(segments)
        self.boundary_value = boundary_value
        self.boundary_gradient = boundary_gradient
        self.exact = exact
        self.exact_l2_norm = exact_l2_norm
        self.q_extra = q_extra

    # ------------------------------------------------------------ plumbing
    def _interior_rule(self, model):
        n_q = points_per_axis(model.poly.degree, self.dim)
        if self.dim == 1:
            return rule_on_intervals(model.knots_x.knots, n_q)
        return rule_on_cells_2d(model.knots_x.knots, model.knots_y.knots, n_q)

    def _segment_rule(self, model, seg):
        layer = model.knots_x if seg.axis == 0 else model.knots_y
        n_q = points_per_axis(model.poly.degree, self.dim) + self.q_extra
        return rule_on_segment(layer.knots, n_q, lo=seg.lo, hi=seg.hi)

    def _interior_points(self, rule):
        if self.dim == 1:
            return rule.points.reshape(-1, 1)
        return rule.points

    def _prepare(self, model):
        """Evaluate the basis caches at all quadrature nodes once."""
        rule = self._interior_rule(model)
        pts = self._interior_points(rule)
        ev = model._evaluate(pts)
        segs = []
        for seg in self.segments:
            srule = self._segment_rule(model, seg)
            pts2 = seg.embed(srule.points)
            ev_b = model._evaluate(pts2)
            n_b = pts2.shape[0]
            g = self.boundary_value(pts2) if self.boundary_value is not None else np.zeros(n_b)
            if self.boundary_gradient is not None:
                g_tan = self.boundary_gradient(pts2)[:, seg.axis]
            else:
                g_tan = np.zeros(n_b)
            segs.append((seg, srule, ev_b, g, g_tan))
        pens = [
            (x_pt, model._evaluate(np.array([[x_pt]]))) for x_pt in self.point_penalties
        ]
        return rule, ev, segs, pens

    def _refresh(self, model, ev, segs, pens):
        model.refresh_expert_cache(ev)
        for _, _, ev_b, _, _ in segs:
            model.refresh_expert_cache(ev_b)
        for _, ev_p in pens:
            model.refresh_expert_cache(ev_p)

    def _assemble_from(self, model, rule, ev, segs, pens):
        fm = model.features_from_eval(ev)
        w = rule.weights
        A = np.einsum("nim,n,njm->ij", fm.grads, w, fm.grads, optimize=True)
        b = self.source * (fm.values.T @ w)
        const = 0.0
        for _, ev_p in pens:
            row = model.features_from_eval(ev_p, values_only=True).values[0]
            A += self.beta * np.outer(row, row)
        for _, srule, ev_b, g, _ in segs:
            vals = model.features_from_eval(ev_b, values_only=True).values
            sw = srule.weights
            A += self.beta * np.einsum("ni,n,nj->ij", vals, sw, vals, optimize=True)
            if self.boundary_value is not None:
                b += self.beta * (vals.T @ (sw * g))
                const += 0.5 * self.beta * np.dot(sw, g * g)
        return A, b, const

    # ------------------------------------------------------------ assembly
    def assemble(self, model):
        """(A, b, const): exact quadratic form of the energy in c."""
        rule, ev, segs, pens = self._prepare(model)
        return self._assemble_from(model, rule, ev, segs, pens)

    # -------------------------------------------------------------- energy
    def energy(self, model):
        """Node-loop energy at the model's current coefficients.

        Independent of assemble(): sums the integrand over quadrature
        nodes directly, so it double-checks the quadratic form.
        """
        rule = self._interior_rule(model)
        pts = self._interior_points(rule)
        y, grad = model.forward(pts)
        total = float(
            np.dot(rule.weights, 0.5 * np.sum(grad * grad, axis=1) - self.source * y)
        )
        for x_pt in self.point_penalties:
            y_pt, _ = model.forward(np.array([[x_pt]]))
            total += 0.5 * self.beta * y_pt[0] ** 2
        for seg in self.segments:
            srule = self._segment_rule(model, seg)
            pts2 = seg.embed(srule.points)
            y_b, _ = model.forward(pts2)
            g = self.boundary_value(pts2) if self.boundary_value is not None else 0.0
            total += 0.5 * self.beta * np.dot(srule.weights, (y_b - g) ** 2)
        return total

    # ------------------------------------------------------------ gradient
    def _gradient_from(self, model, rule, ev, segs, pens):
        y, grad = model.eval_forward(ev)
        hess = model.eval_hessian(ev)
        w = rule.weights
        integrand = 0.5 * np.sum(grad * grad, axis=1) - self.source * y
        total = float(np.dot(w, integrand))

        up_y = -self.source * w
        up_grad = w[:, None] * grad
        theta_grad = model.eval_param_gradient(ev, up_y, up_grad)

        # motion and weight channels, accumulated in knot space per axis
        grad_tx = np.zeros(model.knots_x.n_basis)
        grad_ty = np.zeros(model.knots_y.n_basis) if model.dim == 2 else None
        dF = np.einsum("nlm,nl->nm", hess, grad, optimize=True) - self.source * grad
        if self.dim == 1:
            self._accumulate_line_channels(grad_tx, rule, w * dF[:, 0], integrand, w)
        else:
            self._accumulate_2d_channels(grad_tx, grad_ty, rule, dF, integrand, w)

        for (x_pt, ev_p) in pens:
            y_pt, _ = model.eval_forward(ev_p)
            total += 0.5 * self.beta * y_pt[0] ** 2
            theta_grad += model.eval_param_gradient(ev_p, np.array([self.beta * y_pt[0]]))

        for seg, srule, ev_b, g, g_tan in segs:
            y_b, grad_b = model.eval_forward(ev_b)
            mism = y_b - g
            sw = srule.weights
            total += 0.5 * self.beta * np.dot(sw, mism * mism)
            theta_grad += model.eval_param_gradient(ev_b, self.beta * sw * mism)
            # tangential motion + weight channels on this segment's axis
            dF_seg = self.beta * mism * (grad_b[:, seg.axis] - g_tan)
            integrand_seg = 0.5 * self.beta * mism * mism
            target = grad_tx if seg.axis == 0 else grad_ty
            self._accumulate_line_channels(target, srule, sw * dF_seg, integrand_seg, sw)

        parts = []
        for name, _ in model.param_slices():
            if name == "knots_x":
                parts.append(model.knots_x.logit_vjp(grad_tx))
            elif name == "knots_y":
                parts.append(model.knots_y.logit_vjp(grad_ty))
            else:
                parts.append(np.zeros(model.gating.logits.size))
        extra = np.concatenate(parts) if parts else np.zeros(0)
        return total, theta_grad + extra

    def energy_and_param_gradient(self, model):
        """Energy and its exact gradient over the trainable logits, at
        fixed coefficients.

        Three channels per quadrature node: the basis values at fixed
        points (chain rule through the POU), the motion of the node with
        its cell's knots, and the scaling of its weight with the cell
        width.  All three are required because the rule follows the knots.
        """
        rule, ev, segs, pens = self._prepare(model)
        return self._gradient_from(model, rule, ev, segs, pens)

    def training_step(self, model, ls_reg, want_correction=True):
        """One layer-mode step sharing basis caches: assemble, solve for
        the coefficients, and differentiate.

        Returns (energy, grad, solve_cond).  The solve sensitivity enters
        through the polarization identity, two gradient passes at c +/- s
        with s = ls_reg (A + ls_reg I)^-1 c, skipped when the shift is
        too small to move the gradient.
        """
        rule, ev, segs, pens = self._prepare(model)
        A, b, const = self._assemble_from(model, rule, ev, segs, pens)
        M = A + ls_reg * np.eye(A.shape[0])
        try:
            factor = scipy.linalg.cho_factor(M, lower=True)
            diag = np.abs(np.diag(factor[0]))
            cond = (diag.max() / diag.min()) ** 2
            c = scipy.linalg.cho_solve(factor, b)
            shift = ls_reg * scipy.linalg.cho_solve(factor, c)
        except scipy.linalg.LinAlgError:
            c, *_ = np.linalg.lstsq(M, b, rcond=None)
            cond = np.inf
            shift = np.zeros_like(c)
        model.coeffs = c
        self._refresh(model, ev, segs, pens)
        energy, grad = self._gradient_from(model, rule, ev, segs, pens)
        if want_correction and np.linalg.norm(shift) > 1e-6 * max(np.linalg.norm(c), 1e-30):
            model.coeffs = c + shift
            self._refresh(model, ev, segs, pens)
            _, g_plus = self._gradient_from(model, rule, ev, segs, pens)
            model.coeffs = c - shift
            self._refresh(model, ev, segs, pens)
            _, g_minus = self._gradient_from(model, rule, ev, segs, pens)
            model.coeffs = c
            self._refresh(model, ev, segs, pens)
            grad = grad + 0.5 * (g_plus - g_minus)
        return energy, grad, cond

    @staticmethod
    def _accumulate_line_channels(grad_t, rule, w_dF, integrand, w):
        """Node-motion and weight-scaling contributions along one axis.

        For a node at ref coordinate s in a (possibly clipped) cell
        [a, b]:  dx/db = s, dx/da = 1-s, dw/db = w/h, dw/da = -w/h, with
        clipped bounds frozen (lo_free / hi_free flags).
        """
        k = rule.cell
        s = rule.ref
        h = rule.h
        w_int = w * integrand / h
        np.add.at(grad_t, k, (w_dF * s + w_int) * rule.hi_free)
        np.add.at(grad_t, k - 1, (w_dF * (1.0 - s) - w_int) * rule.lo_free)

    @staticmethod
    def _accumulate_2d_channels(grad_tx, grad_ty, rule, dF, integrand, w):
        for grad_t, cell, s, h, axis in (
            (grad_tx, rule.cell_x, rule.ref_x, rule.h_x, 0),
            (grad_ty, rule.cell_y, rule.ref_y, rule.h_y, 1),
        ):
            w_dF = w * dF[:, axis]
            w_int = w * integrand / h
            np.add.at(grad_t, cell, w_dF * s + w_int)
            np.add.at(grad_t, cell - 1, w_dF * (1.0 - s) - w_int)

    # --------------------------------------------------------------- errors
    def l2_error(self, model, n_extra=3):
        """Absolute error norm sqrt(int (y - u*)^2) with over-integration."""
        if self.exact is None:
            return np.nan
        n_q = points_per_axis(model.poly.degree, self.dim) + n_extra
        if self.dim == 1:
            rule = rule_on_intervals(model.knots_x.knots, n_q)
            pts = rule.points.reshape(-1, 1)
        else:
            rule = rule_on_cells_2d(model.knots_x.knots, model.knots_y.knots, n_q)
            pts = rule.points
        y, _ = model.forward(pts)
        err = y - self.exact(pts)
        return float(np.sqrt(np.dot(rule.weights, err * err)))

    def l2_reported(self, model, n_extra=3):
        """Error in the convention of the reference tables.

        1D Poisson: relative L2 error ||e|| / ||u*||.  Slit problem: the
        pullback norm ||e||_{L2(half domain)} / |half domain|, i.e.
        sqrt(int e^2 / 2) on the unit square.
        """
        abs_err = self.l2_error(model, n_extra=n_extra)
        if self.dim == 1:
            return abs_err / self.exact_l2_norm
        return abs_err / np.sqrt(2.0)

    def mse_vs_exact(self, model, n_points=1000, seed=1234):
        """Mean squared mismatch at uniform random points."""
        if self.exact is None:
            return np.nan
        rng = np.random.default_rng(seed)
        pts = rng.uniform(0.0, 1.0, size=(n_points, self.dim))
        y, _ = model.forward(pts)
        return float(np.mean((y - self.exact(pts)) ** 2))


def _poisson_1d_exact(points):
    x = np.atleast_2d(points)[:, 0]
    return x * (1.0 - x)


def make_problem_3(beta=1000.0):
    """-u'' = 2 on [0,1], u(0) = u(1) = 0, boundary enforced by penalty."""
    return RitzProblem(
        name="p3-poisson1d",
        dim=1,
        beta=beta,
        source=2.0,
        point_penalties=(0.0, 1.0),
        exact=_poisson_1d_exact,
        exact_l2_norm=float(np.sqrt(1.0 / 30.0)),  # ||x(1-x)||_L2
    )


def make_problem_4(beta=1000.0):
    """Laplace on the slit domain, posed post-map on the unit square."""
    return RitzProblem(
        name="p4-slit",
        dim=2,
        beta=beta,
        source=0.0,
        segments=(
            BoundarySegment(axis=0, fixed=0.0, lo=0.5, hi=1.0),  # slit
            BoundarySegment(axis=1, fixed=1.0, lo=0.0, hi=1.0),  # right edge
            BoundarySegment(axis=0, fixed=1.0, lo=0.0, hi=1.0),  # top edge
            BoundarySegment(axis=1, fixed=0.0, lo=0.0, hi=1.0),  # left edge
        ),
        boundary_value=slit_boundary_value,
        boundary_gradient=slit_boundary_gradient,
        exact=slit_boundary_value,
    )


_PROBLEMS = {
    "p1-sine": make_problem_1,
    "p2-kinks": make_problem_2,
    "p3-poisson1d": make_problem_3,
    "p4-slit": make_problem_4,
}


def get_problem(name, **kwargs):
    try:
        factory = _PROBLEMS[name]
    except KeyError:
        raise InvalidInputError(
            f"unknown problem '{name}'; choose from {sorted(_PROBLEMS)}"
        ) from None
    return factory(**kwargs)
