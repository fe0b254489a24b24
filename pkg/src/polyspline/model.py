"""The polynomial-spline mixture model: gates times polynomial experts.

The model on [0,1]^d is

    y(x) = sum_a pou_a(x) * sum_b c[a, b] * p_b(x),

with POU cell functions built from hat-function bases through a
column-stochastic gating matrix, experts from a total-degree polynomial
basis, and a flat coefficient vector ``c`` in cell-major order
(c[a * n_terms + b]).  Evaluation routines are pure; gradients with
respect to the trainable logits are hand-derived vector-Jacobian
products, so no autodiff framework is involved.

The trainable parameter vector is the concatenation of x-axis knot
logits, y-axis knot logits (d=2), and the row-major flattened gating
logits, skipping frozen components.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, InvalidInputError
from .gating import GatingWeights
from .knots import KnotLayer, basis_knot_vjp
from .polybasis import PolyBasis

CHECKPOINT_FORMAT = "polyspline-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class SplineEval2D:
    """Tensor-product hat basis at 2D points, flattened x-major.

    Column i*(Ny+1)+j holds phi_i(x1)*psi_j(x2).  ``ax`` and ``ay`` keep
    the per-axis 1D evaluations for gradient pullbacks.
    """

    values: np.ndarray
    grads: np.ndarray  # (n, n_basis, 2)
    cell_index: np.ndarray  # (n, 2)
    ax: object
    ay: object


@dataclass
class FeatureMap:
    """Gate-times-expert features: column a*n_terms+b is pou_a * p_b."""

    values: np.ndarray  # (n, K)
    grads: np.ndarray  # (n, K, d)


class _Eval:
    """Cached intermediates for one evaluation batch."""

    __slots__ = ("x", "sx", "sy", "S", "dS", "P", "dP", "V", "dV", "E", "dE")


class PolySplineModel:
    def __init__(self, knots_x, gating, poly, coeffs=None, knots_y=None):
        self.knots_x = knots_x
        self.knots_y = knots_y
        self.gating = gating
        self.poly = poly
        if poly.dim == 2 and knots_y is None:
            raise DimensionMismatchError("2D model needs a y-axis knot layer")
        if poly.dim == 1 and knots_y is not None:
            raise DimensionMismatchError("1D model cannot take a y-axis knot layer")
        n_sb = knots_x.n_basis * (knots_y.n_basis if knots_y is not None else 1)
        if gating.n_basis != n_sb:
            raise DimensionMismatchError(
                f"gating expects {gating.n_basis} spline functions, model has {n_sb}"
            )
        self.coeffs = (
            np.zeros(self.n_features) if coeffs is None else np.asarray(coeffs, dtype=float)
        )
        if self.coeffs.shape != (self.n_features,):
            raise DimensionMismatchError(
                f"coefficient vector must have length {self.n_features}"
            )

    # ---------------------------------------------------------------- shape
    @property
    def dim(self):
        return self.poly.dim

    @property
    def n_cells(self):
        return self.gating.n_cells

    @property
    def n_features(self):
        return self.gating.n_cells * self.poly.n_terms

    def coeff_blocks(self):
        return self.coeffs.reshape(self.n_cells, self.poly.n_terms)

    # ----------------------------------------------------------- evaluation
    def _check_x(self, x):
        x = np.asarray(x, dtype=float)
        if self.dim == 1:
            x = x.reshape(-1, 1) if x.ndim == 1 else x
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise DimensionMismatchError(
                f"expected points of shape (n, {self.dim}), got {x.shape}"
            )
        return x

    def spline_eval(self, x):
        """1D SplineEval or tensor-product SplineEval2D at the points."""
        x = self._check_x(x)
        sx = self.knots_x.eval_basis(x[:, 0])
        if self.dim == 1:
            return sx
        sy = self.knots_y.eval_basis(x[:, 1])
        values = np.einsum("ni,nj->nij", sx.values, sy.values)
        gx = np.einsum("ni,nj->nij", sx.derivs, sy.values)
        gy = np.einsum("ni,nj->nij", sx.values, sy.derivs)
        n = x.shape[0]
        return SplineEval2D(
            values=values.reshape(n, -1),
            grads=np.stack([gx.reshape(n, -1), gy.reshape(n, -1)], axis=-1),
            cell_index=np.stack([sx.cell_index, sy.cell_index], axis=-1),
            ax=sx,
            ay=sy,
        )

    def _evaluate(self, x):
        x = self._check_x(x)
        ev = _Eval()
        ev.x = x
        sx = self.knots_x.eval_basis(x[:, 0])
        ev.sx = sx
        W = self.gating.matrix
        n = x.shape[0]
        if self.dim == 1:
            ev.sy = None
            ev.S = sx.values
            ev.dS = sx.derivs[:, :, None]
        else:
            sy = self.knots_y.eval_basis(x[:, 1])
            ev.sy = sy
            ev.S = (sx.values[:, :, None] * sy.values[:, None, :]).reshape(n, -1)
            gx = (sx.derivs[:, :, None] * sy.values[:, None, :]).reshape(n, -1)
            gy = (sx.values[:, :, None] * sy.derivs[:, None, :]).reshape(n, -1)
            ev.dS = np.stack([gx, gy], axis=-1)
        ev.P = ev.S @ W.T
        ev.dP = np.einsum("ngm,ag->nam", ev.dS, W, optimize=True)
        ev.V, ev.dV = self.poly.eval(x)
        self.refresh_expert_cache(ev)
        return ev

    def refresh_expert_cache(self, ev):
        """Recompute the coefficient-dependent parts of a cached evaluation.

        Needed after the LSGD solve updates ``coeffs`` while the basis
        caches (built at the same points and logits) stay valid.
        """
        cb = self.coeff_blocks()
        ev.E = ev.V @ cb.T
        ev.dE = np.einsum("nbm,ab->nam", ev.dV, cb, optimize=True)

    def feature_map(self, x):
        ev = self._evaluate(x)
        return self.features_from_eval(ev)

    def features_from_eval(self, ev, values_only=False):
        n = ev.x.shape[0]
        values = (ev.P[:, :, None] * ev.V[:, None, :]).reshape(n, -1)
        if values_only:
            return FeatureMap(values=values, grads=None)
        grads = (
            ev.dP[:, :, None, :] * ev.V[:, None, :, None]
            + ev.P[:, :, None, None] * ev.dV[:, None, :, :]
        ).reshape(n, self.n_features, self.dim)
        return FeatureMap(values=values, grads=grads)

    def eval_forward(self, ev):
        """(y, grad_y) from a cached evaluation."""
        y = np.sum(ev.P * ev.E, axis=1)
        grad = np.einsum("nam,na->nm", ev.dP, ev.E) + np.einsum(
            "na,nam->nm", ev.P, ev.dE
        )
        return y, grad

    def eval_hessian(self, ev):
        """Model Hessian (n, d, d) from a cached evaluation.

        Per knot cell the gate is affine in each coordinate, so its only
        nonvanishing second derivative is the 2D mixed term.
        """
        _, _, hV = self.poly.eval(ev.x, hessian=True)
        cb = self.coeff_blocks()
        hE = np.einsum("nblm,ab->nalm", hV, cb)
        hess = (
            np.einsum("nal,nam->nlm", ev.dP, ev.dE)
            + np.einsum("nam,nal->nlm", ev.dP, ev.dE)
            + np.einsum("na,nalm->nlm", ev.P, hE)
        )
        if self.dim == 2:
            W = self.gating.matrix
            mixed = np.einsum(
                "ni,nj->nij", ev.sx.derivs, ev.sy.derivs
            ).reshape(ev.x.shape[0], -1)
            hP_xy = mixed @ W.T
            cross = np.einsum("na,na->n", hP_xy, ev.E)
            hess[:, 0, 1] += cross
            hess[:, 1, 0] += cross
        return hess

    def forward(self, x):
        """Model values and spatial gradients: (y, grad_y)."""
        return self.eval_forward(self._evaluate(x))

    def __call__(self, x):
        return self.forward(x)[0]

    def forward_with_hessian(self, x):
        """(y, grad_y, hess_y); hess has shape (n, d, d)."""
        ev = self._evaluate(x)
        y, grad = self.eval_forward(ev)
        return y, grad, self.eval_hessian(ev)

    # ----------------------------------------------------------- parameters
    def param_slices(self):
        """Ordered (name, size) pairs of the trainable parameter vector."""
        out = []
        if self.knots_x.trainable:
            out.append(("knots_x", self.knots_x.n_intervals))
        if self.knots_y is not None and self.knots_y.trainable:
            out.append(("knots_y", self.knots_y.n_intervals))
        if self.gating.trainable:
            out.append(("gating", self.gating.logits.size))
        return out

    @property
    def n_params(self):
        return sum(size for _, size in self.param_slices())

    def get_param_vector(self):
        parts = []
        for name, _ in self.param_slices():
            if name == "knots_x":
                parts.append(self.knots_x.logits)
            elif name == "knots_y":
                parts.append(self.knots_y.logits)
            else:
                parts.append(self.gating.logits.ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def set_param_vector(self, vec):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.n_params,):
            raise DimensionMismatchError(
                f"parameter vector must have length {self.n_params}"
            )
        pos = 0
        for name, size in self.param_slices():
            chunk = vec[pos : pos + size]
            pos += size
            if name == "knots_x":
                self.knots_x.set_logits(chunk)
            elif name == "knots_y":
                self.knots_y.set_logits(chunk)
            else:
                self.gating.set_logits(chunk.reshape(self.gating.logits.shape))

    def _pack_param_gradient(self, grad_tx, grad_ty, grad_w):
        parts = []
        for name, _ in self.param_slices():
            if name == "knots_x":
                parts.append(self.knots_x.logit_vjp(grad_tx))
            elif name == "knots_y":
                parts.append(self.knots_y.logit_vjp(grad_ty))
            else:
                parts.append(self.gating.logit_vjp(grad_w).ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def backprop_upstreams(self, ev, up_P, up_dP):
        """Chain cell-level upstreams back to knot-space and W-space grads.

        ``up_P`` is d(loss)/d(pou values), shape (n, n_cells); ``up_dP``
        is d(loss)/d(pou spatial grads), shape (n, n_cells, d), or None.
        Returns (grad_tx, grad_ty, grad_W) in knot coordinates (grad_ty
        is None for 1D).
        """
        W = self.gating.matrix
        up_S = up_P @ W
        up_dS = None if up_dP is None else np.einsum("nam,ag->ngm", up_dP, W)
        grad_W = up_P.T @ ev.S
        if up_dP is not None:
            grad_W = grad_W + np.einsum("nam,ngm->ag", up_dP, ev.dS)

        if self.dim == 1:
            grad_tx = basis_knot_vjp(
                self.knots_x.knots,
                ev.x[:, 0],
                ev.sx,
                up_S,
                None if up_dS is None else up_dS[:, :, 0],
            )
            return grad_tx, None, grad_W

        nx, ny = self.knots_x.n_basis, self.knots_y.n_basis
        n = ev.x.shape[0]
        U1 = up_S.reshape(n, nx, ny)
        a0, a1 = ev.sx.values, ev.sx.derivs
        b0, b1 = ev.sy.values, ev.sy.derivs
        up_a = np.einsum("nij,nj->ni", U1, b0)
        up_b = np.einsum("nij,ni->nj", U1, a0)
        up_da = np.zeros_like(up_a)
        up_db = np.zeros_like(up_b)
        if up_dS is not None:
            U2 = up_dS[:, :, 0].reshape(n, nx, ny)
            U3 = up_dS[:, :, 1].reshape(n, nx, ny)
            up_da += np.einsum("nij,nj->ni", U2, b0)
            up_a += np.einsum("nij,nj->ni", U3, b1)
            up_db += np.einsum("nij,ni->nj", U3, a0)
            up_b += np.einsum("nij,ni->nj", U2, a1)
        grad_tx = basis_knot_vjp(self.knots_x.knots, ev.x[:, 0], ev.sx, up_a, up_da)
        grad_ty = basis_knot_vjp(self.knots_y.knots, ev.x[:, 1], ev.sy, up_b, up_db)
        return grad_tx, grad_ty, grad_W

    def eval_param_gradient(self, ev, up_y, up_grad=None):
        """param_gradient from a cached evaluation."""
        up_y = np.asarray(up_y, dtype=float)
        up_P = up_y[:, None] * ev.E
        up_dP = None
        if up_grad is not None:
            up_grad = np.asarray(up_grad, dtype=float)
            if up_grad.ndim == 1:
                up_grad = up_grad[:, None]
            up_P = up_P + np.einsum("nm,nam->na", up_grad, ev.dE)
            up_dP = np.einsum("nm,na->nam", up_grad, ev.E)
        grad_tx, grad_ty, grad_W = self.backprop_upstreams(ev, up_P, up_dP)
        return self._pack_param_gradient(grad_tx, grad_ty, grad_W)

    def param_gradient(self, x, up_y, up_grad=None):
        """Gradient of a scalar loss over the trainable logits, c held fixed.

        ``up_y[i]`` is d(loss)/dy(x_i); ``up_grad[i, m]`` is
        d(loss)/d(grad y(x_i))_m.  Exact chain rule through the POU
        values; the expert factor carries no logit dependence at fixed x.
        """
        return self.eval_param_gradient(self._evaluate(x), up_y, up_grad)

    # ---------------------------------------------------------- persistence
    def save(self, path):
        """Write a versioned JSON checkpoint; floats round-trip exactly."""

        def knot_payload(layer):
            if layer is None:
                return None
            return {
                "logits": layer.logits.tolist(),
                "lo": layer.lo,
                "hi": layer.hi,
                "trainable": layer.trainable,
            }

        payload = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "dims": self.dim,
            "degree": self.poly.degree,
            "knots_x": knot_payload(self.knots_x),
            "knots_y": knot_payload(self.knots_y),
            "gating": {
                "logits": None if self.gating.logits is None else self.gating.logits.tolist(),
                "matrix": None if self.gating.trainable else self.gating.matrix.tolist(),
                "n_cells": self.gating.n_cells,
            },
            "coefficients": self.coeffs.tolist(),
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            payload = json.load(fh)
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise InvalidInputError(f"{path} is not a {CHECKPOINT_FORMAT} file")
        if payload.get("version") != CHECKPOINT_VERSION:
            raise InvalidInputError(
                f"unsupported checkpoint version {payload.get('version')}"
            )

        def knot_layer(blob):
            if blob is None:
                return None
            return KnotLayer(
                logits=np.array(blob["logits"], dtype=float),
                lo=blob["lo"],
                hi=blob["hi"],
                trainable=blob["trainable"],
            )

        g = payload["gating"]
        gating = (
            GatingWeights(logits=np.array(g["logits"], dtype=float))
            if g["logits"] is not None
            else GatingWeights(matrix=np.array(g["matrix"], dtype=float))
        )
        return cls(
            knots_x=knot_layer(payload["knots_x"]),
            knots_y=knot_layer(payload["knots_y"]),
            gating=gating,
            poly=PolyBasis(payload["degree"], payload["dims"]),
            coeffs=np.array(payload["coefficients"], dtype=float),
        )


def make_model(
    dim,
    degree,
    n_splines,
    n_cells,
    seed=0,
    gating_init="random",
    gating_scale=0.5,
    knot_jitter=0.0,
    knots_trainable=True,
    gating_sharpness=8.0,
):
    """Build a fresh model with seeded initialization.

    ``n_splines`` is an int (1D) or pair (2D); knots start uniform with
    optional Gaussian logit jitter.  ``gating_init`` is 'random' (i.i.d.
    Gaussian logits), 'banded' (contiguous hat blocks per cell), or
    'identity' (fixed W = I, requires n_cells == n_basis).
    """
    rng = np.random.default_rng(seed)
    if dim == 1:
        nsx = int(n_splines) if np.isscalar(n_splines) else int(n_splines[0])
        knots_x = KnotLayer.uniform(nsx, jitter=knot_jitter, rng=rng, trainable=knots_trainable)
        knots_y = None
        n_basis = nsx + 1
    elif dim == 2:
        nsx, nsy = (n_splines, n_splines) if np.isscalar(n_splines) else tuple(n_splines)
        knots_x = KnotLayer.uniform(int(nsx), jitter=knot_jitter, rng=rng, trainable=knots_trainable)
        knots_y = KnotLayer.uniform(int(nsy), jitter=knot_jitter, rng=rng, trainable=knots_trainable)
        n_basis = (int(nsx) + 1) * (int(nsy) + 1)
    else:
        raise InvalidInputError("dim must be 1 or 2")
    if not 1 <= n_cells <= n_basis:
        raise InvalidInputError(
            f"n_cells must lie in [1, {n_basis}] for {n_basis} spline functions"
        )
    if gating_init == "random":
        gating = GatingWeights.random(n_cells, n_basis, scale=gating_scale, rng=rng)
    elif gating_init == "banded":
        gating = GatingWeights.banded(n_cells, n_basis, sharpness=gating_sharpness)
    elif gating_init == "identity":
        if n_cells != n_basis:
            raise InvalidInputError("identity gating needs n_cells == n_basis")
        gating = GatingWeights.from_matrix(np.eye(n_basis))
    else:
        raise InvalidInputError(f"unknown gating_init '{gating_init}'")
    poly = PolyBasis(degree, dim)
    return PolySplineModel(knots_x=knots_x, knots_y=knots_y, gating=gating, poly=poly)
