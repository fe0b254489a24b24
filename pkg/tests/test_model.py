"""Model assembly: forward evaluation, feature map, parameter gradients."""

import numpy as np
import pytest

from polyspline import (
    GatingWeights,
    KnotLayer,
    OutOfDomainError,
    PolyBasis,
    PolySplineModel,
    make_model,
)
from polyspline.knots import eval_b1_basis


def direct_mixture_eval(model, x):
    """Independent evaluator: explicit sum over cells, splines, and terms.

    Deliberately avoids the feature-map code path (plain Python loops over
    the mixture definition) so it can serve as an oracle for it.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if model.dim == 1 and x.shape[1] != 1:
        x = x.reshape(-1, 1)
    W = model.gating.matrix
    cb = model.coeff_blocks()
    sx = eval_b1_basis(model.knots_x.knots, x[:, 0])
    if model.dim == 2:
        sy = eval_b1_basis(model.knots_y.knots, x[:, 1])
    pv, _ = model.poly.eval(x)
    out = np.zeros(x.shape[0])
    for n in range(x.shape[0]):
        for alpha in range(model.n_cells):
            gate = 0.0
            for gx in range(model.knots_x.n_basis):
                if model.dim == 1:
                    gate += W[alpha, gx] * sx.values[n, gx]
                else:
                    for gy in range(model.knots_y.n_basis):
                        col = gx * model.knots_y.n_basis + gy
                        gate += W[alpha, col] * sx.values[n, gx] * sy.values[n, gy]
            expert = sum(cb[alpha, b] * pv[n, b] for b in range(model.poly.n_terms))
            out[n] += gate * expert
    return out


def coeffs_for_polynomial(basis, mono):
    """Coordinates of a monomial-coefficient polynomial in the expert basis."""
    M = basis.monomial_matrix()
    mono = np.pad(np.asarray(mono, dtype=float), (0, M.shape[0] - len(mono)))
    return np.linalg.solve(M.T, mono)


class TestForward:
    def test_single_cell_linear_model(self):
        """N_cells=1, expert encoding p(x) = x: y(0.3) = 0.3, y'(0.3) = 1."""
        model = make_model(dim=1, degree=1, n_splines=4, n_cells=1, seed=0)
        model.coeffs = coeffs_for_polynomial(model.poly, [0.0, 1.0])
        y, dy = model.forward(np.array([0.3]))
        assert y[0] == pytest.approx(0.3, abs=1e-14)
        assert dy[0, 0] == pytest.approx(1.0, abs=1e-13)

    def test_identity_gating_interpolates_hat_coefficients(self):
        """B=0 with W=I is the linear spline interpolant of its coefficients."""
        layer = KnotLayer(np.array([0.4, -0.3, 0.1, 0.0]))
        model = PolySplineModel(
            knots_x=layer,
            gating=GatingWeights.from_matrix(np.eye(5)),
            poly=PolyBasis(0, 1),
            coeffs=np.array([1.0, -2.0, 0.5, 3.0, 2.0]),
        )
        y, _ = model.forward(layer.knots)
        np.testing.assert_allclose(y, model.coeffs, atol=1e-14)
        mid = 0.5 * (layer.knots[:-1] + layer.knots[1:])
        y_mid, _ = model.forward(mid)
        np.testing.assert_allclose(
            y_mid, 0.5 * (model.coeffs[:-1] + model.coeffs[1:]), atol=1e-14
        )

    def test_forward_matches_feature_map_and_direct_sum(self):
        rng = np.random.default_rng(4)
        for dim in (1, 2):
            model = make_model(
                dim=dim, degree=2, n_splines=4, n_cells=3, seed=11, knot_jitter=0.4
            )
            model.coeffs = rng.normal(size=model.n_features)
            x = rng.uniform(0, 1, size=(30, dim))
            y, _ = model.forward(x)
            fm = model.feature_map(x)
            np.testing.assert_allclose(y, fm.values @ model.coeffs, atol=1e-13)
            np.testing.assert_allclose(y, direct_mixture_eval(model, x), atol=1e-13)

    def test_out_of_domain(self):
        model = make_model(dim=1, degree=1, n_splines=3, n_cells=2, seed=0)
        with pytest.raises(OutOfDomainError):
            model.forward(np.array([1.5]))

    def test_continuity_across_knots(self):
        """y is continuous: values straddling each interior knot differ by
        at most ~1e-9 times the local slope."""
        rng = np.random.default_rng(6)
        model = make_model(dim=1, degree=3, n_splines=6, n_cells=4, seed=3, knot_jitter=0.5)
        model.coeffs = rng.normal(size=model.n_features)
        eps = 1e-9
        for t in model.knots_x.knots[1:-1]:
            y_pair, dy_pair = model.forward(np.array([t - eps, t + eps]))
            slope_bound = np.max(np.abs(dy_pair)) + 1.0
            assert abs(y_pair[1] - y_pair[0]) <= 1e-7 * slope_bound


class TestFeatureMap:
    def test_single_cell_reduces_to_polynomial_basis(self):
        model = make_model(dim=1, degree=3, n_splines=5, n_cells=1, seed=2, knot_jitter=0.3)
        x = np.linspace(0, 1, 9)
        fm = model.feature_map(x)
        pv, pg = model.poly.eval(x)
        np.testing.assert_allclose(fm.values, pv, atol=1e-14)
        np.testing.assert_allclose(fm.grads, pg, atol=1e-12)

    def test_degree_zero_identity_gating_reduces_to_spline_basis(self):
        layer = KnotLayer(np.array([0.2, -0.1, 0.4]))
        model = PolySplineModel(
            knots_x=layer,
            gating=GatingWeights.from_matrix(np.eye(4)),
            poly=PolyBasis(0, 1),
        )
        x = np.linspace(0, 1, 11)
        fm = model.feature_map(x)
        ev = layer.eval_basis(x)
        np.testing.assert_allclose(fm.values, ev.values, atol=1e-14)
        np.testing.assert_allclose(fm.grads[:, :, 0], ev.derivs, atol=1e-12)

    def test_feature_gradients_match_finite_differences(self):
        """Spatial feature gradients vs central differences at interior
        points kept away from every knot line."""
        rng = np.random.default_rng(12)
        step = 1e-6
        for dim in (1, 2):
            model = make_model(
                dim=dim, degree=2, n_splines=5, n_cells=3, seed=7, knot_jitter=0.3
            )
            model.coeffs = rng.normal(size=model.n_features)
            x = rng.uniform(0.05, 0.95, size=(100, dim))
            layers = [model.knots_x] if dim == 1 else [model.knots_x, model.knots_y]
            for axis, layer in enumerate(layers):
                dist = np.min(np.abs(x[:, axis][:, None] - layer.knots[None, :]), axis=1)
                x = x[dist > 1e-3]
            fm = model.feature_map(x)
            for axis in range(dim):
                dp, dm = x.copy(), x.copy()
                dp[:, axis] += step
                dm[:, axis] -= step
                fd = (model.feature_map(dp).values - model.feature_map(dm).values) / (2 * step)
                denom = np.maximum(np.abs(fm.grads[:, :, axis]), 1.0)
                np.testing.assert_allclose(
                    fm.grads[:, :, axis] / denom, fd / denom, atol=1e-5
                )


class TestTensorSpline:
    def test_one_hot_at_grid_nodes(self):
        model = make_model(dim=2, degree=1, n_splines=(3, 4), n_cells=2, seed=1, knot_jitter=0.4)
        tx, ty = model.knots_x.knots, model.knots_y.knots
        pts = np.array([(a, b) for a in tx for b in ty])
        ev = model.spline_eval(pts)
        expected = np.eye(len(tx) * len(ty))
        np.testing.assert_allclose(ev.values, expected, atol=1e-14)

    def test_row_sums_one(self):
        rng = np.random.default_rng(2)
        model = make_model(dim=2, degree=0, n_splines=(4, 3), n_cells=3, seed=5, knot_jitter=0.6)
        ev = model.spline_eval(rng.uniform(0, 1, size=(200, 2)))
        np.testing.assert_allclose(ev.values.sum(axis=1), 1.0, atol=1e-12)

    def test_product_rule_gradients_match_fd(self):
        rng = np.random.default_rng(14)
        model = make_model(dim=2, degree=0, n_splines=(3, 3), n_cells=2, seed=9, knot_jitter=0.3)
        step = 1e-6
        x = rng.uniform(0.05, 0.95, size=(60, 2))
        for knots, axis in ((model.knots_x.knots, 0), (model.knots_y.knots, 1)):
            dist = np.min(np.abs(x[:, axis][:, None] - knots[None, :]), axis=1)
            x = x[dist > 1e-3]
        ev = model.spline_eval(x)
        for axis in range(2):
            dp, dm = x.copy(), x.copy()
            dp[:, axis] += step
            dm[:, axis] -= step
            fd = (model.spline_eval(dp).values - model.spline_eval(dm).values) / (2 * step)
            np.testing.assert_allclose(ev.grads[:, :, axis], fd, rtol=1e-5, atol=1e-6)


class TestParamGradient:
    def test_constant_model_constant_target_zero_gradient(self):
        """Loss insensitive to placement: constant expert everywhere."""
        model = make_model(dim=1, degree=0, n_splines=4, n_cells=2, seed=3)
        model.coeffs = np.array([2.0, 2.0])  # y == 2 regardless of gates
        x = np.linspace(0.05, 0.95, 40)
        y, _ = model.forward(x)
        up_y = 2.0 * (y - 2.0) / len(x)
        grad = model.param_gradient(x, up_y)
        np.testing.assert_allclose(grad, 0.0, atol=1e-14)

    def test_single_cell_gating_gradient_vanishes(self):
        model = make_model(dim=1, degree=2, n_splines=4, n_cells=1, seed=8)
        model.coeffs = np.array([1.0, 0.5, -0.2])
        x = np.linspace(0.1, 0.9, 20)
        grad = model.param_gradient(x, np.ones(20), np.ones((20, 1)))
        names = [name for name, _ in model.param_slices()]
        sizes = dict(model.param_slices())
        gate_part = grad[-sizes["gating"]:] if "gating" in names else np.zeros(0)
        np.testing.assert_allclose(gate_part, 0.0, atol=1e-13)

    @pytest.mark.parametrize("dim", [1, 2])
    def test_matches_finite_differences(self, dim):
        """Hand-derived parameter gradient vs central differences of the
        same scalar loss, excluding points near knot lines."""
        rng = np.random.default_rng(21)
        model = make_model(
            dim=dim, degree=2, n_splines=4, n_cells=3, seed=13, knot_jitter=0.2
        )
        model.coeffs = rng.normal(size=model.n_features)
        x = rng.uniform(0.05, 0.95, size=(50, dim))
        for layer, axis in ((model.knots_x, 0), (model.knots_y, 1))[: dim]:
            dist = np.min(np.abs(x[:, axis][:, None] - layer.knots[None, :]), axis=1)
            x = x[dist > 1e-3]
        w_y = rng.normal(size=x.shape[0])
        w_g = rng.normal(size=(x.shape[0], dim))

        def loss(vec):
            saved = model.get_param_vector()
            model.set_param_vector(vec)
            y, g = model.forward(x)
            val = np.dot(w_y, y) + np.sum(w_g * g)
            model.set_param_vector(saved)
            return val

        grad = model.param_gradient(x, w_y, w_g)
        theta = model.get_param_vector()
        step = 1e-6
        fd = np.empty_like(theta)
        for j in range(theta.size):
            dp, dm = theta.copy(), theta.copy()
            dp[j] += step
            dm[j] -= step
            fd[j] = (loss(dp) - loss(dm)) / (2 * step)
        scale = np.maximum(np.abs(fd), 1e-2 * np.max(np.abs(fd)))
        np.testing.assert_allclose(grad / scale, fd / scale, atol=1e-4)


class TestHessian:
    @pytest.mark.parametrize("dim", [1, 2])
    def test_hessian_matches_fd_of_gradient(self, dim):
        rng = np.random.default_rng(31)
        model = make_model(dim=dim, degree=3, n_splines=3, n_cells=2, seed=17, knot_jitter=0.2)
        model.coeffs = rng.normal(size=model.n_features)
        x = rng.uniform(0.1, 0.9, size=(40, dim))
        for layer, axis in ((model.knots_x, 0), (model.knots_y, 1))[: dim]:
            dist = np.min(np.abs(x[:, axis][:, None] - layer.knots[None, :]), axis=1)
            x = x[dist > 5e-3]
        _, _, hess = model.forward_with_hessian(x)
        step = 1e-6
        for axis in range(dim):
            dp, dm = x.copy(), x.copy()
            dp[:, axis] += step
            dm[:, axis] -= step
            fd = (model.forward(dp)[1] - model.forward(dm)[1]) / (2 * step)
            np.testing.assert_allclose(hess[:, :, axis], fd, rtol=1e-4, atol=1e-5)


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(77)
        for dim in (1, 2):
            model = make_model(
                dim=dim, degree=2, n_splines=3, n_cells=2, seed=19, knot_jitter=0.37
            )
            model.coeffs = rng.normal(size=model.n_features)
            path = tmp_path / f"model{dim}.json"
            model.save(path)
            loaded = PolySplineModel.load(path)
            np.testing.assert_array_equal(loaded.coeffs, model.coeffs)
            np.testing.assert_array_equal(loaded.knots_x.logits, model.knots_x.logits)
            np.testing.assert_array_equal(loaded.gating.logits, model.gating.logits)
            if dim == 2:
                np.testing.assert_array_equal(loaded.knots_y.logits, model.knots_y.logits)
            x = rng.uniform(0, 1, size=(20, dim))
            np.testing.assert_array_equal(loaded.forward(x)[0], model.forward(x)[0])

    def test_fixed_gating_roundtrip(self, tmp_path):
        layer = KnotLayer(np.zeros(3), trainable=False)
        model = PolySplineModel(
            knots_x=layer,
            gating=GatingWeights.from_matrix(np.eye(4)),
            poly=PolyBasis(0, 1),
            coeffs=np.arange(4.0),
        )
        path = tmp_path / "fixed.json"
        model.save(path)
        loaded = PolySplineModel.load(path)
        assert not loaded.gating.trainable
        assert not loaded.knots_x.trainable
        np.testing.assert_array_equal(loaded.gating.matrix, np.eye(4))
