"""LSGD solvers, sensitivities, and the training loops."""

import numpy as np
import pytest

from polyspline import SingularSystemError, make_model
from polyspline.problems import make_problem_1, make_problem_3
from polyspline.training import (
    Adam,
    TrainConfig,
    ls_sensitivity,
    lsgd_solve_regression,
    lsgd_solve_variational,
    train,
    train_regression,
    train_variational,
)


class TestRegressionSolve:
    def test_constant_column(self):
        """One constant column, targets 3: c = 3/(1 + reg/n)."""
        n, reg = 50, 1e-3
        phi = np.ones((n, 1))
        c = lsgd_solve_regression(phi, np.full(n, 3.0), reg)
        assert c[0] == pytest.approx(3.0 / (1.0 + reg / n), rel=1e-12)
        c = lsgd_solve_regression(phi, np.full(n, 3.0), 1e-10)
        assert c[0] == pytest.approx(3.0, abs=1e-9)

    def test_orthogonal_columns_give_projections(self):
        rng = np.random.default_rng(0)
        q, _ = np.linalg.qr(rng.normal(size=(40, 3)))
        y = rng.normal(size=40)
        c = lsgd_solve_regression(q, y, 1e-14)
        np.testing.assert_allclose(c, q.T @ y, atol=1e-10)

    def test_cubic_recovery_through_model_features(self):
        """Single-cell cubic model: the solve recovers exact samples of a
        cubic to 1e-9."""
        from tests.test_model import coeffs_for_polynomial

        rng = np.random.default_rng(1)
        model = make_model(dim=1, degree=3, n_splines=4, n_cells=1, seed=0)
        target_coeffs = coeffs_for_polynomial(model.poly, [0.5, -1.0, 2.0, 1.5])
        x = rng.uniform(0, 1, 200)
        phi = model.feature_map(x).values
        y = phi @ target_coeffs
        c = lsgd_solve_regression(phi, y, 1e-10)
        np.testing.assert_allclose(c, target_coeffs, atol=1e-9)

    def test_normal_equation_residual(self):
        rng = np.random.default_rng(2)
        phi = rng.normal(size=(100, 7))
        y = rng.normal(size=100)
        reg = 1e-8
        c = lsgd_solve_regression(phi, y, reg)
        resid = phi.T @ (phi @ c - y) + reg * c
        assert np.linalg.norm(resid) <= 1e-8 * np.linalg.norm(phi.T @ y)

    def test_singular_without_regularization(self):
        phi = np.ones((10, 2))  # rank 1
        with pytest.raises(SingularSystemError):
            lsgd_solve_regression(phi, np.ones(10), 0.0)
        c = lsgd_solve_regression(phi, np.ones(10), 1e-8)  # handled by reg
        assert np.all(np.isfinite(c))


class TestVariationalSolve:
    def test_identity_system(self):
        reg = 0.25
        c = lsgd_solve_variational(np.eye(3), np.array([1.0, 0.0, 0.0]), reg)
        np.testing.assert_allclose(c, [1.0 / (1.0 + reg), 0.0, 0.0], atol=1e-14)

    def test_residual_tolerance(self):
        rng = np.random.default_rng(3)
        m = rng.normal(size=(12, 12))
        A = m @ m.T + 0.1 * np.eye(12)
        b = rng.normal(size=12)
        c = lsgd_solve_variational(A, b, 0.0)
        assert np.linalg.norm(A @ c - b) <= 1e-10 * np.linalg.norm(b)

    def test_indefinite_falls_back_with_warning(self):
        A = np.diag([1.0, -1.0])
        b = np.array([1.0, 1.0])
        with pytest.warns(UserWarning, match="least squares"):
            c = lsgd_solve_variational(A, b, 0.0)
        np.testing.assert_allclose(c, [1.0, -1.0], atol=1e-10)

    def test_stiffness_plus_penalty_is_spd_over_random_models(self):
        """Cholesky succeeds for 50 random knot/gating configurations of
        the 1D Poisson system with beta = 1000.  n_cells stays at or below
        n_splines so the gate-times-expert features remain linearly
        independent; past that the system is only semi-definite and the
        LSGD regularizer covers it."""
        import scipy.linalg

        problem = make_problem_3(beta=1000.0)
        rng = np.random.default_rng(4)
        for _ in range(50):
            n_splines = int(rng.integers(3, 9))
            model = make_model(
                dim=1,
                degree=int(rng.integers(0, 3)),
                n_splines=n_splines,
                n_cells=int(rng.integers(1, min(n_splines, 4))),
                seed=int(rng.integers(1 << 30)),
                knot_jitter=0.5,
            )
            A, _, _ = problem.assemble(model)
            scipy.linalg.cho_factor(A)  # raises if not SPD


class TestLsSensitivity:
    def test_huge_regularizer_kills_gradient(self):
        """reg -> inf pins c at 0 and the loss stops depending on phi."""
        rng = np.random.default_rng(5)
        phi = rng.normal(size=(30, 4))
        y = rng.normal(size=30)
        c = lsgd_solve_regression(phi, y, 1e12)
        up = ls_sensitivity(phi, y, c, 1e12)
        assert np.max(np.abs(up)) < 1e-9

    def test_scalar_case_closed_form(self):
        """One column: c = phi.y/(phi.phi+reg); the hand-derived total
        derivative of the mean squared residual w.r.t. each phi_i."""
        rng = np.random.default_rng(6)
        phi = rng.normal(size=(20, 1))
        y = rng.normal(size=20)
        reg = 1e-3
        n = 20
        p = phi[:, 0]
        denom = p @ p + reg
        c = p @ y / denom
        r = p * c - y
        dc_dphi = (y * denom - (p @ y) * 2 * p) / denom**2
        expected = (2.0 / n) * (r * c + (r @ p) * dc_dphi)
        up = ls_sensitivity(phi, y, np.array([c]), reg)
        np.testing.assert_allclose(up[:, 0], expected, rtol=1e-9)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        phi = rng.normal(size=(15, 3))
        y = rng.normal(size=15)
        reg = 1e-4

        def loss(p):
            c = lsgd_solve_regression(p, y, reg)
            return np.mean((p @ c - y) ** 2)

        up = ls_sensitivity(phi, y, lsgd_solve_regression(phi, y, reg), reg)
        step = 1e-7
        for i in range(15):
            for j in range(3):
                dp, dm = phi.copy(), phi.copy()
                dp[i, j] += step
                dm[i, j] -= step
                fd = (loss(dp) - loss(dm)) / (2 * step)
                assert up[i, j] == pytest.approx(fd, rel=1e-4, abs=1e-10)


class TestTrainConfig:
    def test_schedule_lookup(self):
        cfg = TrainConfig(learning_rate=[(0, 0.01), (500, 0.005)], epochs=1000)
        assert cfg.rate_at(0) == 0.01
        assert cfg.rate_at(499) == 0.01
        assert cfg.rate_at(500) == 0.005
        assert cfg.rate_at(999) == 0.005

    def test_invalid_configs_rejected(self):
        with pytest.raises(Exception):
            TrainConfig(ls_regularizer=0.0)
        with pytest.raises(Exception):
            TrainConfig(learning_rate=-1.0)
        with pytest.raises(Exception):
            TrainConfig(lsgd_mode="both")


class TestAdam:
    def test_first_step_is_signed_lr(self):
        adam = Adam(3)
        theta = adam.step(np.zeros(3), np.array([1.0, -2.0, 0.5]), 0.1)
        np.testing.assert_allclose(theta, [-0.1, 0.1, -0.1], atol=1e-7)

    def test_reset_clears_state(self):
        adam = Adam(2)
        adam.step(np.zeros(2), np.ones(2), 0.1)
        adam.reset()
        assert adam.t == 0 and np.all(adam.m == 0) and np.all(adam.v == 0)


class TestTrainingLoops:
    def make_data(self, seed=1234):
        return make_problem_1().sample(seed)

    def test_layer_mode_manifold_property(self):
        """At every epoch the layer-mode coefficients already minimize the
        regularized problem: re-solving changes the loss by <= 1e-12."""
        x_tr, y_tr, _, _ = self.make_data()
        model = make_model(dim=1, degree=2, n_splines=6, n_cells=3, seed=0)
        cfg = TrainConfig(epochs=5, lsgd_mode="layer", ls_regularizer=1e-10)
        train_regression(model, x_tr, y_tr, cfg)
        phi = model.feature_map(x_tr).values
        loss_before = np.mean((phi @ model.coeffs - y_tr) ** 2)
        c2 = lsgd_solve_regression(phi, y_tr, cfg.ls_regularizer)
        loss_after = np.mean((phi @ c2 - y_tr) ** 2)
        assert abs(loss_after - loss_before) <= 1e-12 * max(loss_before, 1e-30)

    def test_callback_solve_never_increases_regularized_loss(self):
        x_tr, y_tr, _, _ = self.make_data()
        model = make_model(dim=1, degree=1, n_splines=8, n_cells=4, seed=1)
        cfg = TrainConfig(epochs=1, lsgd_mode="callback", ls_regularizer=1e-10)
        train_regression(model, x_tr, y_tr, cfg)  # leaves solved state
        rng = np.random.default_rng(8)
        for _ in range(5):
            c_rand = model.coeffs + 0.1 * rng.normal(size=model.n_features)
            phi = model.feature_map(x_tr).values

            def reg_loss(c):
                return np.sum((phi @ c - y_tr) ** 2) + cfg.ls_regularizer * np.sum(c * c)

            assert reg_loss(model.coeffs) <= reg_loss(c_rand) + 1e-12

    def test_traces_are_bit_identical_across_runs(self):
        x_tr, y_tr, x_va, y_va = self.make_data()
        traces = []
        for _ in range(2):
            model = make_model(dim=1, degree=2, n_splines=4, n_cells=2, seed=3)
            cfg = TrainConfig(epochs=8, lsgd_mode="callback")
            res = train_regression(model, x_tr, y_tr, cfg, x_va, y_va)
            traces.append([row[:4] for row in res.trace])  # drop wall time
        assert traces[0] == traces[1]

    def test_layer_end_to_end_gradient_matches_fd(self):
        """Full layer-mode loss gradient vs central differences at 10
        random logits."""
        rng = np.random.default_rng(9)
        x = rng.uniform(0.02, 0.98, 80)
        y_t = np.sin(2 * np.pi * x)
        model = make_model(dim=1, degree=2, n_splines=4, n_cells=2, seed=5, knot_jitter=0.2)
        reg = 1e-8
        from polyspline.training import ls_sensitivity as sens

        ev = model._evaluate(x)
        phi = np.einsum("na,nb->nab", ev.P, ev.V).reshape(x.size, -1)
        c = lsgd_solve_regression(phi, y_t, reg)
        model.coeffs = c
        up = sens(phi, y_t, c, reg)
        up_P = np.einsum(
            "nab,nb->na", up.reshape(x.size, model.n_cells, model.poly.n_terms), ev.V
        )
        gtx, gty, gw = model.backprop_upstreams(ev, up_P, None)
        grad = model._pack_param_gradient(gtx, gty, gw)

        def loss_at(theta):
            saved = model.get_param_vector()
            model.set_param_vector(theta)
            p = model.feature_map(x).values
            cc = lsgd_solve_regression(p, y_t, reg)
            out = np.mean((p @ cc - y_t) ** 2)
            model.set_param_vector(saved)
            return out

        theta = model.get_param_vector()
        step = 1e-6
        idx = rng.choice(theta.size, size=10, replace=False)
        for j in idx:
            dp, dm = theta.copy(), theta.copy()
            dp[j] += step
            dm[j] -= step
            fd = (loss_at(dp) - loss_at(dm)) / (2 * step)
            assert grad[j] == pytest.approx(fd, rel=1e-4, abs=1e-9)

    def test_polynomial_reduction_equivalence(self):
        """With one cell the first LSGD solve already is the best
        polynomial fit: train MSE matches the direct least-squares fit to
        1e-10 relative."""
        from polyspline.oracles import best_poly_fit

        x_tr, y_tr, _, _ = self.make_data()
        for degree in (1, 3, 5):
            model = make_model(dim=1, degree=degree, n_splines=4, n_cells=1, seed=2)
            cfg = TrainConfig(epochs=0, lsgd_mode="callback", ls_regularizer=1e-10)
            res = train_regression(model, x_tr, y_tr, cfg)
            oracle = best_poly_fit(x_tr, y_tr, degree).mse
            assert abs(res.final_train_mse - oracle) <= 1e-10 * oracle

    def test_spline_reduction_equivalence(self):
        """B=0 with identity gating and frozen uniform knots collapses to
        the uniform-knot linear-spline least-squares fit."""
        from polyspline.oracles import uniform_spline_fit

        x_tr, y_tr, _, _ = self.make_data()
        for n in (4, 16):
            model = make_model(
                dim=1, degree=0, n_splines=n, n_cells=n + 1,
                gating_init="identity", knots_trainable=False, seed=0,
            )
            assert model.n_params == 0
            cfg = TrainConfig(epochs=0, lsgd_mode="callback", ls_regularizer=1e-12)
            res = train_regression(model, x_tr, y_tr, cfg)
            oracle = uniform_spline_fit(x_tr, y_tr, n).mse
            assert abs(res.final_train_mse - oracle) <= 1e-10 * oracle

    def test_variational_training_recovers_poisson_solution(self):
        """B=1 Poisson run reaches the known penalized optimum: relative
        L2 error below 0.01 after 100 epochs."""
        problem = make_problem_3(beta=1000.0)
        model = make_model(dim=1, degree=1, n_splines=5, n_cells=3, seed=0)
        cfg = TrainConfig(
            epochs=100, learning_rate=5e-3, ls_regularizer=1e-8, lsgd_mode="layer"
        )
        train_variational(model, problem, cfg, trace_l2=False)
        assert problem.l2_reported(model) <= 0.01

    def test_minibatch_option_trains_and_stays_deterministic(self):
        """Mini-batching is off by default; when enabled the run is still
        seeded and reproducible."""
        x_tr, y_tr, _, _ = self.make_data()
        finals = []
        for _ in range(2):
            model = make_model(dim=1, degree=1, n_splines=4, n_cells=2, seed=5)
            cfg = TrainConfig(epochs=4, batch_size=128, lsgd_mode="callback", seed=5)
            res = train_regression(model, x_tr, y_tr, cfg)
            finals.append(res.final_train_mse)
        assert finals[0] == finals[1]
        assert np.isfinite(finals[0])

    def test_condition_warning_surfaces_in_training_log(self):
        """A rank-deficient feature set (n_cells above the independent-
        feature bound) trips the condition warning in layer mode."""
        x_tr, y_tr, _, _ = self.make_data()
        model = make_model(dim=1, degree=3, n_splines=2, n_cells=3, seed=0)
        cfg = TrainConfig(epochs=1, lsgd_mode="layer", ls_regularizer=1e-14)
        res = train_regression(model, x_tr, y_tr, cfg)
        assert any("ill-conditioned" in w for w in res.warnings)

    def test_dispatch_and_trace_csv(self, tmp_path):
        problem = make_problem_1()
        model = make_model(dim=1, degree=1, n_splines=4, n_cells=2, seed=0)
        cfg = TrainConfig(epochs=3)
        res = train(model, problem, cfg)
        assert len(res.trace) == 3
        assert np.isfinite(res.final_val_mse)
        path = tmp_path / "trace.csv"
        res.trace_to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# adam_beta1=0.9")
        assert lines[1] == "epoch,loss,mse_or_energy,l2_error,wall_time_ms"
        assert len(lines) == 2 + 3

    def test_nan_loss_aborts_with_stage(self):
        from polyspline import TrainingDivergenceError

        x = np.linspace(0.01, 0.99, 20)
        y = np.full(20, np.nan)
        model = make_model(dim=1, degree=1, n_splines=3, n_cells=2, seed=0)
        cfg = TrainConfig(epochs=2, lsgd_mode="layer")
        with pytest.raises(TrainingDivergenceError, match="stage 'targets' at epoch 0"):
            train_regression(model, x, y, cfg)
