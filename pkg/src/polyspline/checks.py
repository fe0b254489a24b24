"""Always-on invariant suite behind ``polyspline check``.

Each check raises on failure; the CLI and the acceptance tests run the
same list.  The suite is meant to stay under a minute.
"""

import numpy as np

from .gating import GatingWeights, pou_values
from .knots import eval_b1_basis, knots_from_logits
from .model import PolySplineModel, make_model
from .problems import make_problem_3, make_problem_4
from .quadrature import integrate_functional, rule_on_intervals
from .quadrature import _closed_form_cell_integrals
from .training import TrainConfig, lsgd_solve_regression, train_regression


def _random_model(rng, dim=1, degree=None, n_splines=None, n_cells=None):
    degree = int(rng.integers(0, 4)) if degree is None else degree
    n_splines = int(rng.integers(2, 9)) if n_splines is None else n_splines
    n_cells = int(rng.integers(1, 4)) if n_cells is None else n_cells
    model = make_model(
        dim=dim, degree=degree, n_splines=n_splines, n_cells=n_cells,
        seed=int(rng.integers(1 << 30)), knot_jitter=0.5,
    )
    model.coeffs = rng.normal(size=model.n_features)
    return model


def check_knot_ordering():
    rng = np.random.default_rng(101)
    for _ in range(1000):
        t = knots_from_logits(rng.uniform(-10, 10, size=int(rng.integers(1, 16))))
        assert t[0] == 0.0 and t[-1] == 1.0 and np.all(np.diff(t) > 0)


def check_pou_row_sums():
    rng = np.random.default_rng(102)
    for _ in range(1000):
        n_basis = int(rng.integers(2, 10))
        t = knots_from_logits(rng.normal(size=n_basis - 1))
        ev = eval_b1_basis(t, rng.uniform(0, 1, 4))
        assert np.max(np.abs(ev.values.sum(axis=1) - 1.0)) <= 1e-12
        g = GatingWeights.random(int(rng.integers(1, n_basis + 1)), n_basis, rng=rng)
        cells = pou_values(g, ev.values)
        assert np.max(np.abs(cells.sum(axis=1) - 1.0)) <= 1e-12


def check_gauss_exactness():
    rng = np.random.default_rng(103)
    knots = np.sort(np.concatenate([[0, 1], rng.uniform(0.05, 0.95, 4)]))
    for n_q in (1, 2, 4, 7):
        rule = rule_on_intervals(knots, n_q)
        for k in range(2 * n_q):
            contrib = rule.weights * rule.points**k
            for cell in range(1, len(knots)):
                got = contrib[rule.cell == cell].sum()
                want = (knots[cell] ** (k + 1) - knots[cell - 1] ** (k + 1)) / (k + 1)
                assert abs(got - want) <= 1e-13


def check_closed_form_vs_quadrature():
    rng = np.random.default_rng(104)
    for _ in range(100):
        model = _random_model(rng)
        for kind in ("y", "y2", "grad2"):
            cf = _closed_form_cell_integrals(model, kind)
            q = integrate_functional(model, kind)
            assert abs(cf - q) <= 1e-12 * max(1.0, abs(cf))


def check_parameter_gradients():
    rng = np.random.default_rng(105)
    for dim in (1, 2):
        model = make_model(dim=dim, degree=2, n_splines=4, n_cells=3, seed=7, knot_jitter=0.2)
        model.coeffs = rng.normal(size=model.n_features)
        x = rng.uniform(0.05, 0.95, size=(40, dim))
        for layer, axis in ((model.knots_x, 0), (model.knots_y, 1))[:dim]:
            dist = np.min(np.abs(x[:, axis][:, None] - layer.knots[None, :]), axis=1)
            x = x[dist > 1e-3]
        w_y = rng.normal(size=x.shape[0])
        w_g = rng.normal(size=(x.shape[0], dim))
        grad = model.param_gradient(x, w_y, w_g)
        theta = model.get_param_vector()
        step = 1e-6

        def loss(vec):
            model.set_param_vector(vec)
            y, g = model.forward(x)
            out = np.dot(w_y, y) + np.sum(w_g * g)
            model.set_param_vector(theta)
            return out

        for j in rng.choice(theta.size, size=min(10, theta.size), replace=False):
            dp, dm = theta.copy(), theta.copy()
            dp[j] += step
            dm[j] -= step
            fd = (loss(dp) - loss(dm)) / (2 * step)
            scale = max(abs(fd), 1e-2)
            assert abs(grad[j] - fd) / scale <= 1e-4


def check_variational_gradient():
    rng = np.random.default_rng(106)
    for dim, mk in ((1, make_problem_3), (2, make_problem_4)):
        problem = mk(beta=7.0)
        model = make_model(dim=dim, degree=2, n_splines=3, n_cells=2, seed=5, knot_jitter=0.3)
        model.coeffs = rng.normal(size=model.n_features)
        _, grad = problem.energy_and_param_gradient(model)
        theta = model.get_param_vector()
        step = 1e-6
        for j in rng.choice(theta.size, size=min(8, theta.size), replace=False):
            dp, dm = theta.copy(), theta.copy()
            dp[j] += step
            dm[j] -= step
            model.set_param_vector(dp)
            ep = problem.energy(model)
            model.set_param_vector(dm)
            em = problem.energy(model)
            model.set_param_vector(theta)
            fd = (ep - em) / (2 * step)
            assert abs(grad[j] - fd) / max(abs(fd), 1e-6) <= 1e-4


def check_energy_weak_form_consistency():
    rng = np.random.default_rng(107)
    for dim, mk in ((1, make_problem_3), (2, make_problem_4)):
        problem = mk(beta=37.0)
        for _ in range(5):
            model = _random_model(rng, dim=dim, degree=int(rng.integers(0, 3)), n_splines=4, n_cells=2)
            A, b, const = problem.assemble(model)
            quad = 0.5 * model.coeffs @ A @ model.coeffs - b @ model.coeffs + const
            direct = problem.energy(model)
            assert abs(direct - quad) <= 1e-10 * max(1.0, abs(quad))


def check_system_positive_definite():
    # n_cells <= n_splines keeps the gate-times-expert features linearly
    # independent (n_cells*(B+1) <= dim of C0 piecewise polynomials);
    # beyond that A is only positive semi-definite and the LSGD
    # regularizer is what handles it.
    import scipy.linalg

    problem = make_problem_3(beta=1000.0)
    rng = np.random.default_rng(108)
    for _ in range(50):
        n_splines = int(rng.integers(3, 9))
        model = _random_model(
            rng, n_splines=n_splines, n_cells=int(rng.integers(1, min(n_splines, 4)))
        )
        A, _, _ = problem.assemble(model)
        scipy.linalg.cho_factor(A)


def check_checkpoint_roundtrip():
    import os
    import tempfile

    rng = np.random.default_rng(109)
    model = make_model(dim=2, degree=1, n_splines=3, n_cells=2, seed=3, knot_jitter=0.4)
    model.coeffs = rng.normal(size=model.n_features)
    fd, path = tempfile.mkstemp(suffix=".json")
    os.close(fd)
    try:
        model.save(path)
        loaded = PolySplineModel.load(path)
        assert np.array_equal(loaded.coeffs, model.coeffs)
        assert np.array_equal(loaded.knots_x.logits, model.knots_x.logits)
        assert np.array_equal(loaded.knots_y.logits, model.knots_y.logits)
        assert np.array_equal(loaded.gating.logits, model.gating.logits)
        x = rng.uniform(0, 1, size=(10, 2))
        assert np.array_equal(loaded.forward(x)[0], model.forward(x)[0])
    finally:
        os.unlink(path)


def check_deterministic_traces():
    rng = np.random.default_rng(110)
    x = rng.uniform(0, 1, 200)
    y = np.sin(2 * np.pi * x)
    traces = []
    for _ in range(2):
        model = make_model(dim=1, degree=1, n_splines=4, n_cells=2, seed=11)
        cfg = TrainConfig(epochs=5)
        res = train_regression(model, x, y, cfg)
        traces.append([row[:4] for row in res.trace])
    assert traces[0] == traces[1]


def check_column_stochastic_after_steps():
    rng = np.random.default_rng(111)
    x = rng.uniform(0, 1, 200)
    y = np.sin(2 * np.pi * x)
    model = make_model(dim=1, degree=1, n_splines=5, n_cells=3, seed=4)
    train_regression(model, x, y, TrainConfig(epochs=10))
    W = model.gating.matrix
    assert np.max(np.abs(W.sum(axis=0) - 1.0)) <= 1e-12 and np.all(W >= 0)


def check_layer_mode_regression_gradient():
    from .training import ls_sensitivity

    rng = np.random.default_rng(112)
    x = rng.uniform(0.02, 0.98, 60)
    y_t = np.sin(2 * np.pi * x)
    model = make_model(dim=1, degree=2, n_splines=4, n_cells=2, seed=5, knot_jitter=0.2)
    reg = 1e-8
    ev = model._evaluate(x)
    phi = np.einsum("na,nb->nab", ev.P, ev.V).reshape(x.size, -1)
    c = lsgd_solve_regression(phi, y_t, reg)
    model.coeffs = c
    up = ls_sensitivity(phi, y_t, c, reg)
    up_P = np.einsum("nab,nb->na", up.reshape(x.size, model.n_cells, model.poly.n_terms), ev.V)
    gtx, gty, gw = model.backprop_upstreams(ev, up_P, None)
    grad = model._pack_param_gradient(gtx, gty, gw)
    theta = model.get_param_vector()
    step = 1e-6

    def loss_at(vec):
        model.set_param_vector(vec)
        p = model.feature_map(x).values
        cc = lsgd_solve_regression(p, y_t, reg)
        out = float(np.mean((p @ cc - y_t) ** 2))
        model.set_param_vector(theta)
        return out

    for j in rng.choice(theta.size, size=10, replace=False):
        dp, dm = theta.copy(), theta.copy()
        dp[j] += step
        dm[j] -= step
        fd = (loss_at(dp) - loss_at(dm)) / (2 * step)
        assert abs(grad[j] - fd) / max(abs(fd), 1e-9) <= 1e-4


ALL_CHECKS = [
    ("knot strict ordering (1000 random logits)", check_knot_ordering),
    ("POU row sums = 1 (1e-12)", check_pou_row_sums),
    ("Gauss exactness to degree 2n-1 (1e-13)", check_gauss_exactness),
    ("closed form vs quadrature (1e-12 rel)", check_closed_form_vs_quadrature),
    ("parameter gradients vs finite differences (1e-4)", check_parameter_gradients),
    ("variational gradient vs finite differences (1e-4)", check_variational_gradient),
    ("layer-mode regression gradient vs finite differences (1e-4)", check_layer_mode_regression_gradient),
    ("energy equals weak form (1e-10 rel)", check_energy_weak_form_consistency),
    ("stiffness + penalty SPD over 50 random models", check_system_positive_definite),
    ("checkpoint round-trip bit-exact", check_checkpoint_roundtrip),
    ("deterministic traces under fixed seed", check_deterministic_traces),
    ("column stochasticity after optimizer steps", check_column_stochastic_after_steps),
]
