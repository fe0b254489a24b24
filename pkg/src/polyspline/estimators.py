"""sklearn-style estimators wrapping the functional core.

``PolySplineRegressor`` exposes the regression workflow through the usual
fit/predict/get_params surface so it composes with pipelines, grid search
and cross-validation; ``VariationalSolver`` gives the Ritz problems the
same shape (its fit ignores X/y and minimizes the problem's energy).
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .errors import InvalidInputError
from .model import make_model
from .problems import get_problem
from .training import TrainConfig, train_regression, train_variational
from .validation import check_points, check_targets


class PolySplineRegressor(BaseEstimator, RegressorMixin):
    """Free-knot polynomial-spline mixture regressor on the unit box.

    Parameters mirror the training configuration: ``degree`` is the expert
    polynomial degree, ``n_splines`` the knot interval count per axis,
    ``n_cells`` the number of partition-of-unity cells, and ``lsgd_mode``
    selects whether the expert-coefficient solve runs between epochs
    ('callback') or inside every loss evaluation ('layer').
    """

    def __init__(
        self,
        degree=1,
        n_splines=8,
        n_cells=4,
        epochs=500,
        learning_rate=5e-3,
        ls_regularizer=1e-10,
        lsgd_mode="callback",
        gating_init="random",
        knot_jitter=0.0,
        optimizer_reset_every=0,
        batch_size=0,
        seed=0,
    ):
        self.degree = degree
        self.n_splines = n_splines
        self.n_cells = n_cells
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.ls_regularizer = ls_regularizer
        self.lsgd_mode = lsgd_mode
        self.gating_init = gating_init
        self.knot_jitter = knot_jitter
        self.optimizer_reset_every = optimizer_reset_every
        self.batch_size = batch_size
        self.seed = seed

    def _config(self):
        return TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            ls_regularizer=self.ls_regularizer,
            lsgd_mode=self.lsgd_mode,
            seed=self.seed,
            optimizer_reset_every=self.optimizer_reset_every,
            batch_size=self.batch_size,
        )

    def fit(self, X, y):
        X = check_points(X)
        y = check_targets(y, X.shape[0])
        dim = X.shape[1]
        self.model_ = make_model(
            dim=dim,
            degree=self.degree,
            n_splines=self.n_splines,
            n_cells=self.n_cells,
            seed=self.seed,
            gating_init=self.gating_init,
            knot_jitter=self.knot_jitter,
        )
        result = train_regression(self.model_, X, y, self._config())
        self.n_features_in_ = dim
        self.trace_ = result.trace
        self.train_mse_ = result.final_train_mse
        return self

    def predict(self, X):
        if not hasattr(self, "model_"):
            raise InvalidInputError("regressor is not fitted; call fit first")
        X = check_points(X, dim=self.n_features_in_)
        return self.model_.forward(X)[0]


class VariationalSolver(BaseEstimator):
    """Ritz-energy solver with the estimator surface.

    ``fit`` takes no data (X and y are accepted and ignored so the class
    slots into sklearn tooling): it builds the named problem, trains with
    LSGD, and records the solution model plus its error norms when the
    problem has a known exact solution.
    """

    def __init__(
        self,
        problem="p3-poisson1d",
        degree=1,
        n_splines=5,
        n_cells=3,
        epochs=100,
        learning_rate=5e-3,
        ls_regularizer=1e-8,
        penalty=1000.0,
        lsgd_mode="layer",
        optimizer_reset_every=0,
        gating_init="random",
        knot_jitter=0.0,
        seed=0,
    ):
        self.problem = problem
        self.degree = degree
        self.n_splines = n_splines
        self.n_cells = n_cells
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.ls_regularizer = ls_regularizer
        self.penalty = penalty
        self.lsgd_mode = lsgd_mode
        self.optimizer_reset_every = optimizer_reset_every
        self.gating_init = gating_init
        self.knot_jitter = knot_jitter
        self.seed = seed

    def fit(self, X=None, y=None):
        if not hasattr(get_problem(self.problem), "assemble"):
            raise InvalidInputError(
                f"'{self.problem}' is a regression problem; use PolySplineRegressor"
            )
        problem = get_problem(self.problem, beta=self.penalty)
        self.problem_ = problem
        self.model_ = make_model(
            dim=problem.dim,
            degree=self.degree,
            n_splines=self.n_splines,
            n_cells=self.n_cells,
            seed=self.seed,
            gating_init=self.gating_init,
            knot_jitter=self.knot_jitter,
        )
        cfg = TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            ls_regularizer=self.ls_regularizer,
            penalty=self.penalty,
            lsgd_mode=self.lsgd_mode,
            seed=self.seed,
            optimizer_reset_every=self.optimizer_reset_every,
        )
        result = train_variational(self.model_, problem, cfg, trace_l2=False)
        self.trace_ = result.trace
        self.energy_ = result.trace[-1][1] if result.trace else problem.energy(self.model_)
        self.l2_error_ = problem.l2_error(self.model_)
        self.l2_reported_ = problem.l2_reported(self.model_)
        return self

    def predict(self, X):
        if not hasattr(self, "model_"):
            raise InvalidInputError("solver is not fitted; call fit first")
        X = check_points(X, dim=self.model_.dim)
        return self.model_.forward(X)[0]
