"""Hybrid least-squares / gradient-descent (LSGD) training.

Expert coefficients enter the model linearly, so they are never touched
by the first-order optimizer: a regularized least-squares (regression) or
symmetric-positive-definite (variational) solve pins them while Adam
updates the knot and gating logits.

Two couplings are provided.  In *callback* mode the solve runs between
epochs, so gradients see the coefficients from the previous solve.  In
*layer* mode the solve is part of every loss evaluation and the gradient
includes the solve's sensitivity.  That sensitivity comes from the
implicit function theorem on the regularized normal equations (never
from differentiating a factorization): for the quadratic variational
energies it reduces to a polarization identity, two extra fixed-
coefficient gradient evaluations at c +/- s with s = reg * (A + reg I)^-1 c.
"""

import csv
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import InvalidInputError, SingularSystemError, TrainingDivergenceError
from .problems import RegressionProblem, RitzProblem

COND_WARNING_THRESHOLD = 1e12


@dataclass
class TrainConfig:
    """Hyperparameters for one training run.

    ``learning_rate`` is a float or a piecewise-constant schedule given as
    (start_epoch, rate) pairs.  ``batch_size=None`` runs full-batch
    gradient descent (the default everywhere).  ``optimizer_reset_every``
    reinitializes the Adam moments periodically.
    """

    epochs: int = 500
    learning_rate: object = 5e-3
    ls_regularizer: float = 1e-10
    penalty: float = 1000.0
    lsgd_mode: str = "callback"
    seed: int = 0
    data_seed: int = 1234
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    optimizer_reset_every: int = 0
    batch_size: int = 0  # 0 = full batch

    def __post_init__(self):
        if self.ls_regularizer <= 0:
            raise InvalidInputError("ls_regularizer must be positive")
        if self.lsgd_mode not in ("layer", "callback"):
            raise InvalidInputError("lsgd_mode must be 'layer' or 'callback'")
        sched = self._schedule()
        if any(rate <= 0 for _, rate in sched):
            raise InvalidInputError("learning rates must be positive")

    def _schedule(self):
        if np.isscalar(self.learning_rate):
            return [(0, float(self.learning_rate))]
        return sorted((int(e), float(r)) for e, r in self.learning_rate)

    def rate_at(self, epoch):
        rate = None
        for start, r in self._schedule():
            if epoch >= start:
                rate = r
        return rate if rate is not None else self._schedule()[0][1]


class Adam:
    def __init__(self, size, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.size = size
        self.reset()

    def reset(self):
        self.m = np.zeros(self.size)
        self.v = np.zeros(self.size)
        self.t = 0

    def step(self, theta, grad, lr):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return theta - lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ------------------------------------------------------------------ solvers
def _spd_solve(M, rhs, context):
    """Cholesky solve with a least-squares fallback and a cheap condition
    estimate from the factor diagonal.  Returns (x, factor, cond, fellback)."""
    try:
        factor = scipy.linalg.cho_factor(M, lower=True)
        diag = np.abs(np.diag(factor[0]))
        cond = (diag.max() / diag.min()) ** 2
        return scipy.linalg.cho_solve(factor, rhs), factor, cond, False
    except scipy.linalg.LinAlgError:
        warnings.warn(f"{context}: Cholesky failed, falling back to least squares")
        x, *_ = np.linalg.lstsq(M, rhs, rcond=None)
        return x, None, np.inf, True


def lsgd_solve_regression(features, targets, ls_reg=0.0):
    """c = argmin ||targets - features c||^2 + ls_reg ||c||^2.

    Solved through the regularized normal equations with a Cholesky
    factorization.  With ``ls_reg = 0`` a singular Gram matrix raises.
    """
    features = np.asarray(features, dtype=float)
    targets = np.asarray(targets, dtype=float)
    gram = features.T @ features
    rhs = features.T @ targets
    if ls_reg:
        gram[np.diag_indices_from(gram)] += ls_reg
        c, *_ = _spd_solve(gram, rhs, "regression solve")
        return c
    try:
        factor = scipy.linalg.cho_factor(gram, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise SingularSystemError(
            "singular normal equations with ls_reg = 0; pass a positive regularizer"
        ) from exc
    return scipy.linalg.cho_solve(factor, rhs)


def lsgd_solve_variational(A, b, ls_reg=0.0):
    """Solve (A + ls_reg I) c = b for a symmetric A via Cholesky.

    Falls back to a least-squares solve with a warning if the shifted
    matrix is not numerically positive definite.
    """
    A = np.asarray(A, dtype=float)
    M = A if not ls_reg else A + ls_reg * np.eye(A.shape[0])
    c, _, _, _ = _spd_solve(M, np.asarray(b, dtype=float), "variational solve")
    return c


def ls_sensitivity(features, targets, coeffs, ls_reg):
    """d(loss)/d(features) for the layer-mode regression loss.

    loss = mean((features @ c(features) - targets)^2) with c defined by
    the regularized normal equations.  Implicit differentiation gives

        dloss = (2/n) [ r^T dPhi (c - s) - (Phi s)^T dPhi c ],
        s = (Phi^T Phi + reg I)^-1 Phi^T r,

    which this returns as a dense (n, K) upstream matrix.
    """
    features = np.asarray(features, dtype=float)
    n = features.shape[0]
    r = features @ coeffs - np.asarray(targets, dtype=float)
    gram = features.T @ features
    gram[np.diag_indices_from(gram)] += ls_reg
    s, *_ = _spd_solve(gram, features.T @ r, "ls sensitivity")
    return (2.0 / n) * (np.outer(r, coeffs - s) - np.outer(features @ s, coeffs))


# -------------------------------------------------------------------- trace
@dataclass
class TrainResult:
    model: object
    trace: list
    config: TrainConfig
    warnings: list = field(default_factory=list)
    final_train_mse: float = np.nan
    final_val_mse: float = np.nan

    def trace_to_csv(self, path):
        """CSV trace; '#' header lines record the optimizer settings."""
        cfg = self.config
        with open(path, "w", newline="") as fh:
            fh.write(
                f"# adam_beta1={cfg.adam_beta1} adam_beta2={cfg.adam_beta2} "
                f"adam_eps={cfg.adam_eps} lsgd_mode={cfg.lsgd_mode} "
                f"ls_regularizer={cfg.ls_regularizer} seed={cfg.seed}\n"
            )
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss", "mse_or_energy", "l2_error", "wall_time_ms"])
            for row in self.trace:
                writer.writerow(row)


def _check_finite(value, stage, epoch):
    arr = np.asarray(value)
    if not np.all(np.isfinite(arr)):
        raise TrainingDivergenceError(stage, epoch)


# --------------------------------------------------------------- regression
def train_regression(model, x_train, y_train, config, x_val=None, y_val=None):
    """LSGD training of the mean-squared-error regression loss."""
    x_train = np.asarray(x_train, dtype=float)
    y_train = np.asarray(y_train, dtype=float)
    n = y_train.size
    adam = Adam(model.n_params, config.adam_beta1, config.adam_beta2, config.adam_eps)
    theta = model.get_param_vector()
    rng = np.random.default_rng(config.seed)
    trace = []
    run_warnings = []
    t0 = time.perf_counter()

    def features_at(x):
        return model.feature_map(x).values

    def solve_now(x, y):
        phi = features_at(x)
        model.coeffs = lsgd_solve_regression(phi, y, config.ls_regularizer)
        return phi

    def batches():
        if not config.batch_size or config.batch_size >= n:
            yield x_train, y_train
            return
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            sel = order[start : start + config.batch_size]
            yield x_train[sel], y_train[sel]

    if config.lsgd_mode == "callback":
        solve_now(x_train, y_train)

    for epoch in range(config.epochs):
        if config.optimizer_reset_every and epoch and epoch % config.optimizer_reset_every == 0:
            adam.reset()
        lr = config.rate_at(epoch)
        for xb, yb in batches():
            _check_finite(yb, "targets", epoch)
            if config.lsgd_mode == "layer":
                ev = model._evaluate(xb)
                phi = (ev.P[:, :, None] * ev.V[:, None, :]).reshape(xb.shape[0], -1)
                _check_finite(phi, "features", epoch)
                gram = phi.T @ phi
                gram[np.diag_indices_from(gram)] += config.ls_regularizer
                c, factor, cond, fellback = _spd_solve(gram, phi.T @ yb, "layer solve")
                if cond > COND_WARNING_THRESHOLD and not run_warnings:
                    run_warnings.append(f"ill-conditioned LS system (cond~{cond:.1e})")
                model.coeffs = c
                resid = phi @ c - yb
                loss = float(np.mean(resid**2))
                _check_finite(loss, "layer loss", epoch)
                # solve sensitivity, reusing the factorization
                if factor is not None:
                    s = scipy.linalg.cho_solve(factor, phi.T @ resid)
                else:
                    s, *_ = np.linalg.lstsq(gram, phi.T @ resid, rcond=None)
                upstream = (2.0 / yb.size) * (
                    np.outer(resid, c - s) - np.outer(phi @ s, c)
                )
                up_P = np.einsum(
                    "nab,nb->na",
                    upstream.reshape(xb.shape[0], model.n_cells, model.poly.n_terms),
                    ev.V,
                    optimize=True,
                )
                gtx, gty, gw = model.backprop_upstreams(ev, up_P, None)
                grad = model._pack_param_gradient(gtx, gty, gw)
            else:
                ev = model._evaluate(xb)
                y_hat = np.sum(ev.P * ev.E, axis=1)
                resid = y_hat - yb
                loss = float(np.mean(resid**2))
                _check_finite(loss, "callback loss", epoch)
                up_P = (2.0 / yb.size) * resid[:, None] * ev.E
                gtx, gty, gw = model.backprop_upstreams(ev, up_P, None)
                grad = model._pack_param_gradient(gtx, gty, gw)
            _check_finite(grad, "gradient", epoch)
            theta = adam.step(theta, grad, lr)
            model.set_param_vector(theta)
        if config.lsgd_mode == "callback":
            phi = solve_now(x_train, y_train)
            loss = float(np.mean((phi @ model.coeffs - y_train) ** 2))
        elapsed = (time.perf_counter() - t0) * 1000.0
        trace.append((epoch, loss, loss, np.nan, elapsed))

    phi = solve_now(x_train, y_train)
    train_mse = float(np.mean((phi @ model.coeffs - y_train) ** 2))
    val_mse = np.nan
    if x_val is not None:
        pred = features_at(np.asarray(x_val, dtype=float)) @ model.coeffs
        val_mse = float(np.mean((pred - np.asarray(y_val)) ** 2))
    return TrainResult(
        model=model,
        trace=trace,
        config=config,
        warnings=run_warnings,
        final_train_mse=train_mse,
        final_val_mse=val_mse,
    )


# -------------------------------------------------------------- variational
def train_variational(model, problem, config, trace_l2=True):
    """LSGD training of a quadratic Ritz energy."""
    adam = Adam(model.n_params, config.adam_beta1, config.adam_beta2, config.adam_eps)
    theta = model.get_param_vector()
    trace = []
    run_warnings = []
    t0 = time.perf_counter()

    def solve_now():
        A, b, const = problem.assemble(model)
        M = A + config.ls_regularizer * np.eye(A.shape[0])
        c, factor, cond, fellback = _spd_solve(M, b, "variational solve")
        if cond > COND_WARNING_THRESHOLD and not run_warnings:
            run_warnings.append(f"ill-conditioned variational system (cond~{cond:.1e})")
        model.coeffs = c
        energy = 0.5 * c @ A @ c - b @ c + const
        return c, factor, energy

    if config.lsgd_mode == "callback":
        _, _, energy = solve_now()

    for epoch in range(config.epochs):
        if config.optimizer_reset_every and epoch and epoch % config.optimizer_reset_every == 0:
            adam.reset()
        lr = config.rate_at(epoch)
        if config.lsgd_mode == "layer":
            energy, grad, cond = problem.training_step(model, config.ls_regularizer)
            _check_finite(energy, "energy", epoch)
            if cond > COND_WARNING_THRESHOLD and not run_warnings:
                run_warnings.append(f"ill-conditioned variational system (cond~{cond:.1e})")
        else:
            energy, grad = problem.energy_and_param_gradient(model)
            _check_finite(energy, "energy", epoch)
        _check_finite(grad, "gradient", epoch)
        theta = adam.step(theta, grad, lr)
        model.set_param_vector(theta)
        if config.lsgd_mode == "callback":
            _, _, energy = solve_now()
        l2 = problem.l2_reported(model) if trace_l2 else np.nan
        elapsed = (time.perf_counter() - t0) * 1000.0
        trace.append((epoch, energy, energy, l2, elapsed))

    if config.lsgd_mode == "layer":
        _, _, energy = solve_now()
    return TrainResult(model=model, trace=trace, config=config, warnings=run_warnings)


def train(model, problem, config, data=None):
    """Train against a named problem; dispatches on the problem type.

    For regression problems, ``data`` may supply (x_train, y_train,
    x_val, y_val); otherwise the problem's seeded sample is used.
    """
    if isinstance(problem, RegressionProblem):
        if data is None:
            data = problem.sample(config.data_seed)
        x_tr, y_tr, x_va, y_va = data
        return train_regression(model, x_tr, y_tr, config, x_val=x_va, y_val=y_va)
    if isinstance(problem, RitzProblem):
        return train_variational(model, problem, config)
    raise InvalidInputError(f"cannot train against problem of type {type(problem)!r}")
