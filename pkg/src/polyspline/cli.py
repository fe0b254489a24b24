"""Experiment runner: hp sweeps, variational solves, oracles, self-checks.

Subcommands
-----------
sweep   : grid of regression trainings (degree x splines x cells), CSV rows
          plus a JSON min-error matrix for heatmap plotting
solve   : one variational training run; emits checkpoint, trace CSV,
          pointwise-error samples CSV, and an errors JSON with oracle
          comparisons
oracle  : reference fits / FEM errors for a problem, no training
check   : fast invariant suite (exit 1 on any failure)

A TOML spec file (--spec) provides the same settings as the flags and
takes precedence over them.  Exit codes: 0 success, 1 invalid spec,
2 when any sweep cell failed.
"""

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import InvalidInputError, PolySplineError
from .model import make_model
from .oracles import best_poly_fit, fem_p1_1d, fem_p1_2d_uniform, piecewise_poly_fit, uniform_spline_fit
from .problems import (
    RegressionProblem,
    get_problem,
    kink_locations,
    slit_boundary_value,
)
from .quadrature import rule_on_intervals
from .training import TrainConfig, train_regression, train_variational

SWEEP_COLUMNS = [
    "problem", "degree", "n_splines", "n_cells", "seed",
    "train_mse", "val_mse", "oracle_mse", "epochs", "wall_time_s", "status",
]


@dataclass
class ExperimentSpec:
    """One sweep or solve experiment.

    ``cells`` is an explicit list, or 'doublings' (1, 2, 4, ..., N per N),
    or 'equal' (N_cells = N_splines); explicit values above N_splines + 1
    make the spec invalid.  Training overrides live in ``train``.
    """

    problem: str = "p1-sine"
    degrees: list = field(default_factory=lambda: [1])
    splines: list = field(default_factory=lambda: [8])
    cells: object = "doublings"
    cells_min: int = 1
    seed: int = 1234
    out: str = "results"
    workers: int = 1
    oracle: str = "auto"
    gating_init: str = "random"
    knot_jitter: float = 0.0
    n_samples: int = 1600
    train: dict = field(default_factory=dict)

    def cell_list(self, n_splines, dim=1):
        if isinstance(self.cells, str):
            if self.cells == "equal":
                return [n_splines]
            if self.cells == "doublings":
                vals = []
                c = self.cells_min
                while c < n_splines:
                    vals.append(c)
                    c *= 2
                vals.append(n_splines)
                return vals
            raise InvalidInputError(f"unknown cells mode '{self.cells}'")
        cells = [int(c) for c in self.cells]
        bound = (n_splines + 1) ** dim  # number of spline basis functions
        bad = [c for c in cells if c > bound or c < 1]
        if bad:
            raise InvalidInputError(
                f"n_cells {bad} invalid for n_splines={n_splines} in {dim}D "
                f"(need 1 <= n_cells <= {bound})"
            )
        return cells

    def grid(self, dim=1):
        out = []
        for degree in self.degrees:
            for n_splines in self.splines:
                for n_cells in self.cell_list(n_splines, dim=dim):
                    out.append((int(degree), int(n_splines), int(n_cells)))
        return out

    def train_config(self, run_seed):
        kwargs = dict(self.train)
        if "lr" in kwargs:
            kwargs["learning_rate"] = kwargs.pop("lr")
        if "ls_reg" in kwargs:
            kwargs["ls_regularizer"] = kwargs.pop("ls_reg")
        kwargs.setdefault("data_seed", self.seed)
        return TrainConfig(seed=run_seed, **kwargs)


def derived_seed(master_seed, index):
    """Deterministic per-cell seed from (master seed, cell index)."""
    return int(np.random.SeedSequence((master_seed, index)).generate_state(1)[0])


# -------------------------------------------------------------------- sweep
def _oracle_mse(spec, degree, n_splines, n_cells, data):
    x_tr, y_tr, x_va, y_va = data
    kind = spec.oracle
    if kind == "auto":
        if n_cells == 1:
            kind = "poly"
        elif degree == 0 and n_cells == n_splines:
            kind = "spline"
        else:
            kind = "none"
    if kind == "poly":
        fit = best_poly_fit(x_tr, y_tr, degree)
    elif kind == "spline":
        fit = uniform_spline_fit(x_tr, y_tr, n_splines)
    elif kind == "piecewise":
        fit = piecewise_poly_fit(x_tr, y_tr, np.linspace(0, 1, n_cells + 1), degree)
    else:
        return np.nan
    return float(np.mean((fit.predict(x_va) - y_va) ** 2))


def _run_sweep_cell(args):
    spec, index, degree, n_splines, n_cells = args
    run_seed = derived_seed(spec.seed, index)
    row = {
        "problem": spec.problem, "degree": degree, "n_splines": n_splines,
        "n_cells": n_cells, "seed": run_seed, "train_mse": np.nan,
        "val_mse": np.nan, "oracle_mse": np.nan, "epochs": 0,
        "wall_time_s": 0.0, "status": "ok",
    }
    t0 = time.perf_counter()
    try:
        problem = get_problem(spec.problem)
        data = problem.sample(spec.seed)
        cfg = spec.train_config(run_seed)
        model = make_model(
            dim=1, degree=degree, n_splines=n_splines, n_cells=n_cells,
            seed=run_seed, gating_init=spec.gating_init, knot_jitter=spec.knot_jitter,
        )
        result = train_regression(model, data[0], data[1], cfg, data[2], data[3])
        row.update(
            train_mse=result.final_train_mse,
            val_mse=result.final_val_mse,
            oracle_mse=_oracle_mse(spec, degree, n_splines, n_cells, data),
            epochs=cfg.epochs,
        )
    except Exception as exc:  # recorded per-row, sweep continues
        row["status"] = f"error: {exc}"
    row["wall_time_s"] = round(time.perf_counter() - t0, 3)
    return row


def run_sweep(spec):
    """Run the full grid; returns (rows, any_failed)."""
    problem = get_problem(spec.problem)
    if not isinstance(problem, RegressionProblem):
        raise InvalidInputError("sweep supports the regression problems (p1, p2)")
    cells = spec.grid()
    jobs = [(spec, i, b, n, c) for i, (b, n, c) in enumerate(cells)]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            rows = list(pool.map(_run_sweep_cell, jobs))
    else:
        rows = [_run_sweep_cell(job) for job in jobs]
    return rows, any(r["status"] != "ok" for r in rows)


def write_sweep_outputs(spec, rows, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "results.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    degrees = sorted({r["degree"] for r in rows})
    cell_values = sorted({r["n_cells"] for r in rows})
    matrix = [[None] * len(cell_values) for _ in degrees]
    for r in rows:
        if r["status"] != "ok" or not np.isfinite(r["val_mse"]):
            continue
        i, j = degrees.index(r["degree"]), cell_values.index(r["n_cells"])
        if matrix[i][j] is None or r["val_mse"] < matrix[i][j]:
            matrix[i][j] = r["val_mse"]
    summary = {
        "problem": spec.problem,
        "seed": spec.seed,
        "degrees": degrees,
        "n_cells": cell_values,
        "min_val_mse": matrix,
        "description": "min over n_splines of validation MSE per (degree, n_cells)",
    }
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=1)
    return out_dir / "results.csv"


# -------------------------------------------------------------------- solve
def run_variational(spec):
    """Train a variational problem and emit all solution artifacts."""
    problem = get_problem(spec.problem, beta=spec.train.get("penalty", 1000.0))
    if isinstance(problem, RegressionProblem):
        raise InvalidInputError("solve supports the variational problems (p3, p4)")
    run_seed = derived_seed(spec.seed, 0)
    degree = int(spec.degrees[0])
    n_splines = int(spec.splines[0])
    n_cells = spec.cell_list(n_splines, dim=problem.dim)[0]
    cfg = spec.train_config(run_seed)
    model = make_model(
        dim=problem.dim, degree=degree, n_splines=n_splines, n_cells=n_cells,
        seed=run_seed, gating_init=spec.gating_init, knot_jitter=spec.knot_jitter,
    )
    result = train_variational(model, problem, cfg)

    out_dir = Path(spec.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.save(out_dir / "checkpoint.json")
    result.trace_to_csv(out_dir / "trace.csv")

    rng = np.random.default_rng(spec.seed)
    pts = rng.uniform(0.0, 1.0, size=(spec.n_samples, problem.dim))
    y, _ = model.forward(pts)
    exact = problem.exact(pts)
    with open(out_dir / "samples.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(problem.dim)] + ["model", "exact", "error"])
        for p, yi, ei in zip(pts, y, exact):
            writer.writerow(list(p) + [yi, ei, yi - ei])

    errors = {
        "problem": problem.name,
        "degree": degree,
        "n_splines": n_splines,
        "n_intervals": n_splines,
        "n_knots": n_splines + 1,
        "n_cells": n_cells,
        "solve_size": model.n_features,
        "seed": run_seed,
        "energy": result.trace[-1][1],
        "l2_error_abs": problem.l2_error(model),
        "l2_error_reported": problem.l2_reported(model),
        "mse_vs_exact": problem.mse_vs_exact(model),
    }
    if problem.dim == 1:
        knots = model.knots_x.knots
        fem_vals, fem_fn = fem_p1_1d(knots, source=problem.source, beta=problem.beta)
        rule = rule_on_intervals(knots, degree + 5)
        y_q, _ = model.forward(rule.points)
        gap = float(np.sqrt(np.dot(rule.weights, (y_q - fem_fn(rule.points)) ** 2)))
        errors["fem_on_learned_knots_l2_gap"] = gap
        errors["learned_knots"] = knots.tolist()
    else:
        for n in (3, 6):
            fem = fem_p1_2d_uniform(n)
            errors[f"fem_u{n}_l2_reported"] = fem.l2_reported(slit_boundary_value)
    with open(out_dir / "errors.json", "w") as fh:
        json.dump(errors, fh, indent=1)
    return errors


# ------------------------------------------------------------------- oracle
def run_oracle(spec):
    """Reference errors without any training; one CSV in the out dir."""
    out_dir = Path(spec.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    if spec.problem in ("p1-sine", "p2-kinks"):
        problem = get_problem(spec.problem)
        x_tr, y_tr, x_va, y_va = problem.sample(spec.seed)

        def val_mse(fit):
            return float(np.mean((fit.predict(x_va) - y_va) ** 2))

        for degree in spec.degrees:
            rows.append(("poly", degree, val_mse(best_poly_fit(x_tr, y_tr, int(degree)))))
        for n in spec.splines:
            rows.append(("spline-uniform", n, val_mse(uniform_spline_fit(x_tr, y_tr, int(n)))))
        if spec.problem == "p2-kinks":
            aligned = np.concatenate([[0.0], kink_locations(), [1.0]])
            for degree in spec.degrees:
                rows.append(
                    ("piecewise-uniform-8", degree,
                     val_mse(piecewise_poly_fit(x_tr, y_tr, np.linspace(0, 1, 9), int(degree))))
                )
                rows.append(
                    ("piecewise-kink-aligned", degree,
                     val_mse(piecewise_poly_fit(x_tr, y_tr, aligned, int(degree))))
                )
    elif spec.problem == "p4-slit":
        for n in spec.splines:
            fem = fem_p1_2d_uniform(int(n))
            rows.append((f"fem-u{n}", n, fem.l2_reported(slit_boundary_value)))
    elif spec.problem == "p3-poisson1d":
        for n in spec.splines:
            knots = np.linspace(0.0, 1.0, int(n) + 1)
            _, fem_fn = fem_p1_1d(knots, source=2.0)
            xs = np.linspace(0, 1, 4001)
            err = fem_fn(xs) - xs * (1 - xs)
            rows.append(("fem-1d-uniform", n, float(np.sqrt(np.trapezoid(err**2, xs)))))
    else:
        raise InvalidInputError(f"no oracle table for problem '{spec.problem}'")
    path = Path(out_dir) / "oracle.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["oracle", "parameter", "value"])
        writer.writerows(rows)
    return path


# -------------------------------------------------------------------- check
def run_check(verbose=True):
    """Fast invariant suite; returns the number of failures."""
    from . import checks

    failures = 0
    for name, fn in checks.ALL_CHECKS:
        try:
            fn()
            status = "PASS"
        except Exception as exc:
            status = f"FAIL ({exc})"
            failures += 1
        if verbose:
            print(f"[{'ok' if status == 'PASS' else 'XX'}] {name}: {status}")
    return failures


# ------------------------------------------------------------------ parsing
def _csv_ints(text):
    return [int(tok) for tok in str(text).split(",") if tok != ""]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="polyspline", description="polynomial-spline network experiments"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("sweep", "solve", "oracle"):
        p = sub.add_parser(name)
        p.add_argument("--spec", help="TOML spec file; overrides the flags")
        p.add_argument("--problem", default=None)
        p.add_argument("--degree", default=None, help="comma list of expert degrees")
        p.add_argument("--splines", default=None, help="comma list of knot interval counts")
        p.add_argument("--cells", default=None, help="comma list, 'doublings', or 'equal'")
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--penalty", type=float, default=None)
        p.add_argument("--ls-reg", type=float, default=None)
        p.add_argument("--lsgd-mode", choices=("layer", "callback"), default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--gating-init", default=None)
    sub.add_parser("check")
    return parser


def spec_from_args(args):
    """Merge defaults, command-line flags, and the TOML file (file wins)."""
    spec = ExperimentSpec()
    train = {}
    if args.problem is not None:
        spec.problem = args.problem
    if args.degree is not None:
        spec.degrees = _csv_ints(args.degree)
    if args.splines is not None:
        spec.splines = _csv_ints(args.splines)
    if args.cells is not None:
        spec.cells = args.cells if args.cells in ("doublings", "equal") else _csv_ints(args.cells)
    if args.seed is not None:
        spec.seed = args.seed
    if args.out is not None:
        spec.out = args.out
    if args.workers is not None:
        spec.workers = args.workers
    if args.gating_init is not None:
        spec.gating_init = args.gating_init
    for key, flag in (
        ("epochs", args.epochs), ("lr", args.lr), ("penalty", args.penalty),
        ("ls_reg", args.ls_reg), ("lsgd_mode", args.lsgd_mode),
    ):
        if flag is not None:
            train[key] = flag
    spec.train = train

    if args.spec:
        with open(args.spec, "rb") as fh:
            blob = tomllib.load(fh)
        train_blob = blob.pop("train", {})
        for key, value in blob.items():
            if not hasattr(spec, key):
                raise InvalidInputError(f"unknown spec field '{key}' in {args.spec}")
            setattr(spec, key, value)
        spec.train = {**spec.train, **train_blob}
    return spec


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "check":
        return 1 if run_check() else 0
    try:
        spec = spec_from_args(args)
        if args.command == "sweep":
            rows, failed = run_sweep(spec)
            path = write_sweep_outputs(spec, rows, spec.out)
            print(f"wrote {path} ({len(rows)} rows)")
            return 2 if failed else 0
        if args.command == "solve":
            errors = run_variational(spec)
            print(json.dumps(errors, indent=1))
            return 0
        path = run_oracle(spec)
        print(f"wrote {path}")
        return 0
    except (PolySplineError, OSError, KeyError, TypeError) as exc:
        print(f"invalid spec: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
