"""Free-knot polynomial-spline networks with exact integration.

A mixture-of-experts model on [0,1]^d: trainable B1-spline partitions of
unity gate per-cell polynomial experts.  The package provides exact
quadrature of the model and its derivatives, hybrid least-squares /
gradient-descent training for regression and Ritz (variational) losses,
reference problems with independent oracles, sklearn-style estimators,
and an experiment CLI.
"""

from .errors import (
    DimensionMismatchError,
    InvalidInputError,
    OutOfDomainError,
    PolySplineError,
    SingularSystemError,
    TrainingDivergenceError,
)
from .gating import GatingWeights, gating_gradient, pou_values
from .knots import KnotLayer, SplineEval, eval_b1_basis, knot_jacobian, knots_from_logits
from .model import FeatureMap, PolySplineModel, SplineEval2D, make_model
from .polybasis import PolyBasis
from .quadrature import (
    boundary_quadrature,
    cell_decomposition_2d,
    gauss_legendre,
    integrate_functional,
    integrate_model,
    integrate_model_closed_form,
    points_per_axis,
)

__all__ = [
    "DimensionMismatchError",
    "FeatureMap",
    "GatingWeights",
    "InvalidInputError",
    "KnotLayer",
    "OutOfDomainError",
    "PolyBasis",
    "PolySplineError",
    "PolySplineModel",
    "SingularSystemError",
    "SplineEval",
    "SplineEval2D",
    "TrainingDivergenceError",
    "boundary_quadrature",
    "cell_decomposition_2d",
    "eval_b1_basis",
    "gating_gradient",
    "gauss_legendre",
    "integrate_functional",
    "integrate_model",
    "integrate_model_closed_form",
    "knot_jacobian",
    "knots_from_logits",
    "make_model",
    "points_per_axis",
    "pou_values",
]

__version__ = "0.1.0"
