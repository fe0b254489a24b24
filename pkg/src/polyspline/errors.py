"""Exception types shared across the package."""


class PolySplineError(Exception):
    """Base class for all package errors."""


class InvalidInputError(PolySplineError, ValueError):
    """Raised for non-finite or malformed numeric inputs."""


class OutOfDomainError(PolySplineError, ValueError):
    """Raised when evaluation points fall outside the model domain."""


class DimensionMismatchError(PolySplineError, ValueError):
    """Raised when array shapes are inconsistent with the model."""


class SingularSystemError(PolySplineError, RuntimeError):
    """Raised when an unregularized linear solve hits a singular system."""


class TrainingDivergenceError(PolySplineError, RuntimeError):
    """Raised when a training loop produces a non-finite loss or gradient."""

    def __init__(self, stage, epoch, detail=""):
        self.stage = stage
        self.epoch = epoch
        msg = f"non-finite value in stage '{stage}' at epoch {epoch}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
