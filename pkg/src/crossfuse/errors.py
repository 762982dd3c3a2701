"""Exception types shared across the package."""


class CrossfuseError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(CrossfuseError, ValueError):
    """Tensor shapes or axes incompatible with the requested operation."""


class GraphError(CrossfuseError, RuntimeError):
    """Invalid use of the computation graph (e.g. backward on a non-scalar)."""


class ConfigError(CrossfuseError, ValueError):
    """Invalid or inconsistent configuration (files, keys, values, mismatches)."""


class FormatError(CrossfuseError, ValueError):
    """Corrupt or truncated binary file (tensor records, checkpoints, datasets)."""


class EvaluationError(CrossfuseError, ValueError):
    """Prediction requested on invalid model output (e.g. non-finite logits)."""


class NonFiniteLossError(CrossfuseError, ArithmeticError):
    """Training aborted because the loss became non-finite."""

    def __init__(self, step: int, value: float):
        self.step = step
        self.value = value
        super().__init__(f"non-finite loss {value!r} at training step {step}")


class GradCheckError(CrossfuseError, AssertionError):
    """A finite-difference check exceeded its tolerance."""
