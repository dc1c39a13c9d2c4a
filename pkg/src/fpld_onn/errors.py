"""Exception hierarchy shared by every stage of the pipeline."""


class FpldError(Exception):
    """Base class for all package errors."""


class NumericalDomainError(FpldError, ValueError):
    """Non-finite or otherwise invalid numerical input."""


class IntegrationBlowupError(FpldError, ArithmeticError):
    """The integrator produced NaN/Inf or a large negative density."""

    def __init__(self, message, component=None, time=None):
        super().__init__(message)
        self.component = component
        self.time = time


class ConvergenceError(FpldError, RuntimeError):
    """A relaxation or settling loop ran out of simulated time."""

    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index


class ParameterError(FpldError, ValueError):
    """Invalid or physically meaningless parameter set."""


class NoThresholdError(FpldError, ValueError):
    """A transfer curve has no rising region."""


class ActivationDomainError(FpldError, ValueError):
    """Input power outside the validity domain of a fitted activation."""


class CoefficientError(FpldError, ValueError):
    """Activation coefficients violate the log/pow domain of the formula."""


class SingularityError(FpldError, ValueError):
    """Derivative requested at a singular point of the activation."""


class FitFailureError(FpldError, RuntimeError):
    def __init__(self, message, best_residual=None):
        super().__init__(message)
        self.best_residual = best_residual


class TrainingDivergedError(FpldError, FloatingPointError):
    """A gradient or parameter became non-finite during training."""


class DependencyError(FpldError, LookupError):
    """A required upstream artifact (e.g. fitted coefficients) is missing."""


class IdxParseError(FpldError, ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
