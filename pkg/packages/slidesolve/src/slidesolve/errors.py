from typing import Generic, TypeVar

_ErrorExtraT = TypeVar('_ErrorExtraT')


class SlideSolveError(Exception, Generic[_ErrorExtraT]):
    """General exception for solver errors."""
    field_path: str | None
    _message: str
    extra: _ErrorExtraT | None

    def __init__(self, message: str = None, field_path: str = None, extra: _ErrorExtraT = None):
        super().__init__(message)
        self._message = message
        self.field_path = field_path
        self.extra = extra

    @property
    def message(self) -> str: return self._message

    def __str__(self):
        if self.field_path is not None:
            return f"{self._message} (at {self.field_path or '/'})"
        return f"{self._message}"


class ProblemValidationError(SlideSolveError): """ Raised when a problem file or a problem instance is invalid. """
class DimensionError(ProblemValidationError): """ Raised on array shapes that do not agree with (N, n, m). """
class ParameterLengthError(SlideSolveError): """ Raised when a surface parameter vector has the wrong length. """
class ControlKindError(SlideSolveError): """ Raised when an operation does not support the problem's control kind. """
class NonFiniteError(SlideSolveError): """ Raised when a functional or gradient value is NaN or infinite. """
class SurfaceReductionError(SlideSolveError): """ Raised when s(x, p) = 0 cannot be solved for the controlled coordinates. """
class StiffnessError(SlideSolveError): """ Raised when the closed-loop integrator fails or underflows its step size. """
class ConvergenceError(SlideSolveError): """ Raised when descent stops before the functional reaches tol_i. """
class VerificationError(SlideSolveError): """ Raised when closed-loop verification exceeds its thresholds. """


EXIT_CODE_BY_ERROR = {
    ProblemValidationError: 1,
    DimensionError: 1,
    ParameterLengthError: 1,
    ControlKindError: 1,
    FileNotFoundError: 1,
    NonFiniteError: 2,
    ConvergenceError: 2,
    SurfaceReductionError: 3,
    StiffnessError: 3,
    VerificationError: 3
}


def exit_code_for(exc: BaseException) -> int:
    for exc_type in type(exc).__mro__:
        if exc_type in EXIT_CODE_BY_ERROR:
            return EXIT_CODE_BY_ERROR[exc_type]
    return 1
