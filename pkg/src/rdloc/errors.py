"""Exception hierarchy.

Validation errors map to CLI exit code 1, numerical failures to exit code 2.
"""


class RdlocError(Exception):
    pass


class ValidationError(RdlocError, ValueError):
    pass


class NumericalError(RdlocError, ArithmeticError):
    pass


class InvalidModelError(ValidationError):
    pass


class InvalidFaultError(ValidationError):
    pass


class InvalidGridError(ValidationError):
    pass


class ShapeError(ValidationError):
    pass


class EmptyInputError(ValidationError):
    pass


class InvalidArgumentError(ValidationError):
    pass


class InvalidPlanError(ValidationError):
    pass


class CoverageError(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CheckpointError(ValidationError):
    pass


class SolverError(NumericalError):
    def __init__(self, message, frequency=None):
        if frequency is not None:
            message = f"{message} (f = {frequency!r} Hz)"
        super().__init__(message)
        self.frequency = frequency


class TrainingDivergenceError(NumericalError):
    def __init__(self, message, epoch=None):
        if epoch is not None:
            message = f"{message} at epoch {epoch}"
        super().__init__(message)
        self.epoch = epoch
