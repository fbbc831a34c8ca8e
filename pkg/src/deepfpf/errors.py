"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid model, solver or run configuration."""


class DomainError(ValueError):
    """Evaluation requested outside the declared support window."""


class NumericError(ArithmeticError):
    """A NaN/Inf or a failed numerical procedure.

    ``where`` carries a short location string (layer, iteration, step) so
    failures deep inside a run can be traced without a debugger.
    """

    def __init__(self, message, where=None):
        self.where = where
        if where is not None:
            message = f"{message} [{where}]"
        super().__init__(message)


class FitError(NumericError):
    """A baseline solver failed to produce a model."""
