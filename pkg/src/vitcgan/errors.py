"""Exception types shared across the package."""


class VitCGANError(Exception):
    """Base class for all package errors."""

    kind = "error"


class ConfigError(VitCGANError, ValueError):
    """Invalid configuration or precondition on shapes/hyperparameters."""

    kind = "config"


class InputError(VitCGANError, ValueError):
    """Invalid data handed to an operation (bad labels, mismatched batches...)."""

    kind = "input"


class NumericalError(VitCGANError, ArithmeticError):
    """A computation produced non-finite values."""

    kind = "numerical"


class LoadError(InputError):
    """Itemized failures while loading a dataset manifest."""

    kind = "load"

    def __init__(self, problems):
        self.problems = list(problems)
        lines = "; ".join(f"row {i}: {msg}" for i, msg in self.problems)
        super().__init__(f"{len(self.problems)} bad manifest row(s): {lines}")
