"""Exception types raised across the package."""


class KGAlignError(Exception):
    """Base class for all package errors."""


class ParseError(KGAlignError, ValueError):
    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{self.path}:{lineno}: {message}")


class ReferentialError(KGAlignError, KeyError):
    """An alignment or seed refers to an entity the graph does not know."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ConfigurationError(KGAlignError, ValueError):
    pass


class ShapeError(KGAlignError, ValueError):
    pass


class NumericError(KGAlignError, ArithmeticError):
    pass


class SamplingError(KGAlignError, RuntimeError):
    pass


class DivergenceError(KGAlignError, RuntimeError):
    def __init__(self, epoch, message="non-finite loss"):
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch}: {message}")


class EvaluationError(KGAlignError, ValueError):
    pass


class FormatError(KGAlignError, ValueError):
    pass
