class NumericalError(ArithmeticError):
    """An iterative kernel failed to converge or produced non-finite values."""


class DomainError(ValueError):
    """Inputs lie outside the domain where a quantity is defined."""


class FormatError(ValueError):
    """A matrix file could not be parsed."""
