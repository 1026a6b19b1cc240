"""Exception hierarchy shared by all qbnet modules."""


class QBNetError(Exception):
    """Base class for qbnet errors."""


class ParameterError(QBNetError, ValueError):
    """Invalid arguments: wrong shapes, lengths or values."""


class DomainError(QBNetError, ValueError):
    """Inputs are well formed but violate a structural assumption."""


class NumericError(QBNetError, ArithmeticError):
    """A numerical procedure failed (singular solve, divergence, ...)."""
