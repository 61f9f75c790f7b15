"""Exception hierarchy shared by every module."""


class MMRBError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MMRBError, ValueError):
    """Invalid mesh, preset or CLI configuration."""


class ModelError(MMRBError, ValueError):
    """Physically invalid model data (negative cross sections, singular Theta)."""


class SchemeError(MMRBError):
    """The discretisation cannot be formed with the given quadrature."""


class SolverError(MMRBError, RuntimeError):
    """An iterative solve did not converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NumericalError(MMRBError, RuntimeError):
    """Factorisation failure or a degenerate reduced basis."""


class QuadratureError(MMRBError, ValueError):
    """Quadrature preconditions violated (too few nodes, negative weights)."""
