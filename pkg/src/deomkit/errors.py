"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so library code should raise
the most specific type that applies.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent user input (config files, parameters)."""


class NumericalError(RuntimeError):
    """A numerical procedure failed (blow-up, non-convergent quadrature)."""


class QuadratureError(NumericalError):
    """Adaptive quadrature did not reach the requested accuracy."""

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class ConvergenceInconclusive(RuntimeError):
    """A convergence check ran to completion but did not certify its target."""
