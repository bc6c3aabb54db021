"""Exception and warning types shared across the package."""


class QhoCalError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(QhoCalError, ValueError):
    """Invalid configuration input (bad key, unparsable value, broken invariant)."""


class SimulationError(QhoCalError, RuntimeError):
    """Numerical failure during simulation or integration (underflow,
    positivity loss, truncation blow-up, quadrature non-convergence)."""


class GridMismatchError(QhoCalError, ValueError):
    """Requested time is not on the checkpoint grid, or two grids disagree."""


class InsufficientDataError(QhoCalError, ValueError):
    """Too few samples to form the requested statistic."""


class TruncationWarning(UserWarning):
    """Population is leaking into the highest Fock level kept."""


class RegimeWarning(UserWarning):
    """Parameters leave the regime an approximation was derived for."""


class PrecisionLossWarning(UserWarning):
    """Result may have lost precision (extreme quantum numbers)."""
