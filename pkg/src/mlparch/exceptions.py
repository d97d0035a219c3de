"""Exception hierarchy shared across the package."""


class MlpArchError(Exception):
    """Base class for all errors raised by mlparch."""


class InputShapeError(MlpArchError, ValueError):
    """Input dimension does not match the network's input dimension."""


class InvalidInputError(MlpArchError, ValueError):
    """Empty dataset, n = 0, or otherwise malformed argument."""


class InvalidNoiseError(MlpArchError, ValueError):
    """Noise variance is not strictly positive."""


class DegenerateDirectionError(MlpArchError, ValueError):
    """The parameter realizes the true density, so no score direction exists."""


class AmbiguousClusteringError(MlpArchError, ValueError):
    """Two true units are too close for the requested clustering tolerance."""


class InvalidDecompositionError(MlpArchError, ValueError):
    """A reparameterization is internally inconsistent."""


class DegenerateFunctionError(MlpArchError, ValueError):
    """A member of the H-3 function family has (numerically) zero norm."""


class OptimizationError(MlpArchError, RuntimeError):
    """Every restart of the optimizer diverged.

    Attributes
    ----------
    diagnostics : dict
        Per-restart information (final loss, iterations, reason).
    k : int or None
        Number of hidden units of the failing fit, when known.
    """

    def __init__(self, message, diagnostics=None, k=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
        self.k = k


class ConfigError(MlpArchError, ValueError):
    """Configuration file missing, unparsable, or containing unknown keys."""
