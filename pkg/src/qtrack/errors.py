"""Exception and warning types raised across qtrack."""


class QTrackError(Exception):
    """Base class for all qtrack errors."""


class InvalidInput(QTrackError, ValueError):
    pass


class InvalidField(InvalidInput):
    """A control field contains non-finite values or has the wrong length."""


class DimensionError(QTrackError, ValueError):
    pass


class InvalidSpectrum(InvalidInput):
    """Eigenvalue multiplicities are inconsistent with the Hilbert dimension."""


class NumericalFailure(QTrackError, ArithmeticError):
    pass


class StalledOptimization(QTrackError):
    """Adaptive step control shrank the algorithmic step below its floor."""


class SingularGMatrix(QTrackError, ArithmeticError):
    """The dipole correlation matrix is too ill-conditioned to invert (strict mode)."""


class SingularGamma(SingularGMatrix):
    """The observable-gradient correlation matrix is too ill-conditioned (strict mode)."""


class NearCriticalSingularity(QTrackError, ArithmeticError):
    """Scalar tracking hit a point where the objective gradient vanishes."""


class InvalidPovm(InvalidInput):
    pass


class InvalidRecord(InvalidInput):
    pass


class ConfigError(QTrackError, ValueError):
    """Configuration failed validation. ``path`` names the offending field."""

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class BranchCutWarning(RuntimeWarning):
    """A unitary has an eigenvalue at -1, where the principal logarithm is ambiguous."""


class IllConditionedWarning(RuntimeWarning):
    """A correlation matrix was pseudo-inverted and the requested step is not fully reachable."""


class RankWarning(RuntimeWarning):
    pass
