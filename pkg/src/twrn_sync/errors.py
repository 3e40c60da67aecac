"""Exception hierarchy shared by the estimation pipeline and the CLI."""


class TwrnError(Exception):
    """Base class for all package errors."""


class ConfigError(TwrnError, ValueError):
    """Invalid experiment or model configuration."""


class NumericalError(TwrnError, ArithmeticError):
    """A numerical routine could not produce a trustworthy result."""


class RankDeficiencyError(NumericalError):
    """The training matrix lost column rank."""


class SingularFimError(NumericalError):
    """Fisher information matrix is singular or too ill-conditioned to invert."""


class FimMismatchError(NumericalError):
    """The closed-form and finite-difference Fisher matrices disagree."""
