"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A configuration object or argument violates its invariants."""


class DegeneracyError(ArithmeticError):
    """Base class for numerically degenerate situations."""


class DegenerateStatisticsError(DegeneracyError):
    """Detector prefactor denominator is non-positive.

    Signals a self-overlap inconsistent with the received signal power;
    cannot occur at valid fixed points for large systems, so it is raised
    rather than clamped.
    """


class DegenerateParametersError(DegeneracyError):
    """Macroscopic recursion hit a non-positive denominator or domain error."""


class EnumerationLimitError(ConfigurationError):
    """Exhaustive posterior enumeration requested for too many users."""
