"""Exception and warning types raised across the package."""


class FeedAuditError(Exception):
    """Base class for every error raised by feedaudit."""


class NotStochastic(FeedAuditError):
    pass


class NotIrreducible(FeedAuditError):
    pass


class NegativeEntry(FeedAuditError):
    pass


class NoConvergence(FeedAuditError):
    pass


class CapExceeded(FeedAuditError):
    pass


class BudgetExceeded(FeedAuditError):
    pass


class InsufficientCoverage(FeedAuditError):
    pass


class InsufficientSamples(FeedAuditError):
    pass


class RegimeViolation(FeedAuditError):
    pass


class CalibrationFailed(FeedAuditError):
    pass


class ConfigMismatch(FeedAuditError):
    pass


class PairingMismatch(FeedAuditError):
    pass


class DimensionMismatch(FeedAuditError):
    pass


class InfeasibleGap(FeedAuditError):
    pass


class ConfigInvalid(FeedAuditError):
    """Raised by the CLI when an experiment config fails validation.

    ``field`` names the offending key so the message can point at it.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class TruncatedPoissonDraw(UserWarning):
    """A Poisson sample size exceeded the symbols available and was cut."""


class UncoveredState(UserWarning):
    """A state had no successor-bearing visit in the data."""
