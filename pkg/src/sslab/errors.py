"""Exception types raised across the package."""


class SSLabError(Exception):
    """Base class for all package errors."""


class DimensionTooLow(SSLabError, ValueError):
    pass


class NonPowerOfTwo(SSLabError, ValueError):
    pass


class GridMismatch(SSLabError, ValueError):
    pass


class ContentOverflow(SSLabError):
    """Raised when a rescaling would push significant mass past ``r_max``."""


class FailsConditions(SSLabError):
    """A scaling profile violates one of the growth conditions on g(t)."""

    def __init__(self, clause: str, report=None):
        super().__init__(clause)
        self.clause = clause
        self.report = report


class NoBoundState(SSLabError):
    pass


class NoSoliton(SSLabError):
    pass


class SolveDiverged(SSLabError):
    pass


class LadderExhausted(SSLabError):
    pass


class ConfigError(SSLabError, ValueError):
    """A scenario configuration violates a parameter window or is malformed."""


class SnapshotFormatError(SSLabError, ValueError):
    pass
