"""Exception hierarchy shared across the toolkit."""


class FramecastError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(FramecastError):
    """A config value is out of range or a config file is malformed."""


class FormatError(FramecastError):
    """An on-disk dataset layout is missing pieces or unparseable."""


class IntegrityError(FramecastError):
    """Stored data is internally inconsistent (shape drift, bad digest)."""


class ContractError(FramecastError):
    """A call violated an interface contract (shape or layout mismatch)."""


class LayoutError(ContractError):
    """A conditioning layout cannot be realized on the given video."""


class SchemeError(FramecastError):
    """A sampling scheme violates coverage, disjointness, or causality.

    Carries the violation records when raised by the sampling driver.
    """

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = tuple(violations)


class UnsupportedLayoutError(SchemeError):
    """Planner limitation: observed frames must be a contiguous prefix."""


class CheckpointError(FramecastError):
    """Checkpoint version, digest, or capacity does not match."""


class InsufficientDataError(FramecastError):
    """Too few samples for the requested statistic."""


class NumericalDegeneracyError(FramecastError):
    """A matrix computation left the tolerated numerical regime."""


class TransportError(FramecastError):
    """The narration endpoint could not be reached (retriable)."""


class ProtocolError(FramecastError):
    """The narration endpoint answered with a malformed response."""


class RequestValidationError(FramecastError):
    """A narration request violates endpoint limits (e.g. clip too long)."""
