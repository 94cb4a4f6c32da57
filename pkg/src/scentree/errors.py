"""Exception types shared across the toolkit."""


class ScentreeError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(ScentreeError):
    """An argument or configuration value violates a documented precondition."""


class InfeasibleActionError(ScentreeError):
    """A battery action would violate a power or state-of-charge bound."""


class SamplerError(ScentreeError):
    """A trajectory sampler failed to produce a batch."""


class ProtocolError(SamplerError):
    """A remote sampler sent a malformed or mis-shaped response."""


class RemoteSamplerError(SamplerError):
    """The remote sampler reported an error of its own."""


class SamplerTimeoutError(SamplerError):
    """The remote sampler did not answer within the configured timeout."""


class SolverFailureError(ScentreeError):
    """The LP solver hit a numerical breakdown it could not recover from."""


class PriceDataError(ScentreeError):
    """A price CSV is malformed: gaps, duplicates, or unparsable cells."""
