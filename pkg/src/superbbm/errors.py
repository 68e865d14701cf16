"""Exception types shared across the package."""


class SuperBBMError(Exception):
    """Base class for all package-specific failures."""


class NoRootError(SuperBBMError):
    """The positive root of the mechanism could not be bracketed."""


class NumericError(SuperBBMError):
    """A numerical routine lost control of its error (step collapse,
    trajectory escaping its invariant interval, inconsistent cross-checks)."""


class TruncationError(SuperBBMError):
    """A truncated series/pmf did not reach its required cumulative mass."""

    def __init__(self, message, achieved_tail=None):
        super().__init__(message)
        self.achieved_tail = achieved_tail


class SamplerDegenerateError(SuperBBMError):
    """A rejection sampler exceeded its iteration budget."""


class DomainTooShortError(SuperBBMError):
    """A fit window on a solved profile is empty or too small."""


class NoSurvivorsError(SuperBBMError):
    """A conditional-on-survival estimate had zero surviving replicas."""


class ConfigError(SuperBBMError):
    """A configuration file or experiment description is invalid."""
