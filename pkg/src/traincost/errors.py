"""Exception types shared across the package."""


class TraincostError(Exception):
    """Base class for all package errors."""


class ShapeError(TraincostError):
    """A sharding dimension does not divide the quantity it partitions."""


class InputError(TraincostError):
    """A scalar input is outside its documented domain."""


class ProfileLookupError(TraincostError):
    """No profile entry covers the requested operator or collective."""


class InfeasibleError(TraincostError):
    """The fault regime cannot sustain checkpointed training."""


class ConfigError(TraincostError):
    """A configuration file failed to parse or validate."""
