"""Exception hierarchy shared by all d2nn modules."""


class D2NNError(Exception):
    """Base class for all errors raised by this package."""


class InvalidGeometryError(D2NNError):
    """Grid size, pitch, or shape of an operand is inconsistent."""


class InvalidLayerError(D2NNError):
    """Layer parameters violate their constraints (e.g. amplitude outside [0,1])."""


class InvalidInputError(D2NNError):
    """Input image pixels outside the admissible range."""


class UnsupportedOperationError(D2NNError):
    """Operation not defined for this configuration (e.g. gradients through a nonlinear stack)."""


class DegenerateOutputError(D2NNError):
    """Total output power is zero or negative; normalized metrics are undefined."""


class FormatError(D2NNError):
    """A binary file does not match its declared format."""


class DataConsistencyError(D2NNError):
    """Image and label files disagree (e.g. different sample counts)."""


class EmptySplitError(D2NNError):
    """A dataset split that must be consumed is empty."""


class ConfigError(D2NNError):
    """A run-configuration document is invalid; the message names the offending key."""
