"""Exception types shared across the package."""


class DCBoostError(Exception):
    """Base class for all library errors."""


class ZeroVectorError(DCBoostError):
    """A row with (near-)zero norm was passed where a direction is required."""


class FormatError(DCBoostError):
    """A dataset or checkpoint file does not match its declared format."""


class ShapeError(DCBoostError):
    """Array dimensions disagree with the operation's contract."""


class ConfigError(DCBoostError):
    """A configuration value violates its invariants."""


class DegenerateClassError(DCBoostError):
    """A class group's summed features have (near-)zero norm."""


class DegenerateOutputError(DCBoostError):
    """A network produced a zero vector where a unit feature is required."""


class MetricUndefinedError(DCBoostError):
    """The requested metric is undefined for the given labeling."""
