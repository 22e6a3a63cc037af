"""Exception types shared across the pipeline."""


class FormatError(ValueError):
    """Malformed file: bad header, ragged CSV, corrupt serialization."""


class TruncationError(FormatError):
    """Data file shorter than the header promises."""


class EmptyInputError(ValueError):
    """Operation requires non-empty foreground/input."""


class TopologyError(ValueError):
    """Mesh does not meet the topological precondition (closed genus zero)."""


class ConvergenceError(RuntimeError):
    """Iterative solver diverged."""


class UnderdeterminedError(ValueError):
    """Too few samples for the requested fit degree."""


class UndefinedStatisticError(ValueError):
    """Statistic undefined for the given samples (e.g. zero variance)."""


class ConfigurationError(ValueError):
    """Pipeline configuration inconsistent with the requested operation."""
