"""Exception hierarchy shared across the package."""


class QPFError(Exception):
    """Base class for all package errors."""

    reason = "error"


class DimensionError(QPFError, ValueError):
    """Tensor/array shapes are inconsistent with the requested operation."""

    reason = "dimension_error"


class ParameterError(QPFError, ValueError):
    """A configuration value or argument is out of its allowed range."""

    reason = "config_error"


class DataError(QPFError, ValueError):
    """Input data is missing, malformed, or too short for the task."""

    reason = "data_error"


class GraphError(QPFError, RuntimeError):
    """Misuse of the autodiff graph (non-scalar loss, repeated backward)."""

    reason = "graph_error"


class TrainingError(QPFError, RuntimeError):
    """Training aborted (e.g. non-finite loss)."""

    reason = "training_error"
