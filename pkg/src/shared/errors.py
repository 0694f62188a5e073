"""
Error types for the speech recognition pipeline.

Every failure the pipeline reports on purpose is a PipelineError subclass, so
entry points can turn it into a single machine-parsable line.
"""

import re


class PipelineError(Exception):
    """Base class for all pipeline errors."""

    @property
    def kind(self) -> str:
        """Snake-case name of the concrete error class (e.g. ``data_error``)."""
        return re.sub(r"(?<!^)(?=[A-Z])", "_", type(self).__name__).lower()


class ParameterError(PipelineError, ValueError):
    """An argument is out of range or inconsistent with another argument."""


class ShapeError(ParameterError):
    """Array extents do not fit the operation."""


class DataError(PipelineError, ValueError):
    """Input data is malformed: non-finite samples, bad files, unknown symbols."""


class DegenerateDataError(DataError):
    """Data carries no usable variance (e.g. all KPCA points identical)."""


class NumericError(PipelineError, ArithmeticError):
    """A numerical routine failed to converge or produced non-finite values."""


class StateError(PipelineError, RuntimeError):
    """An operation was called before the state it needs exists."""


class ConfigError(PipelineError):
    """Configuration is invalid or incompatible with a stored artifact."""
