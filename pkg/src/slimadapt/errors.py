"""Exception taxonomy shared by the whole package.

The CLI maps these onto process exit codes, so library code should raise
the most specific class that applies instead of bare ValueError/RuntimeError.
"""


class SlimAdaptError(Exception):
    """Base class for all package errors."""


class ConfigError(SlimAdaptError):
    """A configuration is structurally invalid (bad shapes, illegal widths,
    missing config fields, checkpoint/architecture mismatch)."""


class UsageError(SlimAdaptError):
    """An API was called in a way its contract forbids (out-of-range
    argument, missing recalibration, label access from a training path)."""


class NumericError(SlimAdaptError):
    """A numeric invariant broke: NaN/Inf appeared in a tensor or loss."""


class SearchError(SlimAdaptError):
    """Architecture search could not produce a legal candidate."""


class LabelLeakageError(UsageError):
    """Hidden target labels were requested outside an evaluation path."""
