"""Exception types shared across the package, grouped by CLI exit code."""


class GridPoseError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigError(GridPoseError):
    """Invalid configuration or parameter values. CLI exit code 2."""

    exit_code = 2


class DataError(GridPoseError):
    """Malformed, inconsistent, or insufficient input data. CLI exit code 3."""

    exit_code = 3


class NumericalError(GridPoseError):
    """Numerical failure inside a solver, sampler, or metric. CLI exit code 4."""

    exit_code = 4


class SchemaViolationError(DataError):
    """A persisted file does not match its schema; message names the offending field."""


class EmptyModelError(DataError):
    """An object model carries no surface points."""


class OutOfRangeError(DataError):
    """A grid-cell index lies outside the grid."""


class SpecMismatchError(DataError):
    """Two grids that must share a GridSpec do not."""


class AllZeroError(DataError):
    """Every class count is zero; frequency weights are undefined."""


class TooFewError(DataError):
    """Fewer correspondences than the solver's minimum."""


class EmptyClusterError(DataError):
    """A selection strategy received a cluster with no member cells."""


class BehindCameraError(NumericalError):
    """A point's camera-frame depth is at or behind the image plane."""


class DegenerateError(NumericalError):
    """Correspondence geometry is degenerate (e.g. collinear 3D points)."""


class CheiralityFailureError(NumericalError):
    """No pose candidate places all points at positive depth."""


class NoConsensusError(NumericalError):
    """RANSAC found no model with enough inliers."""


class NonFiniteError(NumericalError):
    """A residual or loss evaluated to NaN or infinity."""


class SamplingExhaustedError(NumericalError):
    """Rejection sampling exceeded its attempt budget."""
