"""Exception types shared across the package.

Every error raised on a contract violation derives from LiftboxError so
callers (and the CLI) can distinguish our failures from genuine bugs.
"""

from __future__ import annotations


class LiftboxError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(LiftboxError, ValueError):
    """An argument violates a documented precondition."""


class NoDataError(LiftboxError):
    """An operation received no usable data (empty cloud, no samples)."""


class DegenerateRotationError(LiftboxError):
    """Rotation is not defined for the given pair of directions.

    Raised when the source and target axes are antiparallel: the rotation
    angle would be 180 degrees and the axis is not unique.
    """


class EmptyClusterError(LiftboxError):
    """Clustering produced no clusters (all points classified as noise)."""


class DegenerateGeometryError(LiftboxError):
    """Geometry is too thin for the requested fit (fewer than 3 distinct
    planar points, or all points collinear)."""


class FormatError(LiftboxError):
    """A file or byte stream does not match its declared format."""


class UnknownCategoryError(LiftboxError):
    """A category is missing from the size-prior table and the active
    policy rejects unknown categories."""
