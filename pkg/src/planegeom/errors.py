"""Exception types raised across the toolkit."""


class PlaneGeomError(ValueError):
    """Base class for all toolkit errors."""


class DomainError(PlaneGeomError):
    """An argument is outside the domain of the operation."""


class ShapeError(PlaneGeomError):
    """Array or image dimensions do not agree."""


class BehindCameraError(DomainError):
    """A point with non-positive depth was projected."""


class InsufficientDataError(PlaneGeomError):
    """Not enough samples to perform the operation."""


class DegenerateGeometryError(PlaneGeomError):
    """Input geometry is degenerate (collinear points, zero-length vectors, ...)."""


class DegenerateEncodingError(DegenerateGeometryError):
    """An encoded normal decodes to a near-zero vector."""


class EmptySupportError(PlaneGeomError):
    """A reduction was requested over an empty set of pixels."""


class EmptyOverlapError(EmptySupportError):
    """No pixel of the nearby view lands inside the current view."""


class FormatError(PlaneGeomError):
    """A file does not follow the expected on-disk format."""
