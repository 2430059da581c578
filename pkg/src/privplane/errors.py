"""Exception types shared across the package."""


class PrivPlaneError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(PrivPlaneError, ValueError):
    pass


class DegeneratePlane(PrivPlaneError, ValueError):
    """Two basis vectors are (anti)parallel and span no plane."""


class EmptyShape(PrivPlaneError, ValueError):
    pass


class EmptyInput(PrivPlaneError, ValueError):
    pass


class BadMagic(PrivPlaneError, ValueError):
    pass


class TruncatedFile(PrivPlaneError, ValueError):
    pass


class RaggedGrid(PrivPlaneError, ValueError):
    pass


class MissingCapture(PrivPlaneError, KeyError):
    pass
