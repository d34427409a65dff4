"""Exception types shared across the package."""


class DegenerateGeometryError(ValueError):
    """A quadrilateral or transform is too degenerate to work with."""


class InvalidParameterError(ValueError):
    """An argument is outside the range an operation accepts."""


class ManifestError(ValueError):
    """A dataset manifest failed to parse or validate."""


class ImageLoadError(OSError):
    """An image file could not be read or decoded."""


class GenerationError(ValueError):
    """A synthetic scene specification cannot be rendered."""
