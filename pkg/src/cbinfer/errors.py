"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Operands have incompatible dimensions."""


class GeometryError(ValueError):
    """A convolution or pooling geometry yields an empty output."""


class BoundsError(IndexError):
    """A coordinate or pixel index lies outside its grid."""


class LoadError(Exception):
    """A network, weight or sequence file could not be loaded."""
