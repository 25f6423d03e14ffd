"""Exception types raised across the package."""


class NumericalError(RuntimeError):
    """A numerical kernel failed (e.g. SVD did not converge)."""


class DomainError(ValueError):
    """Inputs are well-formed but the quantity is undefined on them."""


class FormatError(ValueError):
    """A file does not follow the expected on-disk layout."""


class ImageIOError(OSError):
    """An image file could not be read or has an unsupported encoding."""
