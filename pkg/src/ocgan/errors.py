"""Exception types raised across the package."""


class OcganError(Exception):
    pass


class FormatError(OcganError, ValueError):
    """Bytes do not follow the expected container layout (IDX or checkpoint)."""


class TruncationError(FormatError):
    pass


class UnsupportedDtype(FormatError):
    pass


class EmptyClassError(OcganError, ValueError):
    pass


class InsufficientNegatives(OcganError, ValueError):
    pass


class ArchitectureError(OcganError, ValueError):
    pass


class ShapeError(OcganError, ValueError):
    pass


class DivergenceError(OcganError, RuntimeError):
    def __init__(self, iteration, message="non-finite loss"):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration


class DegenerateLabelsError(OcganError, ValueError):
    pass


class ConfigMismatchError(OcganError, ValueError):
    pass


class UsageError(OcganError, ValueError):
    pass
