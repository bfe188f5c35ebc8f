"""Exception types shared across the pipeline."""


class ShapeError(ValueError):
    """Tensor or matrix dimensions are incompatible."""


class FormatError(ValueError):
    """An input file does not follow the expected layout."""


class SplitError(ValueError):
    """A speaker-disjoint split cannot be produced."""


class IntegrityError(ValueError):
    """A container file failed its checksum or is truncated."""


class VersionError(ValueError):
    """A container file was written with an unsupported format version."""


class NumericError(ArithmeticError):
    """A non-finite value showed up where finite numbers are required."""

    def __init__(self, message: str, name: str | None = None):
        super().__init__(message)
        self.name = name


class ContractWarning(UserWarning):
    """An input violates a soft precondition; computation continued."""
