"""Exception hierarchy.

Every error carries the CLI exit code it maps to, so the command-line layer
does not need a lookup table.
"""


class SaltSegError(Exception):
    exit_code = 1


class ShapeError(SaltSegError, ValueError):
    """Tensor dimensions do not fit the operation."""

    exit_code = 2


class ValidationError(SaltSegError, ValueError):
    """An argument or value is outside its allowed domain."""

    exit_code = 1


class StateError(SaltSegError, RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""


class DataError(SaltSegError):
    exit_code = 2


class LoadError(DataError):
    """A dataset directory is inconsistent (e.g. an image has no mask)."""


class DimensionError(DataError, ShapeError):
    """An image file has the wrong pixel dimensions."""


class ImageFormatError(DataError):
    """An image file could not be decoded."""


class NumericError(SaltSegError, ArithmeticError):
    """A NaN or infinity appeared where finite values are required."""

    exit_code = 3


class CheckpointError(SaltSegError):
    exit_code = 4


class CheckpointFormatError(CheckpointError):
    """Wrong magic bytes or an unparseable header."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointIntegrityError(CheckpointError):
    """The payload checksum does not match."""


class CheckpointIncompatibleError(CheckpointError):
    """The stored model-spec hash does not match the expected architecture."""
