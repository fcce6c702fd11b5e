"""Exception types shared across the package."""


class MvtfError(Exception):
    """Base class for all package errors."""


class ShapeError(MvtfError):
    """Operands have incompatible shapes. Carries both shapes."""

    def __init__(self, message, shape_a=None, shape_b=None):
        if shape_a is not None or shape_b is not None:
            message = f"{message} (shapes: {shape_a} vs {shape_b})"
        super().__init__(message)
        self.shape_a = shape_a
        self.shape_b = shape_b


class DegenerateInput(MvtfError):
    """Input is technically well-formed but numerically unusable
    (zero variance, empty reduction axis, sequence too short)."""


class NumericalError(MvtfError):
    """A computation produced non-finite values."""


class InputError(MvtfError):
    """A caller-supplied value is outside the accepted domain."""


class FormatError(MvtfError):
    """A serialized artifact does not match the expected file format."""


class ConfigError(MvtfError):
    """A configuration file is missing keys or holds inconsistent values."""
