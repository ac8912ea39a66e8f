"""Exceptions and small argument checks shared across the package."""

import numbers

import numpy as np


class InvalidArgument(ValueError):
    """Raised when an argument violates an operation's precondition."""


class FormatError(ValueError):
    """Raised when a file does not match its declared binary/text layout.

    ``offset`` is the byte offset and ``line`` the 1-based line number (for
    text manifests) at which parsing failed, when known.
    """

    def __init__(self, message, offset=None, line=None):
        if line is not None:
            message = f"{message} (line {line})"
        elif offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset
        self.line = line


def check_positive_int(value, name):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise InvalidArgument(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_positive_real(value, name):
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise InvalidArgument(f"{name} must be a real number, got {value!r}") from None
    if not np.isfinite(value) or value <= 0:
        raise InvalidArgument(f"{name} must be positive and finite, got {value!r}")
    return value


def check_odd(value, name):
    value = check_positive_int(value, name)
    if value % 2 == 0:
        raise InvalidArgument(f"{name} must be odd, got {value}")
    return value


def frozen_array(data, dtype=np.float64):
    """Return a read-only float copy of ``data``."""
    arr = np.array(data, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr
