"""Validation helpers shared by the value types and the file reader."""

import math
from collections.abc import Iterable

from rigba.errors import DomainError


def as_finite_tuple(values: Iterable[float], length: int, name: str) -> tuple[float, ...]:
    """
    Convert values to a tuple of Python floats and check shape and finiteness.

    Args:
        values: Any iterable of numbers (list, tuple, numpy array)
        length: Required number of components
        name: Field name used in the error message

    Returns:
        Tuple of floats

    Raises:
        DomainError: wrong length or a non-finite component
    """
    out = tuple(float(v) for v in values)
    if len(out) != length:
        raise DomainError(f"{name} must have {length} components, got {len(out)}")
    if not all(math.isfinite(v) for v in out):
        raise DomainError(f"{name} must be finite, got {out}")
    return out


def require_positive(value: float, name: str) -> float:
    """Return value as float, raising DomainError unless it is finite and > 0."""
    value = float(value)
    if not math.isfinite(value) or value <= 0:
        raise DomainError(f"{name} must be positive, got {value}")
    return value
