"""Input validation helpers shared by the estimator, CLI, and file loaders."""

from __future__ import annotations

import math

import numpy as np

from .exceptions import InvalidInputError, InvalidParameterError


def as_float_array(x, name: str, shape: tuple | None = None,
                   ndim: int | None = None, allow_nonfinite: bool = False) -> np.ndarray:
    """Coerce to a float64 array and check shape/dimensionality/finiteness.

    ``shape`` entries of -1 accept any extent.
    """
    try:
        arr = np.asarray(x, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise InvalidInputError(f"{name} is not numeric: {e}") from e
    if ndim is not None and arr.ndim != ndim:
        raise InvalidInputError(f"{name} must have {ndim} dimensions, got {arr.ndim}")
    if shape is not None:
        if arr.ndim != len(shape):
            raise InvalidInputError(
                f"{name} must have shape {shape}, got {arr.shape}"
            )
        for want, got in zip(shape, arr.shape):
            if want != -1 and want != got:
                raise InvalidInputError(f"{name} must have shape {shape}, got {arr.shape}")
    if not allow_nonfinite and not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


def check_frames(x, name: str = "frames") -> np.ndarray:
    """Validate a (T, N, 3) stack of vertex frames with T >= 2."""
    arr = as_float_array(x, name, ndim=3)
    if arr.shape[2] != 3:
        raise InvalidInputError(f"{name} must be (T, N, 3), got {arr.shape}")
    if arr.shape[0] < 2:
        raise InvalidInputError(f"{name} needs at least 2 frames, got {arr.shape[0]}")
    if arr.shape[1] < 1:
        raise InvalidInputError(f"{name} has no vertices")
    return arr


def check_positive(value, name: str, allow_inf: bool = False) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError) as e:
        raise InvalidParameterError(f"{name} must be a number") from e
    if math.isnan(v) or v <= 0 or (math.isinf(v) and not allow_inf):
        raise InvalidParameterError(f"{name} must be positive, got {value!r}")
    return v


def check_count(value, name: str, minimum: int = 1) -> int:
    try:
        v = int(value)
    except (TypeError, ValueError) as e:
        raise InvalidParameterError(f"{name} must be an integer") from e
    if v != value or v < minimum:
        raise InvalidParameterError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return v
