"""Dense real-valued arrays used throughout the toolkit.

A Grid is a numpy array of 32-bit floats (64-bit is accepted where an oracle
needs the headroom). Reductions accumulate in 64-bit and cast back.
"""
from typing import Any

import numpy as np
import numpy.typing as npt

from ..exceptions import NonFiniteError, ShapeError

Grid = npt.NDArray[np.floating[Any]]
LabelArray = npt.NDArray[np.integer[Any]]

DEFAULT_DTYPE = np.float32


def as_grid(data: Any, dtype: npt.DTypeLike = DEFAULT_DTYPE) -> Grid:
    """Convert array-like data into a finite Grid of the given dtype."""
    grid = np.asarray(data, dtype=dtype)
    check_finite(grid, "grid")
    return grid


def check_finite(value: npt.NDArray[Any], what: str) -> None:
    """Raise NonFiniteError if any element of value is NaN or infinite."""
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite values in {what}")


def check_same_shape(a: npt.NDArray[Any], b: npt.NDArray[Any], what: str) -> None:
    """Raise ShapeError naming both shapes when they differ."""
    if a.shape != b.shape:
        raise ShapeError(f"{what} shape mismatch", tuple(a.shape), tuple(b.shape))


def sum64(x: Grid, axis: int | tuple[int, ...] | None = None) -> Grid:
    """Sum with 64-bit accumulation, returned in the input dtype."""
    return np.asarray(np.sum(x, axis=axis, dtype=np.float64), dtype=x.dtype)


def mean64(x: Grid, axis: int | tuple[int, ...] | None = None) -> Grid:
    """Mean with 64-bit accumulation, returned in the input dtype."""
    return np.asarray(np.mean(x, axis=axis, dtype=np.float64), dtype=x.dtype)


def broadcast_rows(coefficient: float | Grid, like: Grid) -> float | Grid:
    """Reshape a per-row coefficient vector so it broadcasts over like's trailing axes.

    Scalars pass through unchanged.
    """
    coefficient_array = np.asarray(coefficient)
    if coefficient_array.ndim == 0:
        return float(coefficient_array)
    if coefficient_array.shape[0] != like.shape[0]:
        raise ShapeError(
            "per-row coefficient length", tuple(coefficient_array.shape), tuple(like.shape)
        )
    return coefficient_array.reshape((-1,) + (1,) * (like.ndim - 1))
