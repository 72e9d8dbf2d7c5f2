"""Finite-difference verification of tape gradients."""
from collections.abc import Callable, Sequence
from typing import Any

import numpy as np

from ..exceptions import NonFiniteError
from .grid import Grid
from .tape import Tape, Var, record_and_backward


def _evaluate(f: Callable[..., Var], inputs: Sequence[Grid]) -> float:
    tape = Tape(record=False)
    out = f(tape, *[tape.leaf(x) for x in inputs])
    total = float(np.sum(out.value, dtype=np.float64))
    if not np.isfinite(total):
        raise NonFiniteError("non-finite value during finite differencing")
    return total


def grad_check(
    f: Callable[..., Var],
    x: Grid | Sequence[Grid],
    step: float = 1e-3,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare tape gradients of f against central differences.

    Inputs are promoted to float64 before differencing. Returns the maximum over
    checked coordinates of |autodiff - fd| / (|fd| + 1e-8). f must be smooth at
    x: inputs sitting exactly on a kink of a piecewise-linear function are not
    supported and give meaningless results.

    Args:
        f: Computation taking (tape, *vars) and returning a Var.
        x: One input array or a sequence of them.
        step: Central-difference half width.
        max_coords: Check a random subset of at most this many coordinates per input.
        rng: Generator used to pick the subset.

    Raises:
        NonFiniteError: If any evaluation produces a non-finite value.
    """
    arrays: list[Grid] = (
        [np.array(x, dtype=np.float64)]
        if isinstance(x, np.ndarray | float | int)
        else [np.array(item, dtype=np.float64) for item in x]
    )
    _, grads = record_and_backward(f, arrays)
    rng = rng or np.random.default_rng(0)

    worst = 0.0
    for array, grad in zip(arrays, grads, strict=True):
        coords: Any = np.arange(array.size)
        if max_coords is not None and array.size > max_coords:
            coords = rng.choice(array.size, size=max_coords, replace=False)
        flat = array.reshape(-1)
        for index in coords:
            original = flat[index]
            flat[index] = original + step
            upper = _evaluate(f, arrays)
            flat[index] = original - step
            lower = _evaluate(f, arrays)
            flat[index] = original
            numeric = (upper - lower) / (2.0 * step)
            analytic = float(grad.reshape(-1)[index])
            error = abs(analytic - numeric) / (abs(numeric) + 1e-8)
            worst = max(worst, error)
    return worst
