"""Data-parallel loss and gradient evaluation over row shards."""
from collections.abc import Callable, Mapping
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..exceptions import NonFiniteError
from .grid import Grid
from .tape import Tape, Var

ShardLoss = Callable[[Tape, Mapping[str, Var], slice], Var]


def _evaluate_shard(
    loss_fn: ShardLoss, params: Mapping[str, Grid], rows: slice
) -> tuple[float, dict[str, Grid]]:
    tape = Tape()
    leaves = {name: tape.leaf(value) for name, value in params.items()}
    loss = loss_fn(tape, leaves, rows)
    tape.backward(loss)
    grads = {
        name: leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        for name, leaf in leaves.items()
    }
    return float(loss.value), grads


def value_and_grad(
    loss_fn: ShardLoss,
    params: Mapping[str, Grid],
    num_rows: int,
    workers: int = 1,
) -> tuple[float, dict[str, Grid]]:
    """Row-weighted mean loss and its gradient over num_rows batch rows.

    loss_fn(tape, params, rows) must return the mean loss of the rows in the
    slice. Each shard runs on its own tape; shard results are combined in
    shard order, so the result does not depend on completion order.

    Raises:
        NonFiniteError: If the loss or a gradient is not finite.
    """
    bounds = np.linspace(0, num_rows, min(workers, num_rows) + 1).astype(int)
    shards = [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:], strict=True)]
    if len(shards) == 1:
        results = [_evaluate_shard(loss_fn, params, shards[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(shards)) as pool:
            results = list(pool.map(lambda rows: _evaluate_shard(loss_fn, params, rows), shards))

    total = 0.0
    grads = {name: np.zeros_like(value) for name, value in params.items()}
    for rows, (loss, shard_grads) in zip(shards, results, strict=True):
        fraction = (rows.stop - rows.start) / num_rows
        total += fraction * loss
        for name, grad in shard_grads.items():
            grads[name] += (fraction * grad).astype(grads[name].dtype)
    if not np.isfinite(total):
        raise NonFiniteError(f"non-finite loss {total}")
    return total, grads
