"""Dense arrays, reverse-mode autodiff and AdamW."""

from .grid import Grid, LabelArray, as_grid, check_finite, check_same_shape, mean64, sum64
from .gradcheck import grad_check
from .optim import AdamWState, adamw_step
from .shards import value_and_grad
from .tape import Tape, Var, record_and_backward

__all__ = [
    "AdamWState",
    "Grid",
    "LabelArray",
    "Tape",
    "Var",
    "adamw_step",
    "as_grid",
    "check_finite",
    "check_same_shape",
    "grad_check",
    "mean64",
    "record_and_backward",
    "sum64",
    "value_and_grad",
]
