"""AdamW with decoupled weight decay."""
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from ..config import AdamWConfig
from ..exceptions import NonFiniteError
from .grid import Grid, check_same_shape


@dataclass
class AdamWState:
    """First/second moments and step counter for one parameter set."""

    config: AdamWConfig
    m: dict[str, Grid] = field(default_factory=dict)
    v: dict[str, Grid] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def create(cls, params: Mapping[str, Grid], config: AdamWConfig | None = None) -> "AdamWState":
        return cls(
            config=config or AdamWConfig(),
            m={name: np.zeros_like(p) for name, p in params.items()},
            v={name: np.zeros_like(p) for name, p in params.items()},
        )


def adamw_step(
    params: Mapping[str, Grid], grads: Mapping[str, Grid], state: AdamWState
) -> dict[str, Grid]:
    """Apply one AdamW update and return the new parameters.

    p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)

    The input mapping is left untouched; state moments and the step counter
    are advanced in place.

    Raises:
        NonFiniteError: If any gradient contains NaN or infinity.
        ShapeError: If a gradient's shape differs from its parameter's.
    """
    for name, grad in grads.items():
        check_same_shape(params[name], grad, f"gradient of {name}")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"non-finite gradient for {name}; aborting update")

    cfg = state.config
    state.step += 1
    bias1 = 1.0 - cfg.beta1**state.step
    bias2 = 1.0 - cfg.beta2**state.step

    updated: dict[str, Grid] = {}
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            updated[name] = param
            continue
        m = state.m.setdefault(name, np.zeros_like(param))
        v = state.v.setdefault(name, np.zeros_like(param))
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad
        state.m[name], state.v[name] = m, v
        m_hat = m / bias1
        v_hat = v / bias2
        step = m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * param
        updated[name] = (param - cfg.lr * step).astype(param.dtype)
    return updated
