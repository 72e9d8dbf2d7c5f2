"""Small conditional U-shaped epsilon network built on tape primitives.

Layout for channel_mults (m_0, ..., m_L) and base width b:

    stem conv -> [level i: blocks at width b*m_i, pool unless last] ->
    [level L-1 .. 0: upsample, concat skip, blocks at width b*m_i] -> out conv

Every block is conv3x3 -> add per-channel time/class projection -> SiLU ->
conv3x3 -> SiLU. The conditioning vector is a learned sinusoidal embedding of
t/T passed through a two-layer MLP, plus a class embedding row; row
num_classes of the class table is the null (unconditional) label.
"""
import logging
from collections.abc import Mapping
from pathlib import Path
from typing import Any

import numpy as np

from ..config import CondNetConfig
from ..exceptions import LabelError, ShapeError
from ..numerics.grid import Grid, LabelArray
from ..numerics.tape import Tape, Var
from .checkpoint import load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

DENOISER_MAGIC = b"DENW"


def _he(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Grid:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


def _conv_param(
    params: dict[str, Grid], rng: np.random.Generator, name: str, c_in: int, c_out: int
) -> None:
    params[f"{name}.w"] = _he(rng, (c_out, c_in, 3, 3), c_in * 9)
    params[f"{name}.b"] = np.zeros(c_out, dtype=np.float32)


def _linear_param(
    params: dict[str, Grid], rng: np.random.Generator, name: str, d_in: int, d_out: int
) -> None:
    params[f"{name}.w"] = _he(rng, (d_in, d_out), d_in)
    params[f"{name}.b"] = np.zeros(d_out, dtype=np.float32)


def _block_params(
    params: dict[str, Grid],
    rng: np.random.Generator,
    name: str,
    c_in: int,
    c_out: int,
    time_dim: int,
) -> None:
    _conv_param(params, rng, f"{name}.conv1", c_in, c_out)
    _linear_param(params, rng, f"{name}.cond", time_dim, c_out)
    _conv_param(params, rng, f"{name}.conv2", c_out, c_out)


class CondNetLite:
    """Trainable conditional epsilon model.

    Parameters live in ``params`` (name -> float32 array) in declaration
    order, which is also the checkpoint order. ``apply`` builds the forward
    pass on a caller-supplied tape so training can differentiate it;
    ``predict`` runs it on a non-recording tape.

    Args:
        config: Architecture settings.
        params: Existing parameters; freshly initialized from seed when omitted.
        seed: Initialization seed.
    """

    def __init__(
        self,
        config: CondNetConfig,
        params: Mapping[str, Grid] | None = None,
        seed: int = 0,
    ):
        self.config = config
        expected = self.init_params(config, seed)
        if params is None:
            self.params = expected
        else:
            for name, value in expected.items():
                if name not in params:
                    raise ShapeError(f"missing parameter {name}", value.shape, ())
                if params[name].shape != value.shape:
                    raise ShapeError(f"parameter {name}", params[name].shape, value.shape)
            self.params = {name: np.asarray(params[name]) for name in expected}

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    @property
    def null_label(self) -> int:
        return self.config.num_classes

    @property
    def sample_shape(self) -> tuple[int, ...]:
        cfg = self.config
        return (cfg.in_channels, cfg.image_size, cfg.image_size)

    @property
    def widths(self) -> list[int]:
        return [self.config.base_width * m for m in self.config.channel_mults]

    @staticmethod
    def init_params(config: CondNetConfig, seed: int = 0) -> dict[str, Grid]:
        rng = np.random.default_rng(seed)
        params: dict[str, Grid] = {}
        half = config.sinusoidal_dim // 2
        params["time.freqs"] = rng.standard_normal((1, half)).astype(np.float32)
        _linear_param(params, rng, "time.fc1", config.sinusoidal_dim + 1, config.time_dim)
        _linear_param(params, rng, "time.fc2", config.time_dim, config.time_dim)
        params["class.table"] = (
            rng.standard_normal((config.num_classes + 1, config.time_dim)) * 0.02
        ).astype(np.float32)

        widths = [config.base_width * m for m in config.channel_mults]
        _conv_param(params, rng, "stem", config.in_channels, widths[0])
        c_in = widths[0]
        for level, width in enumerate(widths):
            for block in range(config.blocks_per_level):
                _block_params(
                    params, rng, f"down{level}.block{block}", c_in, width, config.time_dim
                )
                c_in = width
        for level in range(len(widths) - 2, -1, -1):
            c_in = widths[level + 1] + widths[level]
            for block in range(config.blocks_per_level):
                _block_params(
                    params, rng, f"up{level}.block{block}", c_in, widths[level], config.time_dim
                )
                c_in = widths[level]
        _conv_param(params, rng, "out", widths[0], config.in_channels)
        params["out.w"] *= np.float32(0.1)
        return params

    def check_input(self, x: Grid, labels: LabelArray | None) -> None:
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != cfg.in_channels:
            raise ShapeError("condnet input", tuple(x.shape), (-1, cfg.in_channels, -1, -1))
        factor = 2 ** (len(cfg.channel_mults) - 1)
        if x.shape[2] % factor or x.shape[3] % factor:
            raise ShapeError(
                f"spatial dims must be divisible by {factor}", tuple(x.shape[2:]), (factor, factor)
            )
        if labels is not None:
            labels = np.asarray(labels)
            if labels.shape != (x.shape[0],):
                raise LabelError(f"expected {x.shape[0]} labels, got shape {labels.shape}")
            if np.any(labels < 0) or np.any(labels > self.null_label):
                raise LabelError(
                    f"labels must lie in [0, {self.num_classes}] ({self.num_classes} is null)"
                )

    def _embed(self, tape: Tape, p: Mapping[str, Var], t: Grid, labels: LabelArray) -> Var:
        dtype = p["time.freqs"].value.dtype
        t_norm = tape.constant((t / self.config.timesteps).reshape(-1, 1).astype(dtype))
        angles = tape.scale(tape.linear(t_norm, p["time.freqs"]), 2.0 * np.pi)
        features = tape.concat([t_norm, tape.sin(angles), tape.cos(angles)], axis=1)
        h = tape.silu(tape.linear(features, p["time.fc1.w"], p["time.fc1.b"]))
        h = tape.linear(h, p["time.fc2.w"], p["time.fc2.b"])
        return tape.silu(h + tape.take_rows(p["class.table"], labels))

    @staticmethod
    def _block(tape: Tape, p: Mapping[str, Var], name: str, x: Var, cond: Var) -> Var:
        h = tape.conv2d(x, p[f"{name}.conv1.w"], p[f"{name}.conv1.b"])
        h = tape.add_channel_bias(h, tape.linear(cond, p[f"{name}.cond.w"], p[f"{name}.cond.b"]))
        h = tape.silu(h)
        return tape.silu(tape.conv2d(h, p[f"{name}.conv2.w"], p[f"{name}.conv2.b"]))

    def apply(
        self,
        tape: Tape,
        params: Mapping[str, Var],
        x: Var,
        t: Any,
        labels: LabelArray | None = None,
    ) -> Var:
        """Forward pass on tape; labels None means every row is unconditional."""
        n = x.shape[0]
        self.check_input(x.value, labels)
        t_rows = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
        label_rows = (
            np.full(n, self.null_label, dtype=np.int64) if labels is None else np.asarray(labels)
        )
        cond = self._embed(tape, params, t_rows, label_rows)

        h = tape.conv2d(x, params["stem.w"], params["stem.b"])
        skips: list[Var] = []
        levels = len(self.config.channel_mults)
        for level in range(levels):
            for block in range(self.config.blocks_per_level):
                h = self._block(tape, params, f"down{level}.block{block}", h, cond)
            if level < levels - 1:
                skips.append(h)
                h = tape.avg_pool2(h)
        for level in range(levels - 2, -1, -1):
            h = tape.concat([tape.upsample2(h), skips[level]], axis=1)
            for block in range(self.config.blocks_per_level):
                h = self._block(tape, params, f"up{level}.block{block}", h, cond)
        return tape.conv2d(h, params["out.w"], params["out.b"])

    def predict(self, x_t: Grid, t: Any, labels: LabelArray | None = None) -> Grid:
        """Epsilon prediction for a (n, C, H, W) batch."""
        tape = Tape(record=False)
        params = {name: tape.constant(value) for name, value in self.params.items()}
        dtype = next(iter(self.params.values())).dtype
        x = tape.constant(np.asarray(x_t, dtype=dtype))
        return self.apply(tape, params, x, t, labels).value.astype(x_t.dtype, copy=False)

    def with_params(self, params: Mapping[str, Grid]) -> "CondNetLite":
        return CondNetLite(self.config, params)

    def astype(self, dtype: Any) -> "CondNetLite":
        return CondNetLite(
            self.config, {name: value.astype(dtype) for name, value in self.params.items()}
        )

    def save(self, path: Path) -> None:
        save_checkpoint(path, DENOISER_MAGIC, self.config, self.params)
        logger.info("Saved denoiser checkpoint to %s", path)

    @classmethod
    def load(cls, path: Path) -> "CondNetLite":
        config_json, params = load_checkpoint(path, DENOISER_MAGIC)
        return cls(CondNetConfig.model_validate_json(config_json), params)


def condnet_predict(
    model: CondNetLite, x_t: Grid, t: Any, label: int | LabelArray | None = None
) -> Grid:
    """Predict epsilon for one (C, H, W) grid or a batch.

    label may be a single class id (applied to every row), a per-row array,
    or None / model.null_label for the unconditional branch.

    Raises:
        ShapeError: If spatial dims are not divisible by 2^(levels-1).
        LabelError: If a label is outside [0, num_classes].
    """
    x = np.asarray(x_t)
    single = x.ndim == 3
    batch = x[None] if single else x
    labels: LabelArray | None = None
    if label is not None:
        labels = np.broadcast_to(np.asarray(label, dtype=np.int64), (batch.shape[0],))
    out = model.predict(batch, t, labels)
    return out[0] if single else out
