"""Top-k selection of generated samples by a trained discriminator.

A generated sample with conditioning label c is accepted when c is among the
k classes the discriminator scores highest on it. Ties rank the lower class
index first.
"""
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np
import pandas as pd

from .config import ClassifierConfig, ClassifierNetConfig
from .denoisers.checkpoint import load_checkpoint, save_checkpoint
from .diffusion import LabeledSample, stack_samples
from .exceptions import NonFiniteError, SelectionError, TrainingError
from .numerics import AdamWState, Tape, Var, adamw_step, value_and_grad
from .numerics.grid import Grid, LabelArray

logger = logging.getLogger(__name__)

DISCRIMINATOR_MAGIC = b"DISC"


@runtime_checkable
class Discriminator(Protocol):
    """Anything producing (n, C) class scores for a batch of grids."""

    @property
    def num_classes(self) -> int: ...

    def predict_scores(self, x: Grid) -> Grid: ...


class ConvClassifier:
    """Three conv blocks, global average pooling and a linear head.

    Block widths are base, 2*base and 4*base; the first two blocks end in 2x2
    average pooling. Inputs are (n, C, H, W) with H and W divisible by 4, or
    (n, H, W) single-channel grids.
    """

    def __init__(
        self, config: ClassifierNetConfig, params: Mapping[str, Grid] | None = None, seed: int = 0
    ):
        self.config = config
        expected = self.init_params(config, seed)
        if params is None:
            self.params = expected
        else:
            missing = [name for name in expected if name not in params]
            if missing:
                raise SelectionError(f"classifier parameters missing: {', '.join(missing)}")
            self.params = {name: np.asarray(params[name]) for name in expected}

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    @staticmethod
    def init_params(config: ClassifierNetConfig, seed: int = 0) -> dict[str, Grid]:
        rng = np.random.default_rng(seed)
        params: dict[str, Grid] = {}
        c_in = config.in_channels
        for index, mult in enumerate((1, 2, 4)):
            width = config.base_width * mult
            fan_in = c_in * 9
            params[f"block{index}.w"] = (
                rng.standard_normal((width, c_in, 3, 3)) * np.sqrt(2.0 / fan_in)
            ).astype(np.float32)
            params[f"block{index}.b"] = np.zeros(width, dtype=np.float32)
            c_in = width
        params["head.w"] = (
            rng.standard_normal((c_in, config.num_classes)) * np.sqrt(1.0 / c_in)
        ).astype(np.float32)
        params["head.b"] = np.zeros(config.num_classes, dtype=np.float32)
        return params

    def apply(self, tape: Tape, params: Mapping[str, Var], x: Var) -> Var:
        h = x
        for index in range(3):
            h = tape.silu(tape.conv2d(h, params[f"block{index}.w"], params[f"block{index}.b"]))
            if index < 2:
                h = tape.avg_pool2(h)
        return tape.linear(tape.global_avg_pool(h), params["head.w"], params["head.b"])

    def predict_scores(self, x: Grid) -> Grid:
        """Logits for a batch of grids."""
        batch = _channels(x)
        tape = Tape(record=False)
        params = {name: tape.constant(value) for name, value in self.params.items()}
        return self.apply(tape, params, tape.constant(batch.astype(np.float32))).value

    def predict(self, x: Grid) -> LabelArray:
        return np.argmax(self.predict_scores(x), axis=1)

    def save(self, path: Path) -> None:
        save_checkpoint(path, DISCRIMINATOR_MAGIC, self.config, self.params)

    @classmethod
    def load(cls, path: Path) -> "ConvClassifier":
        config_json, params = load_checkpoint(path, DISCRIMINATOR_MAGIC)
        return cls(ClassifierNetConfig.model_validate_json(config_json), params)


def _channels(x: Grid) -> Grid:
    batch = np.asarray(x)
    return batch[:, None] if batch.ndim == 3 else batch


def batched_scores(clf: Discriminator, x: Grid | Sequence[Grid], batch_size: int = 64) -> Grid:
    """predict_scores over a large stack in batches."""
    stacked = np.stack(list(x)) if not isinstance(x, np.ndarray) else x
    parts = [
        clf.predict_scores(stacked[start : start + batch_size])
        for start in range(0, len(stacked), batch_size)
    ]
    scores = np.concatenate(parts, axis=0)
    if not np.all(np.isfinite(scores)):
        raise NonFiniteError("discriminator produced non-finite scores")
    return scores


def accuracy(clf: Discriminator, grids: Grid, labels: LabelArray) -> float:
    """Fraction of rows whose highest score is the true label."""
    if len(labels) == 0:
        return float("nan")
    scores = batched_scores(clf, grids)
    return float(np.mean(np.argmax(scores, axis=1) == np.asarray(labels)))


def train_discriminator(
    dataset: Sequence[LabeledSample],
    config: ClassifierConfig,
    num_classes: int | None = None,
) -> ConvClassifier:
    """Train a ConvClassifier with label-smoothed cross-entropy and AdamW.

    Raises:
        SelectionError: If fewer than two classes are present.
        TrainingError: If the loss becomes non-finite.
    """
    if not dataset:
        raise SelectionError("cannot train a discriminator on an empty dataset")
    grids, labels = stack_samples(dataset)
    present = np.unique(labels)
    if present.size < 2:
        raise SelectionError(f"discriminator needs at least 2 classes, got {present.tolist()}")
    num_classes = num_classes or int(labels.max()) + 1
    clf = ConvClassifier(
        ClassifierNetConfig(
            num_classes=num_classes, in_channels=grids.shape[1], base_width=config.base_width
        ),
        seed=config.seed,
    )
    rng = np.random.default_rng(config.seed)
    params = dict(clf.params)
    state = AdamWState.create(params, config.optimizer)
    n = len(dataset)
    logger.info("Training discriminator on %d samples, %d classes", n, num_classes)

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            rows = order[start : start + config.batch_size]
            x_batch, y_batch = grids[rows], labels[rows]

            def shard_loss(tape: Tape, leaves: Mapping[str, Var], part: slice) -> Var:
                logits = clf.apply(tape, leaves, tape.constant(x_batch[part]))
                return tape.softmax_cross_entropy(logits, y_batch[part], config.label_smoothing)

            try:
                loss, grads = value_and_grad(shard_loss, params, len(rows), config.workers)
            except NonFiniteError as e:
                raise TrainingError(f"discriminator epoch {epoch}: {e}") from e
            params = adamw_step(params, grads, state)
            total += loss * len(rows)
        logger.debug("discriminator epoch %d loss %.6f", epoch, total / n)

    clf.params = params
    logger.info("Discriminator training accuracy %.3f", accuracy(clf, grids, labels))
    return clf


@dataclass(frozen=True)
class SelectionReport:
    """Accepted/rejected counts per class for one k."""

    k: int
    accepted_per_class: LabelArray
    rejected_per_class: LabelArray

    @property
    def accepted(self) -> int:
        return int(self.accepted_per_class.sum())

    @property
    def total(self) -> int:
        return int(self.accepted_per_class.sum() + self.rejected_per_class.sum())

    @property
    def rate(self) -> float:
        return self.accepted / self.total if self.total else 0.0

    def to_frame(self) -> pd.DataFrame:
        """Rows class_id, accepted, rejected plus a ``total`` summary row."""
        frame = pd.DataFrame(
            {
                "class_id": [str(c) for c in range(len(self.accepted_per_class))],
                "accepted": self.accepted_per_class,
                "rejected": self.rejected_per_class,
            }
        )
        summary = pd.DataFrame(
            {
                "class_id": ["total"],
                "accepted": [self.accepted],
                "rejected": [self.total - self.accepted],
            }
        )
        return pd.concat([frame, summary], ignore_index=True)

    def write_csv(self, path: Path) -> None:
        self.to_frame().to_csv(path, index=False)


def label_ranks(scores: Grid, labels: LabelArray) -> LabelArray:
    """Zero-based rank of each row's label among its class scores.

    Classes scoring strictly higher come first; among equal scores the lower
    class index ranks first.
    """
    n, num_classes = scores.shape
    own = scores[np.arange(n), labels][:, None]
    higher = scores > own
    tied_before = (scores == own) & (np.arange(num_classes)[None, :] < labels[:, None])
    return np.sum(higher | tied_before, axis=1)


def _report(ranks: LabelArray, labels: LabelArray, k: int, num_classes: int) -> SelectionReport:
    accepted = ranks < k
    return SelectionReport(
        k=k,
        accepted_per_class=np.bincount(labels[accepted], minlength=num_classes),
        rejected_per_class=np.bincount(labels[~accepted], minlength=num_classes),
    )


def _validate(samples: Sequence[Grid] | Grid, labels: LabelArray, num_classes: int) -> LabelArray:
    labels = np.asarray(labels, dtype=np.int64)
    if len(samples) != len(labels):
        raise SelectionError(f"{len(samples)} samples but {len(labels)} labels")
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise SelectionError(f"labels must lie in [0, {num_classes})")
    return labels


def _check_k(k: int, num_classes: int) -> None:
    if not 1 <= k <= num_classes:
        raise SelectionError(f"k must lie in [1, {num_classes}], got {k}")


def topk_filter(
    samples: Sequence[Grid] | Grid,
    labels: LabelArray,
    clf: Discriminator,
    k: int,
) -> tuple[list[Grid], LabelArray, SelectionReport]:
    """Keep samples whose label is in the discriminator's top-k classes.

    Inputs are left unmodified. Returns (accepted samples, their labels, report).

    Raises:
        SelectionError: If k is outside [1, C] or lengths differ.
    """
    _check_k(k, clf.num_classes)
    labels = _validate(samples, labels, clf.num_classes)
    if len(labels) == 0:
        empty = np.zeros(clf.num_classes, dtype=np.int64)
        return [], labels, SelectionReport(k=k, accepted_per_class=empty, rejected_per_class=empty)
    ranks = label_ranks(batched_scores(clf, samples), labels)
    keep = np.flatnonzero(ranks < k)
    report = _report(ranks, labels, k, clf.num_classes)
    logger.info("top-%d selection accepted %d of %d", k, report.accepted, report.total)
    return [samples[i] for i in keep], labels[keep], report


def topk_sweep(
    samples: Sequence[Grid] | Grid,
    labels: LabelArray,
    clf: Discriminator,
    ks: Sequence[int],
) -> list[SelectionReport]:
    """One SelectionReport per k, scoring the samples once."""
    for k in ks:
        _check_k(k, clf.num_classes)
    labels = _validate(samples, labels, clf.num_classes)
    if len(labels) == 0:
        empty = np.zeros(clf.num_classes, dtype=np.int64)
        return [
            SelectionReport(k=k, accepted_per_class=empty, rejected_per_class=empty) for k in ks
        ]
    ranks = label_ranks(batched_scores(clf, samples), labels)
    return [_report(ranks, labels, k, clf.num_classes) for k in ks]


def sweep_frame(reports: Sequence[SelectionReport]) -> pd.DataFrame:
    """Columns k, accepted, total, rate."""
    return pd.DataFrame(
        {
            "k": [r.k for r in reports],
            "accepted": [r.accepted for r in reports],
            "total": [r.total for r in reports],
            "rate": [r.rate for r in reports],
        }
    )
