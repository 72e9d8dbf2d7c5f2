"""K-fold comparison of classifiers trained with and without augmentation."""
import logging
from collections.abc import Sequence

import numpy as np
import pandas as pd

from .config import ClassifierConfig
from .data import kfold_splits
from .diffusion import LabeledSample, stack_samples
from .selection import accuracy, train_discriminator

logger = logging.getLogger(__name__)


def evaluate_arms(
    real: Sequence[LabeledSample],
    config: ClassifierConfig,
    folds: int = 10,
    traditional: Sequence[LabeledSample] = (),
    synthetic: Sequence[LabeledSample] = (),
    unfiltered: Sequence[LabeledSample] = (),
    num_classes: int | None = None,
) -> pd.DataFrame:
    """Fold-wise test accuracy for every available training arm.

    Each split tests on the real rows of one fold. Arms train on the real
    rows of the other folds plus, respectively, nothing (``real``),
    traditionally augmented clips from the other folds (``real+traditional``),
    synthetic samples (``real+synthetic``) and unfiltered synthetic samples
    (``real+unfiltered``). Arms without extra data are omitted. Synthetic
    samples never enter a test set.

    Returns:
        Frame with columns arm, fold, accuracy; each arm ends with a row whose
        fold is ``mean``.
    """
    num_classes = num_classes or max(s.class_id for s in real) + 1
    arms: dict[str, Sequence[LabeledSample]] = {"real": ()}
    if traditional:
        arms["real+traditional"] = traditional
    if synthetic:
        arms["real+synthetic"] = synthetic
    if unfiltered:
        arms["real+unfiltered"] = unfiltered

    records: list[dict[str, object]] = []
    splits = kfold_splits(real, folds)
    for arm, extra in arms.items():
        scores = []
        for split in splits:
            added = [s for s in extra if s.fold != split.test_fold]
            clf = train_discriminator(list(split.train) + added, config, num_classes)
            grids, labels = stack_samples(split.test)
            score = accuracy(clf, grids, labels)
            logger.info("%s fold %d accuracy %.4f", arm, split.test_fold, score)
            records.append({"arm": arm, "fold": str(split.test_fold), "accuracy": score})
            scores.append(score)
        records.append({"arm": arm, "fold": "mean", "accuracy": float(np.mean(scores))})
    return pd.DataFrame.from_records(records, columns=["arm", "fold", "accuracy"])
