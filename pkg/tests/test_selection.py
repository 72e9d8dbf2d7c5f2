"""
Unit tests for discriminator training, top-k selection and fold evaluation.
"""

import numpy as np
import pandas as pd
import pytest

from diffaug.config import ClassifierNetConfig
from diffaug.diffusion import LabeledSample, stack_samples
from diffaug.evaluation import evaluate_arms
from diffaug.exceptions import CheckpointError, SelectionError
from diffaug.selection import (
    ConvClassifier,
    Discriminator,
    SelectionReport,
    accuracy,
    label_ranks,
    sweep_frame,
    topk_filter,
    topk_sweep,
    train_discriminator,
)


class TableDiscriminator:
    """Scores looked up by the sample's index, stored in its first element"""

    def __init__(self, scores: np.ndarray):
        self.scores = scores

    @property
    def num_classes(self) -> int:
        return self.scores.shape[1]

    def predict_scores(self, x):
        return self.scores[np.asarray(x)[:, 0].astype(int)]


def indexed_samples(n: int) -> np.ndarray:
    return np.arange(n, dtype=np.float32).reshape(n, 1)


def brute_force_accepted(scores: np.ndarray, labels: np.ndarray, k: int) -> int:
    top = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return int(sum(label in row for label, row in zip(labels, top, strict=True)))


# ============================================================================
# Ranking
# ============================================================================


class TestLabelRanks:
    """Tests for rank computation"""

    def test_strict_order(self):
        scores = np.array([[0.1, 0.7, 0.2], [0.9, 0.05, 0.05]])
        np.testing.assert_array_equal(label_ranks(scores, np.array([2, 0])), [1, 0])

    def test_ties_rank_lower_class_first(self):
        scores = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0]])
        np.testing.assert_array_equal(label_ranks(scores, np.array([0, 1])), [0, 1])

    def test_all_equal_scores(self):
        scores = np.zeros((3, 3))
        np.testing.assert_array_equal(label_ranks(scores, np.array([0, 1, 2])), [0, 1, 2])


# ============================================================================
# Top-k filtering
# ============================================================================


class TestTopkFilter:
    """Tests for discriminator-based acceptance"""

    @pytest.fixture
    def random_setup(self):
        rng = np.random.default_rng(42)
        n, classes = 10_000, 10
        scores = rng.standard_normal((n, classes))
        labels = rng.integers(0, classes, size=n)
        return TableDiscriminator(scores), scores, labels

    def test_stub_satisfies_protocol(self, random_setup):
        clf, _, _ = random_setup
        assert isinstance(clf, Discriminator)

    def test_random_scores_accept_one_in_c(self, random_setup):
        """Uninformative scores accept roughly k/C of the samples"""
        clf, _, labels = random_setup
        _, _, report = topk_filter(indexed_samples(len(labels)), labels, clf, k=1)
        assert report.rate == pytest.approx(0.1, abs=0.01)

    @pytest.mark.parametrize("k", [1, 3, 7])
    def test_matches_brute_force(self, random_setup, k):
        clf, scores, labels = random_setup
        samples = indexed_samples(len(labels))
        accepted, kept_labels, report = topk_filter(samples, labels, clf, k)
        expected = brute_force_accepted(scores, labels, k)
        assert report.accepted == expected
        assert len(accepted) == expected
        assert len(kept_labels) == expected

    def test_brute_force_over_many_matrices(self):
        """Small integer scores exercise ties as well as strict orderings"""
        rng = np.random.default_rng(11)
        for _ in range(1000):
            n, classes = int(rng.integers(1, 12)), int(rng.integers(2, 6))
            scores = rng.integers(0, 4, size=(n, classes)).astype(np.float64)
            labels = rng.integers(0, classes, size=n)
            k = int(rng.integers(1, classes + 1))
            _, _, report = topk_filter(indexed_samples(n), labels, TableDiscriminator(scores), k)
            assert report.accepted == brute_force_accepted(scores, labels, k)

    def test_k_equals_classes_accepts_everything(self, random_setup):
        clf, _, labels = random_setup
        accepted, _, report = topk_filter(indexed_samples(len(labels)), labels, clf, k=10)
        assert len(accepted) == len(labels)
        assert report.rate == 1.0

    def test_accepted_samples_keep_their_labels(self):
        scores = np.array([[0.9, 0.1], [0.9, 0.1], [0.2, 0.8]])
        clf = TableDiscriminator(scores)
        accepted, kept, _ = topk_filter(indexed_samples(3), np.array([0, 1, 1]), clf, 1)
        assert [int(a[0]) for a in accepted] == [0, 2]
        np.testing.assert_array_equal(kept, [0, 1])

    def test_inputs_unchanged(self, random_setup):
        clf, _, labels = random_setup
        samples = indexed_samples(len(labels))
        before, labels_before = samples.copy(), labels.copy()
        topk_filter(samples, labels, clf, 2)
        np.testing.assert_array_equal(samples, before)
        np.testing.assert_array_equal(labels, labels_before)

    def test_empty_input(self, random_setup):
        clf, _, _ = random_setup
        accepted, labels, report = topk_filter([], np.array([], dtype=np.int64), clf, 1)
        assert accepted == []
        assert len(labels) == 0
        assert report.total == 0
        assert report.rate == 0.0

    @pytest.mark.parametrize("k", [0, 11])
    def test_k_out_of_range(self, random_setup, k):
        clf, _, labels = random_setup
        with pytest.raises(SelectionError):
            topk_filter(indexed_samples(len(labels)), labels, clf, k)

    def test_length_mismatch(self, random_setup):
        clf, _, _ = random_setup
        with pytest.raises(SelectionError):
            topk_filter(indexed_samples(3), np.array([0, 1]), clf, 1)

    def test_label_out_of_range(self, random_setup):
        clf, _, _ = random_setup
        with pytest.raises(SelectionError):
            topk_filter(indexed_samples(1), np.array([10]), clf, 1)


class TestReports:
    """Tests for selection reports and sweeps"""

    @pytest.fixture
    def sweep(self):
        rng = np.random.default_rng(7)
        scores = rng.standard_normal((500, 5))
        labels = rng.integers(0, 5, size=500)
        return topk_sweep(indexed_samples(500), labels, TableDiscriminator(scores), [1, 2, 3, 4, 5])

    def test_acceptance_is_monotone_in_k(self, sweep):
        accepted = [report.accepted for report in sweep]
        assert accepted == sorted(accepted)
        assert sweep[-1].accepted == 500

    def test_per_class_counts_reconcile(self, sweep):
        for report in sweep:
            per_class = report.accepted_per_class + report.rejected_per_class
            assert per_class.sum() == report.total == 500

    def test_frame_has_total_row(self, tmp_path):
        report = SelectionReport(
            k=1, accepted_per_class=np.array([3, 1]), rejected_per_class=np.array([2, 4])
        )
        path = tmp_path / "selection_report.csv"
        report.write_csv(path)
        frame = pd.read_csv(path, dtype={"class_id": str})
        assert list(frame.columns) == ["class_id", "accepted", "rejected"]
        assert frame["class_id"].tolist() == ["0", "1", "total"]
        assert frame.iloc[-1][["accepted", "rejected"]].tolist() == [4, 6]

    def test_sweep_frame(self, sweep):
        frame = sweep_frame(sweep)
        assert list(frame.columns) == ["k", "accepted", "total", "rate"]
        assert frame["k"].tolist() == [1, 2, 3, 4, 5]
        assert frame["rate"].iloc[-1] == 1.0

    def test_sweep_validates_every_k(self):
        clf = TableDiscriminator(np.zeros((1, 3)))
        with pytest.raises(SelectionError):
            topk_sweep(indexed_samples(1), np.array([0]), clf, [1, 4])


# ============================================================================
# Discriminator training
# ============================================================================


class TestTrainDiscriminator:
    """Tests for the convolutional classifier"""

    def test_separates_patterns(self, pattern_dataset, fast_classifier_config):
        clf = train_discriminator(pattern_dataset, fast_classifier_config)
        grids, labels = stack_samples(pattern_dataset)
        assert clf.num_classes == 2
        assert accuracy(clf, grids, labels) > 0.95

    def test_score_shape(self, pattern_dataset):
        clf = ConvClassifier(ClassifierNetConfig(num_classes=3, base_width=4))
        grids, _ = stack_samples(pattern_dataset[:5])
        assert clf.predict_scores(grids).shape == (5, 3)
        assert clf.predict(grids[:, 0]).shape == (5,)

    def test_needs_two_classes(self, fast_classifier_config):
        one_class = [LabeledSample(np.zeros((8, 8), dtype=np.float32), 0, 1)] * 4
        with pytest.raises(SelectionError):
            train_discriminator(one_class, fast_classifier_config)

    def test_empty_dataset(self, fast_classifier_config):
        with pytest.raises(SelectionError):
            train_discriminator([], fast_classifier_config)

    def test_explicit_class_count(self, pattern_dataset, fast_classifier_config):
        config = fast_classifier_config.model_copy(update={"epochs": 1})
        clf = train_discriminator(pattern_dataset, config, num_classes=4)
        assert clf.params["head.w"].shape == (16, 4)

    def test_accuracy_of_empty_set_is_nan(self):
        clf = TableDiscriminator(np.zeros((1, 2)))
        assert np.isnan(accuracy(clf, np.zeros((0, 1)), np.array([], dtype=np.int64)))

    def test_checkpoint_round_trip(self, tmp_path, pattern_dataset, fast_classifier_config):
        config = fast_classifier_config.model_copy(update={"epochs": 2})
        clf = train_discriminator(pattern_dataset, config)
        path = tmp_path / "discriminator.ckpt"
        clf.save(path)
        assert path.read_bytes()[:4] == b"DISC"
        loaded = ConvClassifier.load(path)
        grids, _ = stack_samples(pattern_dataset)
        np.testing.assert_array_equal(loaded.predict_scores(grids), clf.predict_scores(grids))

    def test_denoiser_checkpoint_rejected(self, tmp_path, tiny_condnet):
        path = tmp_path / "denoiser.ckpt"
        tiny_condnet.save(path)
        with pytest.raises(CheckpointError):
            ConvClassifier.load(path)


# ============================================================================
# Fold evaluation
# ============================================================================


class TestEvaluateArms:
    """Tests for the k-fold augmentation comparison"""

    @pytest.fixture
    def synthetic(self):
        rng = np.random.default_rng(3)
        return [
            LabeledSample(rng.uniform(-1, 1, (8, 8)).astype(np.float32), i % 2, 0)
            for i in range(6)
        ]

    @pytest.fixture
    def mocked_training(self, mocker):
        train = mocker.patch(
            "diffaug.evaluation.train_discriminator",
            return_value=TableDiscriminator(np.zeros((1, 2))),
        )
        mocker.patch("diffaug.evaluation.accuracy", return_value=0.5)
        return train

    def test_frame_layout(
        self, pattern_dataset, fast_classifier_config, synthetic, mocked_training
    ):
        frame = evaluate_arms(
            pattern_dataset, fast_classifier_config, folds=4, synthetic=synthetic
        )
        assert list(frame.columns) == ["arm", "fold", "accuracy"]
        assert frame["arm"].unique().tolist() == ["real", "real+synthetic"]
        assert frame[frame["arm"] == "real"]["fold"].tolist() == ["1", "2", "3", "4", "mean"]
        assert frame["accuracy"].tolist() == [0.5] * 10
        assert mocked_training.call_count == 8

    def test_test_fold_never_trains(
        self, pattern_dataset, fast_classifier_config, mocked_training
    ):
        """Traditional copies of the held-out fold stay out of its training set"""
        traditional = [LabeledSample(s.spectrogram, s.class_id, s.fold) for s in pattern_dataset]
        evaluate_arms(pattern_dataset, fast_classifier_config, folds=4, traditional=traditional)
        for call in mocked_training.call_args_list[4:]:
            train_rows = call.args[0]
            assert len(train_rows) == 24 + 24

    def test_synthetic_rows_added_to_every_split(
        self, pattern_dataset, fast_classifier_config, synthetic, mocked_training
    ):
        evaluate_arms(pattern_dataset, fast_classifier_config, folds=4, synthetic=synthetic)
        sizes = [len(call.args[0]) for call in mocked_training.call_args_list]
        assert sizes == [24] * 4 + [30] * 4

    def test_missing_arms_omitted(self, pattern_dataset, fast_classifier_config, mocked_training):
        frame = evaluate_arms(pattern_dataset, fast_classifier_config, folds=4)
        assert frame["arm"].unique().tolist() == ["real"]

    @pytest.mark.slow
    def test_real_training(self, pattern_dataset, fast_classifier_config):
        frame = evaluate_arms(pattern_dataset, fast_classifier_config, folds=4)
        mean = frame[frame["fold"] == "mean"]["accuracy"].iloc[0]
        assert mean > 0.9
