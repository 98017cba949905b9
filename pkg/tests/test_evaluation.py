"""Tests for assignment, clustering metrics and the evaluation protocols."""

import itertools

import numpy as np
import pytest

from src.data import DiscoveryDataset
from src.errors import ConfigurationError, ContractError
from src.evaluation import (
    ari, cluster_accuracy, cluster_mapping, evaluate_all, evaluate_task_agnostic, evaluate_task_aware,
    hungarian, nmi,
)
from src.model import ModelState


def brute_force_accuracy(y_true, y_pred):
    labels = sorted(set(y_true) | set(y_pred))
    best = 0
    for perm in itertools.permutations(labels):
        mapping = dict(zip(labels, perm))
        best = max(best, sum(mapping[p] == t for t, p in zip(y_true, y_pred)))
    return best / len(y_true)


class TestHungarian:

    def test_identity_favouring_cost(self):
        cost = 1.0 - np.eye(4)
        np.testing.assert_array_equal(hungarian(cost), [0, 1, 2, 3])

    def test_two_by_two(self):
        cost = np.array([[4.0, 1.0], [2.0, 3.0]])
        perm = hungarian(cost)
        np.testing.assert_array_equal(perm, [1, 0])
        assert cost[[0, 1], perm].sum() == 3.0

    def test_matches_exhaustive_search(self, rng):
        for _ in range(50):
            cost = rng.uniform(size=(6, 6))
            perm = hungarian(cost)
            best = min(sum(cost[i, p[i]] for i in range(6)) for p in itertools.permutations(range(6)))
            assert cost[np.arange(6), perm].sum() == pytest.approx(best, abs=1e-12)

    def test_ties_resolve_lexicographically(self):
        np.testing.assert_array_equal(hungarian(np.zeros((3, 3))), [0, 1, 2])

    def test_rejects_rectangular(self):
        with pytest.raises(ContractError):
            hungarian(np.zeros((2, 3)))


class TestClusterAccuracy:

    def test_relabelled_partition_is_perfect(self):
        y_true = np.array([0, 0, 1, 2, 2, 2])
        assert cluster_accuracy(y_true, np.array([2, 0, 1])[y_true]) == 1.0

    def test_single_predicted_cluster(self):
        assert cluster_accuracy([0, 0, 1, 1], [1, 1, 1, 1]) == 0.5

    def test_three_clusters_against_brute_force(self):
        y_true, y_pred = [0, 0, 1, 1, 2, 2], [1, 1, 0, 0, 0, 2]
        assert cluster_accuracy(y_true, y_pred) == pytest.approx(brute_force_accuracy(y_true, y_pred))
        assert cluster_accuracy(y_true, y_pred) == pytest.approx(5 / 6)

    def test_mapping_is_returned(self):
        _, mapping = cluster_mapping([5, 5, 7], [1, 1, 0])
        assert mapping[1] == 5

    @pytest.mark.parametrize("classes", [2, 3, 5])
    def test_bounded_by_chance_and_one(self, rng, classes):
        y_true = np.repeat(np.arange(classes), 12)
        for _ in range(20):
            acc = cluster_accuracy(y_true, rng.integers(0, classes, y_true.size))
            assert 1.0 / classes - 1e-12 <= acc <= 1.0

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            cluster_accuracy([0, 1], [0])


class TestPartitionScores:

    def test_identical_partitions(self):
        assert nmi([0, 0, 1, 1, 2], [0, 0, 1, 1, 2]) == pytest.approx(1.0)
        assert ari([0, 0, 1, 1, 2], [0, 0, 1, 1, 2]) == pytest.approx(1.0)

    def test_independent_partitions(self):
        assert nmi([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(0.0, abs=1e-12)
        assert ari([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(-0.5)

    def test_relabelling_invariance(self, rng):
        y_true = rng.integers(0, 4, 50)
        y_pred = rng.integers(0, 4, 50)
        moved = np.array([3, 1, 0, 2])[y_pred]
        assert nmi(y_true, moved) == pytest.approx(nmi(y_true, y_pred), abs=1e-12)
        assert ari(y_true, moved) == pytest.approx(ari(y_true, y_pred), abs=1e-12)

    def test_symmetric_in_arguments(self, rng):
        for _ in range(10):
            a = rng.integers(0, 4, 40)
            b = rng.integers(0, 3, 40)
            assert nmi(a, b) == pytest.approx(nmi(b, a), abs=1e-12)
            assert ari(a, b) == pytest.approx(ari(b, a), abs=1e-12)

    def test_ari_needs_two_samples(self):
        with pytest.raises(ContractError):
            ari([0], [0])


def handcrafted_model():
    """
    Encoder passes tanh(x) through; the known head scales it by 10 and the
    novel head always votes for its first slot with logit 1.
    """
    eye = np.eye(2)
    params = {
        "encoder.W1": eye.copy(), "encoder.b1": np.zeros(2),
        "encoder.W2": eye.copy(), "encoder.b2": np.zeros(2),
        "known_head.W": 10.0 * eye, "known_head.b": np.zeros(2),
        "novel_head.W1": eye.copy(), "novel_head.b1": np.zeros(2),
        "novel_head.W2": np.zeros((2, 2)), "novel_head.b2": np.array([1.0, 0.0]),
    }
    return ModelState(params=params, tau=0.1, cosine_heads=False)


@pytest.fixture
def toy_test_set():
    # two class-2 samples look like known class 0; two class-3 samples sit at the origin
    return DiscoveryDataset(
        labeled_features=np.array([[3.0, -3.0], [-3.0, 3.0]]),
        labeled_labels=np.array([0, 1]),
        unlabeled_features=np.array([[3.0, -3.0], [3.0, -3.0], [0.0, 0.0], [0.0, 0.0]]),
        unlabeled_hidden_labels=np.array([2, 2, 3, 3]),
        num_known=2,
        num_novel=2,
    )


class TestProtocols:

    def test_task_aware(self, toy_test_set):
        report = evaluate_task_aware(handcrafted_model(), toy_test_set)
        assert report.known_acc == 1.0
        assert report.novel_cluster_acc == 0.5
        assert report.all_acc == pytest.approx(4 / 6)
        assert report.nmi == pytest.approx(0.0, abs=1e-12)

    def test_all_acc_between_parts(self, toy_test_set):
        report = evaluate_task_aware(handcrafted_model(), toy_test_set)
        assert min(report.known_acc, report.novel_cluster_acc) <= report.all_acc <= max(report.known_acc, report.novel_cluster_acc)

    def test_task_agnostic_restricted(self, toy_test_set):
        report = evaluate_task_agnostic(handcrafted_model(), toy_test_set, mapping="restricted")
        assert report.known_acc == 1.0
        assert report.novel_cluster_acc == 0.5
        assert report.nmi == pytest.approx(1.0)

    def test_task_agnostic_full(self, toy_test_set):
        report = evaluate_task_agnostic(handcrafted_model(), toy_test_set, mapping="full")
        assert report.novel_cluster_acc == 1.0
        assert report.permutation[0] == 2

    def test_unknown_mapping(self, toy_test_set):
        with pytest.raises(ConfigurationError):
            evaluate_task_agnostic(handcrafted_model(), toy_test_set, mapping="loose")

    def test_empty_subset_is_absent(self):
        empty_known = DiscoveryDataset(
            np.zeros((0, 2)), np.zeros(0, dtype=int), np.array([[0.0, 0.0], [0.0, 0.0]]), np.array([2, 3]), 2, 2,
        )
        report = evaluate_task_aware(handcrafted_model(), empty_known)
        assert report.known_acc is None
        assert report.novel_cluster_acc == 0.5

    def test_evaluate_all_keys(self, toy_test_set):
        reports = evaluate_all(handcrafted_model(), toy_test_set, train_set=toy_test_set)
        assert set(reports) == {"test/task_aware", "test/task_agnostic", "train/task_aware"}
        assert reports["train/task_aware"].split == "train"
