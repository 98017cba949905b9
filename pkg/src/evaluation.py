"""
SCKD-Discovery Evaluation
Hungarian matching, clustering accuracy, NMI/ARI and the task-aware / task-agnostic protocols.
Desk-scale Novel Class Discovery
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.metrics import adjusted_rand_score, normalized_mutual_info_score

from .data import DiscoveryDataset
from .errors import ConfigurationError, ContractError
from .model import ModelState, forward
from .numerics import as_matrix

logger = logging.getLogger(__name__)

PROTOCOLS = ("task_aware", "task_agnostic")
AGNOSTIC_MAPPINGS = ("restricted", "full")
METRIC_FIELDS = ("known_acc", "novel_cluster_acc", "all_acc", "nmi", "ari")


@dataclass
class EvalReport:
    """
    Metrics of one model under one protocol on one split.

    Metrics of an empty subset are None (absent), never zero.
    ``permutation`` maps predicted class slots to the ground-truth classes
    they were matched with (global class indices).
    """
    protocol: str
    split: str = "test"
    known_acc: Optional[float] = None
    novel_cluster_acc: Optional[float] = None
    all_acc: Optional[float] = None
    nmi: Optional[float] = None
    ari: Optional[float] = None
    permutation: Dict[int, int] = field(default_factory=dict)
    num_known_samples: int = 0
    num_novel_samples: int = 0

    def metrics(self) -> Dict[str, Optional[float]]:
        return {name: getattr(self, name) for name in METRIC_FIELDS}

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["permutation"] = {str(k): v for k, v in sorted(self.permutation.items())}
        return data


# ==================== Assignment ====================

def _optimal_cost(cost: np.ndarray) -> float:
    if cost.size == 0:
        return 0.0
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


def hungarian(cost) -> np.ndarray:
    """
    Minimum-cost perfect matching of a square cost matrix.

    Among optimal matchings the lexicographically smallest permutation is
    returned: rows are fixed in order to the smallest column that still
    admits an optimal completion.

    Args:
        cost: n×n finite matrix.

    Returns:
        Integer array ``perm`` with row i assigned to column perm[i].
    """
    cost = as_matrix(cost, "cost")
    n, m = cost.shape
    if n != m:
        raise ContractError(f"cost matrix must be square, got {cost.shape}")

    best = _optimal_cost(cost)
    tol = 1e-12 * max(1.0, float(np.abs(cost).sum()))
    perm = np.full(n, -1, dtype=np.int64)
    free = np.ones(n, dtype=bool)
    fixed = 0.0
    for i in range(n):
        for j in np.flatnonzero(free):
            rest_cols = free.copy()
            rest_cols[j] = False
            rest = cost[i + 1:][:, rest_cols]
            if fixed + cost[i, j] + _optimal_cost(rest) <= best + tol:
                perm[i] = j
                free[j] = False
                fixed += cost[i, j]
                break
    return perm


def _contingency(y_pred: np.ndarray, y_true: np.ndarray, size: int) -> np.ndarray:
    table = np.zeros((size, size), dtype=np.int64)
    np.add.at(table, (y_pred, y_true), 1)
    return table


def _match(y_true: np.ndarray, y_pred: np.ndarray, size: int) -> Tuple[int, np.ndarray]:
    """Matched-sample count and prediction→truth permutation over indices [0, size)."""
    table = _contingency(y_pred, y_true, size)
    perm = hungarian(-table.astype(np.float64))
    return int(table[np.arange(size), perm].sum()), perm


def _labels(y_true, y_pred, min_length: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    y_true = np.asarray(y_true).reshape(-1)
    y_pred = np.asarray(y_pred).reshape(-1)
    if y_true.shape != y_pred.shape:
        raise ContractError(f"label vectors differ in length: {y_true.size} vs {y_pred.size}")
    if y_true.size < min_length:
        raise ContractError(f"need at least {min_length} labels, got {y_true.size}")
    return y_true, y_pred


def cluster_mapping(y_true, y_pred) -> Tuple[float, Dict[Any, Any]]:
    """
    Clustering accuracy together with the cluster→label map achieving it.

    The contingency table is padded square over the union of both alphabets.
    """
    y_true, y_pred = _labels(y_true, y_pred)
    alphabet, inverse = np.unique(np.concatenate([y_true, y_pred]), return_inverse=True)
    true_idx, pred_idx = inverse[:y_true.size], inverse[y_true.size:]
    matched, perm = _match(true_idx, pred_idx, alphabet.size)
    mapping = {alphabet[i].item(): alphabet[perm[i]].item() for i in range(alphabet.size)}
    return matched / y_true.size, mapping


def cluster_accuracy(y_true, y_pred) -> float:
    """Max over cluster-id permutations of the mean agreement with ``y_true``."""
    return cluster_mapping(y_true, y_pred)[0]


def nmi(y_true, y_pred) -> float:
    """I(U;V) / sqrt(H(U) H(V)); 1.0 if both partitions are single clusters, 0.0 if exactly one is."""
    y_true, y_pred = _labels(y_true, y_pred)
    return float(normalized_mutual_info_score(y_true, y_pred, average_method="geometric"))


def ari(y_true, y_pred) -> float:
    """Adjusted Rand index; 1.0 when the pair-count denominator vanishes on equal partitions."""
    y_true, y_pred = _labels(y_true, y_pred, min_length=2)
    return float(adjusted_rand_score(y_true, y_pred))


# ==================== Protocols ====================

def _clustering_scores(truth: np.ndarray, pred: np.ndarray) -> Tuple[Optional[float], Optional[float]]:
    if truth.size == 0:
        return None, None
    return nmi(truth, pred), (ari(truth, pred) if truth.size >= 2 else None)


def _combine(known_correct: int, novel_matched: int, num_known: int, num_novel: int) -> Optional[float]:
    total = num_known + num_novel
    return (known_correct + novel_matched) / total if total else None


def evaluate_task_aware(model: ModelState, test_set: DiscoveryDataset, split: str = "test") -> EvalReport:
    """
    Origin of every sample is known: known samples are scored by argmax of
    the known head, novel samples are clustered by argmax of the novel head.
    """
    C_l, C_u = test_set.num_known, test_set.num_novel
    report = EvalReport(
        protocol="task_aware", split=split,
        num_known_samples=test_set.num_labeled, num_novel_samples=test_set.num_unlabeled,
    )

    known_correct = 0
    if test_set.num_labeled:
        pred = np.argmax(forward(model, test_set.labeled_features).known_logits, axis=1)
        known_correct = int(np.sum(pred == test_set.labeled_labels))
        report.known_acc = known_correct / test_set.num_labeled

    matched = 0
    if test_set.num_unlabeled:
        pred = np.argmax(forward(model, test_set.unlabeled_features).novel_logits, axis=1)
        truth = test_set.unlabeled_hidden_labels - C_l
        matched, perm = _match(truth, pred, C_u)
        report.novel_cluster_acc = matched / test_set.num_unlabeled
        report.permutation = {C_l + i: C_l + int(perm[i]) for i in range(C_u)}
        report.nmi, report.ari = _clustering_scores(truth, pred)

    report.all_acc = _combine(known_correct, matched, test_set.num_labeled, test_set.num_unlabeled)
    return report


def evaluate_task_agnostic(
    model: ModelState,
    test_set: DiscoveryDataset,
    mapping: str = "restricted",
    split: str = "test"
) -> EvalReport:
    """
    Origin is unknown: every sample is predicted by argmax over all
    C^l + C^u slots.

    Known samples must hit their exact label. With ``restricted`` mapping,
    novel samples predicted into a known slot are errors and the Hungarian
    map runs over novel slots only; with ``full`` every slot may be matched
    to a novel class.
    """
    if mapping not in AGNOSTIC_MAPPINGS:
        raise ConfigurationError(f"must be one of {AGNOSTIC_MAPPINGS}, got '{mapping}'", field="agnostic_mapping")
    C_l, C = test_set.num_known, test_set.num_classes
    report = EvalReport(
        protocol="task_agnostic", split=split,
        num_known_samples=test_set.num_labeled, num_novel_samples=test_set.num_unlabeled,
    )

    known_correct = 0
    if test_set.num_labeled:
        pred = np.argmax(forward(model, test_set.labeled_features).concat_probs, axis=1)
        known_correct = int(np.sum(pred == test_set.labeled_labels))
        report.known_acc = known_correct / test_set.num_labeled

    matched = 0
    if test_set.num_unlabeled:
        pred = np.argmax(forward(model, test_set.unlabeled_features).concat_probs, axis=1)
        truth = test_set.unlabeled_hidden_labels
        if mapping == "restricted":
            in_novel = pred >= C_l
            matched, perm = _match(truth[in_novel] - C_l, pred[in_novel] - C_l, test_set.num_novel)
            report.permutation = {C_l + i: C_l + int(perm[i]) for i in range(test_set.num_novel)}
        else:
            matched, perm = _match(truth, pred, C)
            report.permutation = {i: int(perm[i]) for i in range(C)}
        report.novel_cluster_acc = matched / test_set.num_unlabeled
        report.nmi, report.ari = _clustering_scores(truth, pred)

    report.all_acc = _combine(known_correct, matched, test_set.num_labeled, test_set.num_unlabeled)
    return report


def evaluate_all(
    model: ModelState,
    test_set: DiscoveryDataset,
    train_set: Optional[DiscoveryDataset] = None,
    mapping: str = "restricted"
) -> Dict[str, EvalReport]:
    """
    Reports keyed ``test/task_aware``, ``test/task_agnostic`` and, when a
    training set is given, ``train/task_aware`` (clustering of the
    unlabeled training subset).
    """
    reports = {
        "test/task_aware": evaluate_task_aware(model, test_set),
        "test/task_agnostic": evaluate_task_agnostic(model, test_set, mapping=mapping),
    }
    if train_set is not None:
        reports["train/task_aware"] = evaluate_task_aware(model, train_set, split="train")
    return reports
