"""
SCKD-Discovery Data Layer
Synthetic and CSV datasets with disjoint known/novel label ranges, plus mini-batch sampling.
Desk-scale Novel Class Discovery
"""

import logging
import os
import re
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import ConfigurationError, ContractError, ParseError, SchemaError

logger = logging.getLogger(__name__)

TEST_FRACTION = 0.2


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class DiscoveryDataset:
    """
    Labeled known-class samples plus unlabeled novel-class samples.

    Known labels live in [0, num_known); hidden labels of unlabeled samples
    live in [num_known, num_known + num_novel) and are read only by evaluation.
    """
    labeled_features: np.ndarray
    labeled_labels: np.ndarray
    unlabeled_features: np.ndarray
    unlabeled_hidden_labels: np.ndarray
    num_known: int
    num_novel: int

    def __post_init__(self):
        if self.num_known < 1 or self.num_novel < 1:
            raise ConfigurationError(
                f"need at least one known and one novel class, got {self.num_known}/{self.num_novel}"
            )

        labeled = np.asarray(self.labeled_features, dtype=np.float64)
        unlabeled = np.asarray(self.unlabeled_features, dtype=np.float64)
        if labeled.ndim != 2 or unlabeled.ndim != 2:
            raise ContractError("feature arrays must be 2-D")
        if labeled.shape[1] != unlabeled.shape[1]:
            raise ContractError(
                f"feature dimension differs: labeled {labeled.shape[1]} vs unlabeled {unlabeled.shape[1]}"
            )

        labels = np.asarray(self.labeled_labels, dtype=np.int64).reshape(-1)
        hidden = np.asarray(self.unlabeled_hidden_labels, dtype=np.int64).reshape(-1)
        if labels.shape[0] != labeled.shape[0] or hidden.shape[0] != unlabeled.shape[0]:
            raise ContractError("every sample needs exactly one label")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_known):
            raise ContractError(f"labeled labels must lie in [0, {self.num_known})")
        if hidden.size and (hidden.min() < self.num_known or hidden.max() >= self.num_classes):
            raise ContractError(
                f"hidden labels must lie in [{self.num_known}, {self.num_classes})"
            )

        object.__setattr__(self, "labeled_features", _frozen(labeled))
        object.__setattr__(self, "labeled_labels", _frozen(labels))
        object.__setattr__(self, "unlabeled_features", _frozen(unlabeled))
        object.__setattr__(self, "unlabeled_hidden_labels", _frozen(hidden))

    @property
    def feature_dim(self) -> int:
        return int(self.labeled_features.shape[1])

    @property
    def num_labeled(self) -> int:
        return int(self.labeled_features.shape[0])

    @property
    def num_unlabeled(self) -> int:
        return int(self.unlabeled_features.shape[0])

    @property
    def num_classes(self) -> int:
        return self.num_known + self.num_novel

    @property
    def imbalance_ratio(self) -> float:
        """Unlabeled-to-labeled sample ratio."""
        if self.num_labeled == 0:
            return float("inf")
        return self.num_unlabeled / self.num_labeled

    def all_features(self) -> np.ndarray:
        """Labeled rows followed by unlabeled rows."""
        return np.vstack([self.labeled_features, self.unlabeled_features])

    def all_labels(self) -> np.ndarray:
        """Ground-truth labels aligned with ``all_features``."""
        return np.concatenate([self.labeled_labels, self.unlabeled_hidden_labels])


@dataclass(frozen=True)
class Batch:
    """One mixed mini-batch. Unlabeled samples carry features only."""
    labeled_features: np.ndarray
    labeled_labels: np.ndarray
    unlabeled_features: np.ndarray

    def __post_init__(self):
        if self.labeled_features.shape[0] < 1 or self.unlabeled_features.shape[0] < 1:
            raise ContractError("a batch needs at least one labeled and one unlabeled sample")

    @property
    def num_labeled(self) -> int:
        return int(self.labeled_features.shape[0])

    @property
    def num_unlabeled(self) -> int:
        return int(self.unlabeled_features.shape[0])


@dataclass
class SyntheticConfig:
    """Gaussian-cluster generator settings."""
    num_known: int = 5
    num_novel: int = 5
    samples_per_known_class: int = 100
    samples_per_novel_class: int = 100
    feature_dim: int = 16
    separation: float = 4.0
    std: float = 1.0
    seed: int = 0

    def validate(self):
        for name in ("num_known", "num_novel", "samples_per_known_class", "samples_per_novel_class"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"must be >= 1, got {getattr(self, name)}", field=name)
        if self.feature_dim < 2:
            raise ConfigurationError(f"must be >= 2, got {self.feature_dim}", field="feature_dim")
        if not self.std > 0:
            raise ConfigurationError(f"must be positive, got {self.std}", field="std")
        if self.separation < 0:
            raise ConfigurationError(f"must be >= 0, got {self.separation}", field="separation")


@dataclass
class CsvSchema:
    """Column layout of an ingested CSV file."""
    label_column: str = "label"
    known_classes: List[str] = field(default_factory=list)
    feature_columns: Optional[List[str]] = None  # None: every column except the label


# ==================== Generation ====================

def class_means(num_classes: int, feature_dim: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    """
    Class centres at distance ``separation`` from the origin.

    With enough dimensions the centres are scaled orthonormal directions
    (vertices of a rotated simplex); otherwise random unit directions.
    """
    if num_classes <= feature_dim:
        basis, _ = np.linalg.qr(rng.standard_normal((feature_dim, num_classes)))
        return separation * basis.T
    directions = rng.standard_normal((num_classes, feature_dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return separation * directions


def generate_synthetic(config: SyntheticConfig) -> Tuple[DiscoveryDataset, DiscoveryDataset]:
    """
    Draw an i.i.d. Gaussian NCD dataset.

    Args:
        config: Generator settings; identical configs give identical data.

    Returns:
        (train, test) datasets, split 80/20 within every class.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    num_classes = config.num_known + config.num_novel
    means = class_means(num_classes, config.feature_dim, config.separation, rng)

    features, labels = [], []
    for cls in range(num_classes):
        count = config.samples_per_known_class if cls < config.num_known else config.samples_per_novel_class
        features.append(means[cls] + config.std * rng.standard_normal((count, config.feature_dim)))
        labels.append(np.full(count, cls, dtype=np.int64))

    train, test = split_dataset(
        np.vstack(features), np.concatenate(labels), config.num_known, config.num_novel, rng
    )
    logger.debug(
        "Generated %d/%d train and %d/%d test samples (labeled/unlabeled)",
        train.num_labeled, train.num_unlabeled, test.num_labeled, test.num_unlabeled
    )
    return train, test


def split_dataset(
    features: np.ndarray,
    labels: np.ndarray,
    num_known: int,
    num_novel: int,
    rng: np.random.Generator,
    test_fraction: float = TEST_FRACTION
) -> Tuple[DiscoveryDataset, DiscoveryDataset]:
    """Split globally labeled samples into train/test datasets, per class."""
    train_idx, test_idx = [], []
    for cls in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == cls))
        n_test = int(np.floor(test_fraction * members.size + 0.5))
        test_idx.append(members[:n_test])
        train_idx.append(members[n_test:])

    def build(index_groups: List[np.ndarray]) -> DiscoveryDataset:
        idx = np.concatenate(index_groups) if index_groups else np.zeros(0, dtype=np.int64)
        idx = np.sort(idx)
        known = idx[labels[idx] < num_known]
        novel = idx[labels[idx] >= num_known]
        return DiscoveryDataset(
            labeled_features=features[known],
            labeled_labels=labels[known],
            unlabeled_features=features[novel],
            unlabeled_hidden_labels=labels[novel],
            num_known=num_known,
            num_novel=num_novel,
        )

    return build(train_idx), build(test_idx)


# ==================== CSV Ingestion ====================

def _sort_labels(values: Sequence[str]) -> List[str]:
    """Numeric labels sort numerically, anything else lexicographically."""
    try:
        return sorted(values, key=float)
    except ValueError:
        return sorted(values)


def load_csv(path: str, schema: CsvSchema) -> DiscoveryDataset:
    """
    Read a CSV with a header row into a DiscoveryDataset.

    Rows whose label is listed in ``schema.known_classes`` become labeled
    samples; all other rows become unlabeled with a hidden label. Known
    classes take indices [0, C^l) in list order, novel classes follow in
    sorted order.

    Args:
        path: CSV file path.
        schema: Label column, known-class list and optional feature columns.

    Returns:
        The ingested dataset.
    """
    if not schema.known_classes:
        raise ConfigurationError("known-class list must not be empty", field="known_classes")
    if not os.path.exists(path):
        raise FileNotFoundError(f"CSV file not found: {path}")

    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        # pandas counts the header as line 1
        row = int(match.group(1)) - 1 if match else None
        raise ParseError(f"malformed row in {path}: {e}", row=row) from e

    if schema.label_column not in frame.columns:
        raise SchemaError(f"label column '{schema.label_column}' not in {list(frame.columns)}")
    feature_columns = schema.feature_columns or [c for c in frame.columns if c != schema.label_column]
    missing = [c for c in feature_columns if c not in frame.columns]
    if missing:
        raise SchemaError(f"feature columns {missing} not in {list(frame.columns)}")
    if not feature_columns:
        raise SchemaError("no feature columns")

    # short rows come back padded with NaN
    cells = frame[list(dict.fromkeys(feature_columns + [schema.label_column]))]
    empty = cells.isna() | cells.apply(lambda column: column.str.strip().eq(""))
    short_rows = np.flatnonzero(empty.any(axis=1).to_numpy())
    if short_rows.size:
        row = int(short_rows[0])
        columns = [c for c in cells.columns if empty.loc[row, c]]
        raise ParseError(f"missing value in columns {columns}", row=row + 1)

    numeric = frame[feature_columns].apply(pd.to_numeric, errors="coerce")
    bad_rows = np.flatnonzero(numeric.isna().any(axis=1).to_numpy())
    if bad_rows.size:
        row = int(bad_rows[0])
        raise ParseError(
            f"non-numeric feature value {frame.loc[row, feature_columns].tolist()}", row=row + 1
        )

    raw_labels = frame[schema.label_column].astype(str).str.strip()
    known = [str(k).strip() for k in schema.known_classes]
    novel = _sort_labels([v for v in raw_labels.unique() if v not in known])
    if not novel:
        raise ConfigurationError("every row belongs to a known class; no novel samples", field="known_classes")

    index = {name: i for i, name in enumerate(known + novel)}
    labels = raw_labels.map(index).to_numpy(dtype=np.int64)
    features = numeric.to_numpy(dtype=np.float64)
    is_known = labels < len(known)

    logger.info(
        "Loaded %s: %d labeled / %d unlabeled rows, %d known / %d novel classes",
        path, int(is_known.sum()), int((~is_known).sum()), len(known), len(novel)
    )
    return DiscoveryDataset(
        labeled_features=features[is_known],
        labeled_labels=labels[is_known],
        unlabeled_features=features[~is_known],
        unlabeled_hidden_labels=labels[~is_known],
        num_known=len(known),
        num_novel=len(novel),
    )


# ==================== Batching ====================

def batch_composition(num_labeled: int, num_unlabeled: int, batch_size: int) -> Tuple[int, int]:
    """
    Split a batch proportionally to subset sizes.

    N = round(batch_size * |D^l| / (|D^l| + |D^u|)) clamped to [1, batch_size - 1],
    M = batch_size - N; each is then capped by its subset size.
    """
    if batch_size < 2:
        raise ConfigurationError(f"batch size must be >= 2, got {batch_size}", field="batch_size")
    if num_labeled < 1 or num_unlabeled < 1:
        raise ConfigurationError("batching needs non-empty labeled and unlabeled subsets")

    share = batch_size * num_labeled / (num_labeled + num_unlabeled)
    n = int(np.floor(share + 0.5))
    n = min(max(n, 1), batch_size - 1)
    m = batch_size - n
    if n > num_labeled or m > num_unlabeled:
        logger.debug("Batch %d/%d capped by subset sizes %d/%d", n, m, num_labeled, num_unlabeled)
        n, m = min(n, num_labeled), min(m, num_unlabeled)
    return n, m


def sample_batch(dataset: DiscoveryDataset, batch_size: int, rng: np.random.Generator) -> Batch:
    """Draw one proportional batch without replacement."""
    n, m = batch_composition(dataset.num_labeled, dataset.num_unlabeled, batch_size)
    labeled = rng.choice(dataset.num_labeled, size=n, replace=False)
    unlabeled = rng.choice(dataset.num_unlabeled, size=m, replace=False)
    return Batch(
        labeled_features=dataset.labeled_features[labeled],
        labeled_labels=dataset.labeled_labels[labeled],
        unlabeled_features=dataset.unlabeled_features[unlabeled],
    )


class BatchSampler:
    """
    Epoch-wise batch iterator. Within an epoch every sample of each subset
    is visited at most once. Owns its RNG; use from one thread at a time.
    """

    def __init__(self, dataset: DiscoveryDataset, batch_size: int, rng: np.random.Generator):
        self.dataset = dataset
        self.rng = rng
        self.num_labeled, self.num_unlabeled = batch_composition(
            dataset.num_labeled, dataset.num_unlabeled, batch_size
        )

    @property
    def batches_per_epoch(self) -> int:
        return max(1, min(
            self.dataset.num_labeled // self.num_labeled,
            self.dataset.num_unlabeled // self.num_unlabeled,
        ))

    def epoch(self) -> Iterator[Batch]:
        """Yield the batches of one epoch pass."""
        labeled_order = self.rng.permutation(self.dataset.num_labeled)
        unlabeled_order = self.rng.permutation(self.dataset.num_unlabeled)
        n, m = self.num_labeled, self.num_unlabeled
        for b in range(self.batches_per_epoch):
            labeled = labeled_order[b * n:(b + 1) * n]
            unlabeled = unlabeled_order[b * m:(b + 1) * m]
            yield Batch(
                labeled_features=self.dataset.labeled_features[labeled],
                labeled_labels=self.dataset.labeled_labels[labeled],
                unlabeled_features=self.dataset.unlabeled_features[unlabeled],
            )


def augment_view(features: np.ndarray, noise_std: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian-jitter view of ``features``; ``noise_std`` 0 returns an exact copy."""
    if noise_std < 0:
        raise ConfigurationError(f"noise std must be >= 0, got {noise_std}", field="noise_std")
    features = np.asarray(features, dtype=np.float64)
    if noise_std == 0:
        return features.copy()
    return features + rng.normal(0.0, noise_std, size=features.shape)
