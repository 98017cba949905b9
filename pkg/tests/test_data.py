"""Tests for synthetic generation, CSV ingestion, batching and views."""

import numpy as np
import pytest

from src.data import (
    BatchSampler, CsvSchema, DiscoveryDataset, SyntheticConfig, augment_view, batch_composition,
    generate_synthetic, load_csv, sample_batch,
)
from src.errors import ConfigurationError, ContractError, ParseError, SchemaError


class TestSyntheticGeneration:

    def test_label_ranges_are_disjoint(self, separable_data):
        train, test = separable_data
        for ds in (train, test):
            assert set(np.unique(ds.labeled_labels)) == {0, 1}
            assert set(np.unique(ds.unlabeled_hidden_labels)) == {2, 3}

    def test_split_is_eighty_twenty(self, separable_data):
        train, test = separable_data
        assert train.num_labeled == 160 and train.num_unlabeled == 160
        assert test.num_labeled == 40 and test.num_unlabeled == 40

    def test_same_seed_same_data(self, separable_config):
        a, _ = generate_synthetic(separable_config)
        b, _ = generate_synthetic(separable_config)
        np.testing.assert_array_equal(a.labeled_features, b.labeled_features)
        np.testing.assert_array_equal(a.unlabeled_features, b.unlabeled_features)

    def test_imbalance_ratio(self):
        config = SyntheticConfig(num_known=2, num_novel=2, samples_per_known_class=25, samples_per_novel_class=100)
        train, _ = generate_synthetic(config)
        assert train.imbalance_ratio == pytest.approx(4.0)

    def test_least_squares_separates_known_classes(self, separable_data):
        train, _ = separable_data
        X = np.hstack([train.labeled_features, np.ones((train.num_labeled, 1))])
        targets = np.where(train.labeled_labels == 1, 1.0, -1.0)
        w, *_ = np.linalg.lstsq(X, targets, rcond=None)
        accuracy = np.mean((X @ w > 0) == (train.labeled_labels == 1))
        assert accuracy >= 0.99

    def test_arrays_are_read_only(self, separable_data):
        train, _ = separable_data
        with pytest.raises(ValueError):
            train.labeled_features[0, 0] = 1.0

    @pytest.mark.parametrize("field,value", [("num_novel", 0), ("feature_dim", 1), ("std", 0.0)])
    def test_invalid_config(self, field, value):
        with pytest.raises(ConfigurationError):
            generate_synthetic(SyntheticConfig(**{field: value}))

    def test_hidden_labels_out_of_range(self):
        with pytest.raises(ContractError):
            DiscoveryDataset(np.zeros((1, 2)), np.array([0]), np.zeros((1, 2)), np.array([0]), 1, 1)


class TestCsvIngestion:

    def write(self, tmp_path, text):
        path = tmp_path / "data.csv"
        path.write_text(text)
        return str(path)

    def test_four_rows(self, tmp_path):
        path = self.write(tmp_path, "x,y,label\n0,1,a\n1,0,b\n5,5,c\n6,6,d\n")
        ds = load_csv(path, CsvSchema(known_classes=["a", "b"]))
        assert (ds.num_labeled, ds.num_unlabeled, ds.num_known, ds.num_novel) == (2, 2, 2, 2)
        np.testing.assert_array_equal(ds.unlabeled_hidden_labels, [2, 3])

    def test_known_order_follows_list(self, tmp_path):
        path = self.write(tmp_path, "x,label\n0,a\n1,b\n2,c\n")
        ds = load_csv(path, CsvSchema(known_classes=["b", "a"]))
        np.testing.assert_array_equal(ds.labeled_labels, [1, 0])

    def test_numeric_novel_labels_sort_numerically(self, tmp_path):
        path = self.write(tmp_path, "x,label\n0,0\n1,10\n2,9\n")
        ds = load_csv(path, CsvSchema(known_classes=["0"]))
        np.testing.assert_array_equal(ds.unlabeled_hidden_labels, [2, 1])

    def test_empty_known_list(self, tmp_path):
        path = self.write(tmp_path, "x,label\n0,a\n")
        with pytest.raises(ConfigurationError):
            load_csv(path, CsvSchema(known_classes=[]))

    def test_non_numeric_cell_names_row(self, tmp_path):
        path = self.write(tmp_path, "x,label\n0,a\noops,b\n")
        with pytest.raises(ParseError) as info:
            load_csv(path, CsvSchema(known_classes=["a"]))
        assert info.value.row == 2
        assert "row 2" in str(info.value)

    def test_short_row_names_row(self, tmp_path):
        path = self.write(tmp_path, "x,y,label\n0,1,a\n1,0\n5,5,c\n")
        with pytest.raises(ParseError) as info:
            load_csv(path, CsvSchema(known_classes=["a"]))
        assert info.value.row == 2
        assert "label" in str(info.value)

    def test_blank_label_names_row(self, tmp_path):
        path = self.write(tmp_path, "x,label\n0,a\n1,b\n2, \n")
        with pytest.raises(ParseError) as info:
            load_csv(path, CsvSchema(known_classes=["a"]))
        assert info.value.row == 3

    def test_missing_label_column(self, tmp_path):
        path = self.write(tmp_path, "x,y\n0,1\n")
        with pytest.raises(SchemaError):
            load_csv(path, CsvSchema(known_classes=["a"]))


class TestBatching:

    def test_equal_subsets(self):
        assert batch_composition(100, 100, 64) == (32, 32)

    def test_proportional(self):
        assert batch_composition(100, 400, 100) == (20, 80)

    def test_single_labeled_sample(self):
        n, m = batch_composition(1, 1000, 64)
        assert n == 1 and m == 63

    def test_capped_by_subset_size(self):
        assert batch_composition(3, 3, 64) == (3, 3)

    def test_batch_too_small(self):
        with pytest.raises(ConfigurationError):
            batch_composition(10, 10, 1)

    def test_sample_batch_shapes(self, separable_data, rng):
        train, _ = separable_data
        batch = sample_batch(train, 32, rng)
        assert batch.labeled_features.shape == (16, 8)
        assert batch.unlabeled_features.shape == (16, 8)

    def test_epoch_visits_each_sample_at_most_once(self, separable_data, rng):
        train, _ = separable_data
        sampler = BatchSampler(train, 32, rng)
        rows = np.vstack([b.unlabeled_features for b in sampler.epoch()])
        assert len(rows) == sampler.batches_per_epoch * sampler.num_unlabeled
        assert len(np.unique(rows, axis=0)) == len(rows)


class TestAugmentView:

    def test_zero_noise_is_identity(self, rng):
        x = rng.standard_normal((5, 3))
        np.testing.assert_array_equal(augment_view(x, 0.0, rng), x)

    def test_fixed_seed_reproducible(self):
        x = np.zeros((4, 4))
        a = augment_view(x, 0.1, np.random.default_rng(7))
        b = augment_view(x, 0.1, np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)

    def test_mean_absolute_perturbation(self, rng):
        x = rng.standard_normal((400, 250))
        jitter = np.abs(augment_view(x, 0.1, rng) - x).mean()
        assert jitter == pytest.approx(0.1 * np.sqrt(2 / np.pi), rel=0.01)

    def test_negative_noise(self, rng):
        with pytest.raises(ConfigurationError):
            augment_view(np.zeros((1, 1)), -0.1, rng)
