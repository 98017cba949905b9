"""Tests for strict config loading, overrides and presets."""

import pytest

from src.config import (
    PRESETS, ExperimentConfig, apply_overrides, apply_preset, config_to_dict, experiment_from_dict,
    load_experiment, load_sweep, parse_value,
)
from src.errors import ConfigurationError


def write(tmp_path, text, name="config.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestLoadExperiment:

    def test_defaults(self):
        config = load_experiment()
        assert isinstance(config, ExperimentConfig)
        assert config.train.sckd.beta == 0.5
        assert config.train.sinkhorn_iters == 3

    def test_reads_nested_tables(self, tmp_path):
        path = write(tmp_path, """
name = "demo"
seeds = [1, 2]
[train]
lr_peak = 0.2
[train.sckd]
alpha = 0.3
""")
        config = load_experiment(path)
        assert config.name == "demo"
        assert config.seeds == [1, 2]
        assert config.train.lr_peak == 0.2
        assert config.train.sckd.alpha == 0.3

    def test_unknown_key_names_dotted_path(self, tmp_path):
        path = write(tmp_path, "[train.sckd]\nalpah = 0.1\n")
        with pytest.raises(ConfigurationError) as info:
            load_experiment(path)
        assert info.value.field == "train.sckd.alpah"

    def test_invalid_value_names_dotted_path(self, tmp_path):
        path = write(tmp_path, "[train.sckd]\nlam = 1.5\n")
        with pytest.raises(ConfigurationError) as info:
            load_experiment(path)
        assert info.value.field == "train.sckd.lam"

    def test_type_mismatch(self, tmp_path):
        path = write(tmp_path, "[train]\nbatch_size = \"big\"\n")
        with pytest.raises(ConfigurationError, match="train.batch_size"):
            load_experiment(path)

    def test_empty_seed_list(self, tmp_path):
        with pytest.raises(ConfigurationError, match="seeds"):
            load_experiment(write(tmp_path, "seeds = []\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_experiment(str(tmp_path / "absent.toml"))

    def test_csv_source_needs_known_classes(self):
        with pytest.raises(ConfigurationError, match="csv.known_classes"):
            experiment_from_dict({"source": "csv", "csv": {"path": "x.csv"}})

    def test_round_trip_through_dict(self):
        config = load_experiment(overrides=["train.sckd.beta=0.2", "model.activation=relu"])
        assert experiment_from_dict(config_to_dict(config)) == config


class TestOverrides:

    def test_parse_value(self):
        assert parse_value("0.5") == 0.5
        assert parse_value("true") is True
        assert parse_value("[1, 2]") == [1, 2]
        assert parse_value("relu") == "relu"

    def test_nested_override_creates_tables(self):
        data = apply_overrides({}, ["train.sckd.beta=0"])
        assert data == {"train": {"sckd": {"beta": 0}}}

    def test_original_mapping_untouched(self):
        data = {"train": {"lr_peak": 0.4}}
        apply_overrides(data, ["train.lr_peak=0.1"])
        assert data["train"]["lr_peak"] == 0.4

    def test_override_applies_before_validation(self):
        with pytest.raises(ConfigurationError, match="train.sckd.beta"):
            load_experiment(overrides=["train.sckd.beta=-1"])

    def test_malformed_override(self):
        with pytest.raises(ConfigurationError):
            apply_overrides({}, ["train.sckd.beta"])


class TestPresets:

    def test_baseline_zeroes_beta(self):
        assert apply_preset(ExperimentConfig(), "baseline").train.sckd.beta == 0.0

    def test_preset_does_not_touch_original(self):
        config = ExperimentConfig()
        apply_preset(config, "only_k_to_n")
        assert config.train.sckd.use_n_to_k

    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_every_preset_is_valid(self, name):
        apply_preset(ExperimentConfig(), name).train.validate()

    def test_unknown_preset(self):
        with pytest.raises(ConfigurationError):
            apply_preset(ExperimentConfig(), "everything")


class TestLoadSweep:

    def test_points_and_methods(self, tmp_path):
        path = write(tmp_path, """
name = "imbalance"
[sweep]
total_samples = 500
methods = ["baseline", "sckd"]
alphas = [0.1, 0.2]
points = [{ num_known = 8, num_novel = 2 }, { num_known = 2, num_novel = 8 }]
""")
        spec = load_sweep(path)
        assert spec.base.name == "imbalance"
        assert [p.label for p in spec.points] == ["8k/2n", "2k/8n"]
        assert spec.alphas == [0.1, 0.2]

    def test_missing_sweep_table(self, tmp_path):
        with pytest.raises(ConfigurationError, match="sweep"):
            load_sweep(write(tmp_path, "name = \"x\"\n"))

    def test_invalid_point(self, tmp_path):
        path = write(tmp_path, "[sweep]\npoints = [{ num_known = 0, num_novel = 2 }]\n")
        with pytest.raises(ConfigurationError, match=r"sweep.points\[0\]"):
            load_sweep(path)

    def test_unknown_method(self, tmp_path):
        path = write(tmp_path, "[sweep]\nmethods = [\"magic\"]\npoints = [{ num_known = 2, num_novel = 2 }]\n")
        with pytest.raises(ConfigurationError, match="sweep.methods"):
            load_sweep(path)
