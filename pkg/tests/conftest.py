"""Shared fixtures: seeded generators, small datasets and tiny experiment configs."""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.config import ExperimentConfig, EvalSchedule
from src.data import SyntheticConfig, generate_synthetic
from src.model import ModelConfig
from src.objective import TrainConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def separable_config():
    """Two known and two novel classes, far apart relative to their spread."""
    return SyntheticConfig(
        num_known=2, num_novel=2, samples_per_known_class=100, samples_per_novel_class=100,
        feature_dim=8, separation=8.0, std=0.5, seed=3,
    )


@pytest.fixture
def separable_data(separable_config):
    return generate_synthetic(separable_config)


@pytest.fixture
def small_train_config():
    return TrainConfig(
        stage1_epochs=15, stage2_epochs=10, warmup_epochs=2,
        lr_peak=0.05, lr_floor=0.001, batch_size=32, seed=0,
    )


@pytest.fixture
def tiny_experiment(tmp_path):
    """A full experiment that trains in well under a second per seed."""
    return ExperimentConfig(
        name="tiny",
        synthetic=SyntheticConfig(
            num_known=2, num_novel=2, samples_per_known_class=20, samples_per_novel_class=20, feature_dim=4,
        ),
        model=ModelConfig(hidden=8, k=4),
        train=TrainConfig(
            stage1_epochs=2, stage2_epochs=3, warmup_epochs=1, lr_peak=0.05, lr_floor=0.001, batch_size=16,
        ),
        eval=EvalSchedule(every=1),
        seeds=[0],
        output_dir=str(tmp_path / "results"),
    )
