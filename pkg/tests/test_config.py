"""
Tests for experiment configuration defaults, presets and YAML files.
"""

import pytest

from src import config
from src.config import ExperimentConfig, load_config, preset, save_config
from src.errors import ConfigError, DataIOError


def test_yaml_round_trip(tmp_path):
    cfg = ExperimentConfig(name="rt", participant_count=4, free_riders=1, hidden_layers=[10], seeds=[1, 2, 3])
    path = save_config(cfg, tmp_path / "cfg.yaml")
    assert load_config(path) == cfg


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("name: x\nlearning_rte: 0.1\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_non_mapping_rejected(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_missing_file(tmp_path):
    with pytest.raises(DataIOError):
        load_config(tmp_path / "missing.yaml")


class TestValidation:
    """Tests for ExperimentConfig checks."""

    @pytest.mark.parametrize("kwargs", [
        {"dataset": "CIFAR"},
        {"scenario": "Skewed"},
        {"frameworks": ["FedProx"]},
        {"weighting_mode": "Entropy"},
        {"participant_count": 0},
        {"free_riders": -1},
        {"seeds": []},
        {"dataset": "MNIST"},
        {"rounds": 2.5},
        {"batch_size": 16.0},
        {"local_epochs": 0},
        {"free_riders": True},
        {"seeds": [0.5]},
        {"hidden_layers": [0]},
        {"learning_rate": float("nan")},
        {"alpha": 0.0},
        {"upload_rate": 1.5},
        {"threshold": "low"},
    ])
    def test_rejects(self, kwargs):
        with pytest.raises(ConfigError):
            ExperimentConfig(**kwargs)


class TestResolvedSettings:
    """Tests for settings derived from the scenario."""

    def test_imbalanced_size_totals(self):
        assert ExperimentConfig(dataset="MNIST", data_path="d", participant_count=5).resolved_total_examples() == 3000
        assert ExperimentConfig(dataset="Adult", data_path="d", participant_count=20).resolved_total_examples() == 12000

    def test_uniform_total(self):
        cfg = ExperimentConfig(scenario="Uniform", participant_count=5)
        assert cfg.resolved_total_examples() == 3000

    def test_class_imbalance_defaults(self):
        cfg = ExperimentConfig(scenario="ImbalancedClass")
        assert cfg.resolved_weighting_mode() == "ClassNumber"
        assert cfg.resolved_threshold_scale() == pytest.approx(1 / 6)

    def test_absolute_threshold_disables_scale(self):
        assert ExperimentConfig(threshold=0.05).resolved_threshold_scale() is None

    def test_hidden_layers_default_by_dataset(self):
        assert ExperimentConfig(dataset="MNIST", data_path="d").resolved_hidden_layers() == [128, 64]
        assert ExperimentConfig(hidden_layers=[4]).resolved_hidden_layers() == [4]


class TestPresets:
    """Tests for the experiment grid presets."""

    def test_mnist_learning_rates(self):
        assert preset("MNIST", "ImbalancedSize", 5, data_path="d").learning_rate == 0.15
        assert preset("MNIST", "ImbalancedSize", 10, data_path="d").learning_rate == 0.25

    def test_mnist_class_imbalance(self):
        cfg = preset("MNIST", "ImbalancedClass", 5, data_path="d")
        assert cfg.local_epochs == 1
        assert cfg.rounds == config.CLASS_IMBALANCE_ROUNDS

    def test_adult_and_overrides(self):
        cfg = preset("Adult", "ImbalancedSize", 5, data_path="d", upload_rate=1.0)
        assert cfg.learning_rate == 0.03
        assert cfg.upload_rate == 1.0

    def test_pretrain_uses_default_epochs(self):
        assert preset("MNIST", "ImbalancedSize", 5, data_path="d").pretrain_epochs == 0
        assert preset("MNIST", "ImbalancedSize", 5, pretrain=True, data_path="d").pretrain_epochs == config.PRETRAIN_EPOCHS
