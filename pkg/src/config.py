"""
Configuration for the CFFL simulator.
Contains experiment defaults, the experiment-grid presets and the YAML
experiment config file.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional

import yaml

from .errors import ConfigError, DataIOError
from .model import is_count

logger = logging.getLogger(__name__)

# Local SGD
LEARNING_RATE = 0.15
DECAY_GAMMA = 0.977
BATCH_SIZE = 16
LOCAL_EPOCHS = 2
CLIP_BOUND = 0.01

# Reputation
PUNISHMENT_ALPHA = 5.0
THRESHOLD_SCALE = {
    "ImbalancedSize": 1.0 / 3.0,  # c_th = 1/|R| * 1/3
    "ImbalancedClass": 1.0 / 6.0,  # c_th = 1/|R| * 1/6
    "Uniform": 1.0 / 3.0,
}

# Protocol
ROUNDS = 30
CLASS_IMBALANCE_ROUNDS = 50
UPLOAD_RATE = 0.1
DOWNLOAD_RATE = 1.0
PRETRAIN_EPOCHS = 5

# Data
VALIDATION_FRACTION = 0.1
POWER_LAW_EXPONENT = 1.0
ADULT_RECORDS_PER_CLASS = 11687
ADULT_TRAIN_FRACTION = 0.8
EXAMPLES_PER_PARTICIPANT = 600
SYNTHETIC_EXAMPLES = 3000
SYNTHETIC_FEATURES = 10
SYNTHETIC_CLASSES = 4

# Examples shared out in the imbalanced-size scenario, by participant count
TOTAL_EXAMPLES = {
    "MNIST": {5: 3000, 10: 6000, 20: 12000},
    "Adult": {5: 4000, 10: 8000, 20: 12000},
}

HIDDEN_LAYERS = {
    "MNIST": [128, 64],
    "Adult": [32],
    "Synthetic": [16],
}

DATASETS = ("MNIST", "Adult", "Synthetic")
SCENARIOS = ("ImbalancedSize", "ImbalancedClass", "Uniform")
FRAMEWORKS = ("Standalone", "CFFL", "FedAvg", "DSSGD")
WEIGHTING_MODES = ("DataSize", "ClassNumber")

INT_FIELDS = (
    "participant_count", "free_riders", "rounds", "pretrain_epochs", "batch_size", "local_epochs",
    "adult_records_per_class", "synthetic_examples", "synthetic_features", "synthetic_classes",
)
OPTIONAL_INT_FIELDS = ("total_examples",)
REAL_FIELDS = (
    "upload_rate", "download_rate", "learning_rate", "decay_gamma", "clip_bound", "alpha",
    "power_law_exponent", "validation_fraction", "synthetic_spread",
)
OPTIONAL_REAL_FIELDS = ("threshold", "threshold_scale")


def _is_real(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one experiment; round-trips through YAML."""
    name: str = "experiment"
    dataset: str = "Synthetic"
    data_path: Optional[str] = None
    scenario: str = "ImbalancedSize"
    participant_count: int = 5
    total_examples: Optional[int] = None
    free_riders: int = 0
    frameworks: List[str] = field(default_factory=lambda: ["CFFL", "FedAvg", "DSSGD"])

    hidden_layers: Optional[List[int]] = None
    activation: str = "relu"

    rounds: int = ROUNDS
    upload_rate: float = UPLOAD_RATE
    download_rate: float = DOWNLOAD_RATE
    pretrain_epochs: int = 0
    weighting_mode: Optional[str] = None

    learning_rate: float = LEARNING_RATE
    decay_gamma: float = DECAY_GAMMA
    batch_size: int = BATCH_SIZE
    local_epochs: int = LOCAL_EPOCHS
    clip_bound: float = CLIP_BOUND

    alpha: float = PUNISHMENT_ALPHA
    threshold: Optional[float] = None
    threshold_scale: Optional[float] = None

    power_law_exponent: float = POWER_LAW_EXPONENT
    validation_fraction: float = VALIDATION_FRACTION
    adult_records_per_class: int = ADULT_RECORDS_PER_CLASS
    synthetic_examples: int = SYNTHETIC_EXAMPLES
    synthetic_features: int = SYNTHETIC_FEATURES
    synthetic_classes: int = SYNTHETIC_CLASSES
    synthetic_spread: float = 1.0

    output_dir: str = "results"
    seeds: List[int] = field(default_factory=lambda: [0])

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}, got '{self.dataset}'")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}, got '{self.scenario}'")
        if not isinstance(self.frameworks, list):
            raise ConfigError(f"frameworks must be a list, got {self.frameworks!r}")
        unknown = [f for f in self.frameworks if f not in FRAMEWORKS]
        if unknown:
            raise ConfigError(f"Unknown frameworks {unknown}; choose from {FRAMEWORKS}")
        if self.weighting_mode is not None and self.weighting_mode not in WEIGHTING_MODES:
            raise ConfigError(f"weighting_mode must be one of {WEIGHTING_MODES}, got '{self.weighting_mode}'")
        if self.dataset != "Synthetic" and not self.data_path:
            raise ConfigError(f"data_path is required for the {self.dataset} dataset")
        self._check_types()
        self._check_ranges()

    def _check_types(self):
        for name in INT_FIELDS + OPTIONAL_INT_FIELDS:
            value = getattr(self, name)
            if value is None and name in OPTIONAL_INT_FIELDS:
                continue
            if not is_count(value):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
        for name in REAL_FIELDS + OPTIONAL_REAL_FIELDS:
            value = getattr(self, name)
            if value is None and name in OPTIONAL_REAL_FIELDS:
                continue
            if not _is_real(value):
                raise ConfigError(f"{name} must be a finite number, got {value!r}")
        for name in ("seeds", "hidden_layers"):
            value = getattr(self, name)
            if value is None and name == "hidden_layers":
                continue
            if not isinstance(value, list) or not all(is_count(v) for v in value):
                raise ConfigError(f"{name} must be a list of integers, got {value!r}")

    def _check_ranges(self):
        if self.participant_count < 1:
            raise ConfigError(f"participant_count must be >= 1, got {self.participant_count}")
        if self.free_riders < 0:
            raise ConfigError(f"free_riders must be >= 0, got {self.free_riders}")
        if not self.seeds:
            raise ConfigError("At least one seed is required")
        if self.rounds < 0 or self.pretrain_epochs < 0:
            raise ConfigError("rounds and pretrain_epochs must be >= 0")
        if self.batch_size < 1 or self.local_epochs < 1:
            raise ConfigError("batch_size and local_epochs must be >= 1")
        if self.hidden_layers is not None and any(width < 1 for width in self.hidden_layers):
            raise ConfigError(f"hidden layer widths must be >= 1, got {self.hidden_layers}")
        if not 0 < self.upload_rate <= 1:
            raise ConfigError(f"upload_rate must be in (0, 1], got {self.upload_rate}")
        if not 0 < self.download_rate <= 1:
            raise ConfigError(f"download_rate must be in (0, 1], got {self.download_rate}")
        if not 0 < self.decay_gamma <= 1:
            raise ConfigError(f"decay_gamma must be in (0, 1], got {self.decay_gamma}")
        for name in ("learning_rate", "clip_bound", "alpha"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if not 0 < self.validation_fraction < 1:
            raise ConfigError(f"validation_fraction must be in (0, 1), got {self.validation_fraction}")

    # --- Derived settings ---

    def resolved_weighting_mode(self) -> str:
        if self.weighting_mode:
            return self.weighting_mode
        return "ClassNumber" if self.scenario == "ImbalancedClass" else "DataSize"

    def resolved_threshold_scale(self) -> Optional[float]:
        if self.threshold is not None:
            return None
        if self.threshold_scale is not None:
            return self.threshold_scale
        return THRESHOLD_SCALE[self.scenario]

    def resolved_total_examples(self) -> int:
        if self.total_examples is not None:
            return self.total_examples
        if self.scenario == "ImbalancedSize":
            table = TOTAL_EXAMPLES.get(self.dataset, {})
            if self.participant_count in table:
                return table[self.participant_count]
        return EXAMPLES_PER_PARTICIPANT * self.participant_count

    def resolved_hidden_layers(self) -> List[int]:
        if self.hidden_layers is not None:
            return list(self.hidden_layers)
        return list(HIDDEN_LAYERS[self.dataset])

    # --- Serialization ---

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown config keys: {unknown}")
        return cls(**data)


def load_config(path) -> ExperimentConfig:
    """Read an ExperimentConfig from a YAML file."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise DataIOError(f"Cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML in {path}: {e}") from e

    if not isinstance(data, dict):
        raise ConfigError(f"Config {path} must be a key-value mapping")
    logger.debug(f"Loaded config {path}")
    return ExperimentConfig.from_dict(data)


def save_config(cfg: ExperimentConfig, path) -> Path:
    """Write an ExperimentConfig as YAML (keys in field order)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(cfg.to_dict(), f, sort_keys=False)
    return path


def preset(
    dataset: str, scenario: str, participants: int, pretrain: bool = False, **overrides
) -> ExperimentConfig:
    """
    Experiment grid entry with its published hyperparameters.

    MNIST imbalanced size: lr 0.15 (P=5) or 0.25 (P=10, 20), E=2, 30 rounds.
    MNIST imbalanced class: lr 0.15, E=1, 50 rounds.
    Adult: lr 0.03, E=2, 30 rounds.

    With `pretrain`, CFFL participants first train PRETRAIN_EPOCHS local
    epochs alone, the warm start used with small upload rates.
    """
    settings = {"dataset": dataset, "scenario": scenario, "participant_count": participants}
    if dataset == "MNIST" and scenario == "ImbalancedClass":
        settings.update(learning_rate=0.15, local_epochs=1, rounds=CLASS_IMBALANCE_ROUNDS)
    elif dataset == "MNIST":
        settings.update(learning_rate=0.15 if participants <= 5 else 0.25)
    elif dataset == "Adult":
        settings.update(learning_rate=0.03)
    if pretrain:
        settings.update(pretrain_epochs=PRETRAIN_EPOCHS)
    settings.update(overrides)
    return ExperimentConfig(**settings)
