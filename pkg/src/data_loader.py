"""
Data loader module for MNIST (IDX), Adult (UCI CSV) and synthetic datasets.
Handles class balancing, train/validation/test splits and the heterogeneous
partitioning schemes used to hand out participant shards.
"""

import gzip
import logging
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from . import config
from .errors import DataIOError, FormatError, InfeasiblePlan, InsufficientClassExamples, InvalidConfig
from .model import Dataset
from .rng import make_rng

logger = logging.getLogger(__name__)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": ["train-images-idx3-ubyte", "train-images.idx3-ubyte"],
    "train_labels": ["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"],
    "test_images": ["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"],
    "test_labels": ["t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"],
}

ADULT_COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education_num", "marital_status",
    "occupation", "relationship", "race", "sex", "capital_gain", "capital_loss",
    "hours_per_week", "native_country", "income",
]
ADULT_NUMERIC = ["age", "fnlwgt", "education_num", "capital_gain", "capital_loss", "hours_per_week"]
ADULT_LABELS = {"<=50K": 0, ">50K": 1}


# --- MNIST ---

def _find_file(directory: Path, candidates: List[str]) -> Path:
    for name in candidates:
        for suffix in ("", ".gz"):
            path = directory / f"{name}{suffix}"
            if path.exists():
                return path
    raise DataIOError(f"None of {candidates} found in {directory}")


def read_idx(path: Path, expected_magic: int) -> np.ndarray:
    """
    Read an IDX file (big-endian header) into a uint8 array.

    Image files (magic 0x803) return shape (count, rows * cols); label files
    (magic 0x801) return shape (count,).
    """
    try:
        opener = gzip.open if path.suffix == ".gz" else open
        with opener(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise DataIOError(f"Cannot read {path}: {e}") from e

    if len(raw) < 8:
        raise FormatError(f"{path.name}: file too short for an IDX header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != expected_magic:
        raise FormatError(f"{path.name}: bad magic number 0x{magic:08x}, expected 0x{expected_magic:08x}")

    if magic == IDX_IMAGE_MAGIC:
        if len(raw) < 16:
            raise FormatError(f"{path.name}: truncated image header")
        rows, cols = struct.unpack(">II", raw[8:16])
        header, shape = 16, (count, rows * cols)
    else:
        header, shape = 8, (count,)

    size = int(np.prod(shape))
    if len(raw) < header + size:
        raise FormatError(f"{path.name}: header declares {count} items but file is truncated")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(shape)


def load_mnist(path) -> Tuple[Dataset, Dataset]:
    """
    Load MNIST from a directory holding the four IDX files.

    Args:
        path: Directory with train/t10k image and label files (optionally gzipped)

    Returns:
        Tuple of (train, test) datasets with pixels scaled to [0, 1]
    """
    directory = Path(path)
    if not directory.is_dir():
        raise DataIOError(f"MNIST directory not found: {directory}")

    splits = []
    for prefix in ("train", "test"):
        images = read_idx(_find_file(directory, MNIST_FILES[f"{prefix}_images"]), IDX_IMAGE_MAGIC)
        labels = read_idx(_find_file(directory, MNIST_FILES[f"{prefix}_labels"]), IDX_LABEL_MAGIC)
        if images.shape[0] != labels.shape[0]:
            raise FormatError(f"MNIST {prefix}: {images.shape[0]} images but {labels.shape[0]} labels")
        if labels.size and labels.max() > 9:
            raise FormatError(f"MNIST {prefix}: label {labels.max()} out of range")
        splits.append(Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64), 10, f"mnist-{prefix}"))
        logger.debug(f"Loaded {images.shape[0]} MNIST {prefix} examples")

    return splits[0], splits[1]


# --- Adult ---

def _read_adult_frame(path: Path) -> pd.DataFrame:
    files = [path / "adult.data", path / "adult.test"] if path.is_dir() else [path]
    files = [f for f in files if f.exists()]
    if not files:
        raise DataIOError(f"Adult data not found at {path}")

    frames = []
    for file in files:
        try:
            # adult.test starts with a "|1x3 Cross validator" line
            frame = pd.read_csv(file, header=None, skipinitialspace=True, comment="|", dtype=str)
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise FormatError(f"Cannot parse {file}: {e}") from e
        if frame.shape[1] != len(ADULT_COLUMNS):
            raise FormatError(
                f"{file.name}: expected {len(ADULT_COLUMNS)} columns (ending with the income label), "
                f"got {frame.shape[1]}"
            )
        frame.columns = ADULT_COLUMNS
        if str(frame.iloc[0]["age"]).strip().lower() == "age":
            frame = frame.iloc[1:]
        frames.append(frame)

    return pd.concat(frames, ignore_index=True)


def _encode_adult(frame: pd.DataFrame) -> np.ndarray:
    """One-hot categoricals ('?' kept as a category), min-max scaled numerics."""
    numeric = frame[ADULT_NUMERIC].apply(pd.to_numeric, errors="coerce")
    if numeric.isna().any().any():
        raise FormatError("Adult numeric columns contain non-numeric values")
    span = (numeric.max() - numeric.min()).replace(0, 1)
    numeric = (numeric - numeric.min()) / span

    categorical = [c for c in ADULT_COLUMNS if c not in ADULT_NUMERIC and c != "income"]
    dummies = pd.get_dummies(frame[categorical].apply(lambda s: s.str.strip()), dtype=np.float64)
    return pd.concat([numeric, dummies], axis=1).to_numpy(dtype=np.float64)


def load_adult(
    path,
    seed: int = 0,
    records_per_class: int = config.ADULT_RECORDS_PER_CLASS,
    train_fraction: float = config.ADULT_TRAIN_FRACTION,
) -> Tuple[Dataset, Dataset]:
    """
    Load the UCI Adult census data, balance it and split train/test.

    Each income class is downsampled to `records_per_class` rows before a
    class-stratified split keeping floor(train_fraction * total) rows for
    training.

    Args:
        path: CSV file, or a directory holding adult.data / adult.test
        seed: Seed for balancing and splitting
        records_per_class: Rows kept per income class
        train_fraction: Share of balanced rows used for training

    Returns:
        Tuple of (train, test) datasets
    """
    frame = _read_adult_frame(Path(path))

    income = frame["income"].str.strip().str.rstrip(".")
    unknown = set(income.unique()) - set(ADULT_LABELS)
    if unknown:
        raise FormatError(f"Unknown Adult income labels: {sorted(unknown)}")
    labels = income.map(ADULT_LABELS).to_numpy(dtype=np.int64)

    rng = make_rng(seed)
    balanced = []
    for label in sorted(ADULT_LABELS.values()):
        rows = np.flatnonzero(labels == label)
        if len(rows) < records_per_class:
            raise InsufficientClassExamples(
                f"Adult class {label} has {len(rows)} rows, {records_per_class} required"
            )
        balanced.append(np.sort(rng.choice(rows, size=records_per_class, replace=False)))

    keep = np.concatenate(balanced)
    features = _encode_adult(frame.iloc[keep].reset_index(drop=True))
    labels = labels[keep]

    class_sizes = np.array([len(rows) for rows in balanced])
    train_counts = largest_remainder(class_sizes, int(np.floor(train_fraction * class_sizes.sum())))

    train_rows, test_rows = [], []
    offset = 0
    for size, train_count in zip(class_sizes, train_counts):
        order = offset + rng.permutation(size)
        train_rows.append(order[:train_count])
        test_rows.append(order[train_count:])
        offset += size

    train_rows = rng.permutation(np.concatenate(train_rows))
    test_rows = rng.permutation(np.concatenate(test_rows))
    logger.info(f"Adult: {len(keep)} balanced records, {len(train_rows)} train / {len(test_rows)} test")

    train = Dataset(features[train_rows], labels[train_rows], 2, "adult-train")
    test = Dataset(features[test_rows], labels[test_rows], 2, "adult-test")
    return train, test


# --- Synthetic ---

def make_synthetic(
    n_examples: int = config.SYNTHETIC_EXAMPLES,
    n_features: int = config.SYNTHETIC_FEATURES,
    class_count: int = config.SYNTHETIC_CLASSES,
    seed: int = 0,
    spread: float = 1.0,
    separation: float = 3.0,
    test_fraction: float = 0.2,
) -> Tuple[Dataset, Dataset]:
    """Gaussian blobs, one per class, split into (train, test)."""
    if n_examples < 2 or class_count < 1 or n_features < 1:
        raise InvalidConfig("Synthetic data needs >= 2 examples, >= 1 class and >= 1 feature")

    rng = make_rng(seed)
    centers = rng.normal(0.0, separation, size=(class_count, n_features))
    labels = rng.permutation(np.arange(n_examples) % class_count)
    features = centers[labels] + rng.normal(0.0, spread, size=(n_examples, n_features))

    data = Dataset(features, labels, class_count, "synthetic")
    train, test = split_validation(data, test_fraction, seed)
    train.name, test.name = "synthetic-train", "synthetic-test"
    return train, test


# --- Splitting and partitioning ---

def split_validation(train: Dataset, fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """Hold out round(fraction * |train|) random rows as a validation set."""
    if not 0 < fraction < 1:
        raise InvalidConfig(f"Validation fraction must be in (0, 1), got {fraction}")

    count = len(train)
    held_out = round(fraction * count)
    order = make_rng(seed).permutation(count)
    validation = train.subset(np.sort(order[:held_out]), f"{train.name}-validation")
    remaining = train.subset(np.sort(order[held_out:]), train.name)
    return remaining, validation


class PartitionScheme(Enum):
    POWER_LAW_SIZE = "PowerLawSize"
    LINSPACE_CLASS = "LinspaceClass"
    UNIFORM = "Uniform"


@dataclass(frozen=True)
class PartitionPlan:
    scheme: PartitionScheme
    participant_count: int
    total_examples: int
    power_law_exponent: float = config.POWER_LAW_EXPONENT


@dataclass
class Shard:
    """A participant's local data; `indices` point into the source dataset."""
    data: Dataset
    owner: int
    indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def example_count(self) -> int:
        return len(self.data)

    @property
    def class_count(self) -> int:
        return int(len(self.data.present_classes()))


def largest_remainder(weights, total: int) -> np.ndarray:
    """Integer apportionment of `total` proportional to `weights` (ties to lower index)."""
    weights = np.asarray(weights, dtype=np.float64)
    quotas = weights / weights.sum() * total
    counts = np.floor(quotas).astype(np.int64)
    leftover = int(total - counts.sum())
    if leftover > 0:
        order = np.argsort(-(quotas - counts), kind="stable")
        counts[order[:leftover]] += 1
    return counts


def power_law_sizes(participant_count: int, total: int, exponent: float = config.POWER_LAW_EXPONENT) -> np.ndarray:
    """Shard sizes proportional to j ** exponent for j = 1..P, summing to total."""
    sizes = largest_remainder(np.arange(1, participant_count + 1, dtype=np.float64) ** exponent, total)
    if sizes.min() < 1 or np.any(np.diff(sizes) <= 0):
        raise InfeasiblePlan(
            f"Cannot split {total} examples into {participant_count} strictly increasing shards "
            f"(exponent {exponent}): {sizes.tolist()}"
        )
    return sizes


def linspace_class_counts(participant_count: int, class_count: int) -> np.ndarray:
    """Class counts floor(linspace(1, C, P)), e.g. {1, 3, 5, 7, 10} for C=10, P=5."""
    return np.floor(np.linspace(1, class_count, participant_count)).astype(np.int64)


def partition(train: Dataset, plan: PartitionPlan, seed: int) -> List[Shard]:
    """
    Split `plan.total_examples` rows of `train` into disjoint participant shards.

    Args:
        train: Source dataset
        plan: Scheme, participant count and total examples
        seed: Partition seed

    Returns:
        One Shard per participant, owner ids 0..P-1
    """
    count, total = plan.participant_count, plan.total_examples
    if count < 1 or total < count:
        raise InfeasiblePlan(f"Cannot give {count} participants {total} examples")
    if total > len(train):
        raise InfeasiblePlan(f"Plan needs {total} examples but only {len(train)} are available")

    rng = make_rng(seed)

    if plan.scheme == PartitionScheme.LINSPACE_CLASS:
        shard_indices = _partition_by_class(train, count, total, rng)
    else:
        if plan.scheme == PartitionScheme.POWER_LAW_SIZE:
            sizes = power_law_sizes(count, total, plan.power_law_exponent)
        else:
            sizes = largest_remainder(np.ones(count), total)
        chosen = rng.permutation(len(train))[:total]
        shard_indices = np.split(chosen, np.cumsum(sizes)[:-1])

    shards = []
    for owner, indices in enumerate(shard_indices):
        indices = np.asarray(indices, dtype=np.int64)
        shard = Shard(train.subset(indices, f"shard-{owner}"), owner, indices)
        logger.debug(f"Shard {owner}: {shard.example_count} examples, {shard.class_count} classes")
        shards.append(shard)
    return shards


def _partition_by_class(train: Dataset, count: int, total: int, rng: np.random.Generator) -> List[np.ndarray]:
    classes = train.class_count
    present = train.present_classes()
    if len(present) != classes:
        raise InfeasiblePlan(f"Training data covers {len(present)} of {classes} classes")

    per_shard = total // count
    class_counts = linspace_class_counts(count, classes)
    pools = [rng.permutation(np.flatnonzero(train.labels == label)) for label in range(classes)]
    taken = np.zeros(classes, dtype=np.int64)

    shard_indices = []
    for owner, class_number in enumerate(class_counts):
        if per_shard < class_number:
            raise InfeasiblePlan(f"Shard {owner} needs {class_number} classes but holds {per_shard} examples")
        owned = np.sort(rng.choice(classes, size=class_number, replace=False))
        quotas = largest_remainder(np.ones(class_number), per_shard)
        picked = []
        for label, quota in zip(owned, quotas):
            start = taken[label]
            if start + quota > len(pools[label]):
                raise InfeasiblePlan(f"Class {label} runs out of examples for shard {owner}")
            picked.append(pools[label][start:start + quota])
            taken[label] += quota
        shard_indices.append(np.concatenate(picked))
    return shard_indices


def claim_shard(train: Dataset, size: int, owner: int, seed: int) -> Shard:
    """Random rows declared by a participant that never trains on them."""
    indices = np.sort(make_rng(seed).choice(len(train), size=size, replace=False))
    return Shard(train.subset(indices, f"claimed-{owner}"), owner, indices)
