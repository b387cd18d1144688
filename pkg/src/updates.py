"""
Update processing: gradient clipping, "largest values" sparsification,
weighted aggregation of sparse uploads and reputation-gated allocation.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Tuple

import numpy as np

from .errors import CountOutOfRange, DimensionMismatch, InvalidConfig, MissingWeight
from .model import ParameterVector

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SparseUpdate:
    """Coordinate-format update: strictly increasing indices with their values."""
    indices: np.ndarray
    values: np.ndarray
    dimension: int

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "values", values)
        if indices.shape != values.shape or indices.ndim != 1:
            raise DimensionMismatch(f"{indices.shape} indices vs {values.shape} values")
        if len(indices) and (indices[0] < 0 or indices[-1] >= self.dimension or np.any(np.diff(indices) <= 0)):
            raise DimensionMismatch(f"Indices must be strictly increasing and within [0, {self.dimension})")

    def __len__(self) -> int:
        return int(self.indices.shape[0])

    @property
    def entries(self) -> List[Tuple[int, float]]:
        return list(zip(self.indices.tolist(), self.values.tolist()))

    def to_dense(self) -> ParameterVector:
        dense = np.zeros(self.dimension, dtype=np.float64)
        dense[self.indices] = self.values
        return dense

    @classmethod
    def from_dense(cls, dense: ParameterVector) -> "SparseUpdate":
        """Every coordinate of a dense vector (zeros included)."""
        return cls(np.arange(dense.shape[0]), dense.copy(), int(dense.shape[0]))


class WeightingMode(Enum):
    DATA_SIZE = "DataSize"
    CLASS_NUMBER = "ClassNumber"


@dataclass(frozen=True)
class AggregationWeights:
    """Raw per-participant weights: n_j (DataSize) or class_j (ClassNumber)."""
    mode: WeightingMode
    raw: Dict[int, float]

    def _member_raw(self, members: Iterable[int]) -> Dict[int, float]:
        missing = [j for j in members if j not in self.raw]
        if missing:
            raise MissingWeight(f"No {self.mode.value} weight for participants {missing}")
        return {j: float(self.raw[j]) for j in sorted(members)}

    def server_weights(self, members: Iterable[int]) -> Dict[int, float]:
        """n_j / sum(n) for DataSize, class_j / max(class) for ClassNumber, over `members`."""
        raw = self._member_raw(members)
        if not raw:
            return {}
        if self.mode == WeightingMode.DATA_SIZE:
            total = sum(raw.values())
            return {j: w / total for j, w in raw.items()}
        top = max(raw.values())
        return {j: w / top for j, w in raw.items()}

    def relative(self, participant: int, members: Iterable[int]) -> float:
        """raw_j / max(raw) over `members`; used for allocation counts and download adjustment."""
        raw = self._member_raw(members)
        if participant not in raw:
            raise MissingWeight(f"Participant {participant} is not among the weighted members")
        return raw[participant] / max(raw.values())


def clip(delta: ParameterVector, bound: float) -> ParameterVector:
    """Clamp every entry into [-bound, +bound]."""
    if not bound > 0:
        raise InvalidConfig(f"Clip bound must be > 0, got {bound}")
    return np.clip(delta, -bound, bound)


def upload_count(dimension: int, upload_rate: float) -> int:
    """round(upload_rate * dimension), halves to even."""
    return dimension if upload_rate == 1 else int(round(upload_rate * dimension))


def top_indices(vector: ParameterVector, count: int) -> np.ndarray:
    """Indices of the `count` largest-magnitude entries (ties to lower index), sorted ascending."""
    order = np.argsort(-np.abs(vector), kind="stable")
    return np.sort(order[:count])


def sparsify(delta: ParameterVector, upload_rate: float) -> SparseUpdate:
    """Keep the round(upload_rate * d) largest-magnitude entries, signs preserved."""
    if not 0 < upload_rate <= 1:
        raise InvalidConfig(f"Upload rate must be in (0, 1], got {upload_rate}")
    dimension = int(delta.shape[0])
    if upload_rate == 1:
        return SparseUpdate.from_dense(delta)
    indices = top_indices(delta, upload_count(dimension, upload_rate))
    return SparseUpdate(indices, delta[indices], dimension)


def aggregate(
    updates: Dict[int, SparseUpdate],
    weights: AggregationWeights,
    members: Iterable[int],
) -> ParameterVector:
    """
    Weighted sum of the members' sparse uploads.

    Args:
        updates: Upload per participant (non-members are ignored)
        weights: Raw aggregation weights
        members: Reputable set R

    Returns:
        Dense aggregated update; positions nobody uploaded stay zero
    """
    members = sorted(members)
    dimensions = {u.dimension for u in updates.values()}
    if len(dimensions) > 1:
        raise DimensionMismatch(f"Uploads disagree on dimension: {sorted(dimensions)}")

    scale = weights.server_weights(members)
    dimension = dimensions.pop() if dimensions else 0
    total = np.zeros(dimension, dtype=np.float64)
    for j in members:
        if j not in updates:
            logger.debug(f"Participant {j} sent no upload this round")
            continue
        upload = updates[j]
        total[upload.indices] += scale[j] * upload.values
    return total


def allocate(
    agg: ParameterVector,
    count: int,
    own_upload: SparseUpdate,
    adjust_factor: float,
) -> SparseUpdate:
    """
    Group the `count` largest aggregated entries and remove the participant's own share.

    Returns the download top_count(agg) - adjust_factor * own_upload; the
    subtraction can add indices from `own_upload` outside the top set.
    """
    dimension = int(agg.shape[0])
    if not 0 <= count <= dimension:
        raise CountOutOfRange(f"Allocation count {count} outside [0, {dimension}]")
    if not 0 <= adjust_factor <= 1:
        raise InvalidConfig(f"Adjust factor must be in [0, 1], got {adjust_factor}")
    if own_upload.dimension != dimension:
        raise DimensionMismatch(f"Own upload has dimension {own_upload.dimension}, aggregate {dimension}")

    chosen = top_indices(agg, count)
    if adjust_factor == 0 or len(own_upload) == 0:
        return SparseUpdate(chosen, agg[chosen], dimension)

    indices = np.union1d(chosen, own_upload.indices)
    values = np.zeros(dimension, dtype=np.float64)
    values[chosen] = agg[chosen]
    values[own_upload.indices] -= adjust_factor * own_upload.values
    return SparseUpdate(indices, values[indices], dimension)
