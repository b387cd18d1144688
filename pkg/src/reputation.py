"""
Reputation engine: scores each upload on the validation set, turns scores into
reputations through the sinh punishment, evicts participants that fall below
the threshold and sizes each participant's share of the aggregated update.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, FrozenSet, Iterable

import numpy as np

from .errors import AllEvicted, DimensionMismatch, InvalidConfig, NotReputable, ZeroValidationSum
from .model import Dataset, ModelArchitecture, ParameterVector, evaluate
from .updates import AggregationWeights, SparseUpdate

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReputationState:
    """Reputations c_j, the reputable set R, threshold c_th and punishment factor alpha."""
    reputations: Dict[int, float]
    reputable_set: FrozenSet[int]
    threshold: float
    punishment_alpha: float

    @classmethod
    def initial(cls, participants: Iterable[int], threshold: float, punishment_alpha: float) -> "ReputationState":
        """Uniform 1/P reputations with every participant reputable."""
        participants = sorted(participants)
        if not participants:
            raise InvalidConfig("Reputation state needs at least one participant")
        share = 1.0 / len(participants)
        return cls({j: share for j in participants}, frozenset(participants), threshold, punishment_alpha)

    def with_threshold(self, threshold: float) -> "ReputationState":
        return replace(self, threshold=threshold)

    def max_reputation(self) -> float:
        return max(self.reputations[j] for j in self.reputable_set)


@dataclass
class ServerModels:
    """
    Models the server keeps for evaluating uploads.

    The auxiliary model w_g is used when only part of each gradient is
    uploaded; with full uploads the server instead tracks a replica w_j of
    every participant's model.
    """
    auxiliary: ParameterVector
    replicas: Dict[int, ParameterVector]

    @classmethod
    def initial(cls, params: ParameterVector, participants: Iterable[int]) -> "ServerModels":
        return cls(params.copy(), {j: params.copy() for j in sorted(participants)})

    def base_model(self, participant: int, upload_rate: float) -> ParameterVector:
        if upload_rate == 1:
            return self.replicas[participant]
        return self.auxiliary

    def apply_upload(self, participant: int, upload: SparseUpdate) -> None:
        """w_j' = w_j + upload on the server-side replica."""
        self.replicas[participant][upload.indices] += upload.values

    def apply_aggregate(self, delta: ParameterVector) -> None:
        """w_g' = w_g + aggregated update."""
        self.auxiliary += delta


def validation_accuracy(
    arch: ModelArchitecture,
    upload: SparseUpdate,
    server: ServerModels,
    validation: Dataset,
    upload_rate: float,
    participant: int,
) -> float:
    """
    Validation accuracy of a participant's upload applied to the server model.

    The upload is added to the participant's replica when upload_rate is 1,
    otherwise to the auxiliary model. Server state is left untouched.
    """
    base = server.base_model(participant, upload_rate)
    if upload.dimension != base.shape[0]:
        raise DimensionMismatch(
            f"Upload from participant {participant} has dimension {upload.dimension}, model {base.shape[0]}"
        )
    candidate = base.copy()
    candidate[upload.indices] += upload.values
    return evaluate(arch, candidate, validation)


def punish(normalized_vacc: float, alpha: float) -> float:
    """sinh(alpha * x): widens the gap between strong and weak contributions."""
    if not alpha > 0:
        raise InvalidConfig(f"Punishment factor must be > 0, got {alpha}")
    return float(np.sinh(alpha * normalized_vacc))


def _normalize(values: Dict[int, float]) -> Dict[int, float]:
    total = sum(values.values())
    if total <= 0:
        return {j: 1.0 / len(values) for j in values}
    return {j: v / total for j, v in values.items()}


def update_reputations(state: ReputationState, vaccs: Dict[int, float]) -> ReputationState:
    """
    One round of reputation bookkeeping.

    Each member's validation accuracy is normalized by the sum over R, passed
    through `punish`, blended 50/50 with its previous reputation and the
    result normalized over R. Members below the threshold are then evicted one
    at a time (lowest first, renormalizing after each) until none remain below.

    Args:
        state: Reputations before this round
        vaccs: Validation accuracy per participant (must cover R)

    Returns:
        New ReputationState; evicted members keep their last reputation
    """
    members = sorted(state.reputable_set)
    missing = [j for j in members if j not in vaccs]
    if missing:
        raise InvalidConfig(f"No validation accuracy for reputable participants {missing}")

    total_vacc = sum(vaccs[j] for j in members)
    if total_vacc <= 0:
        raise ZeroValidationSum("Validation accuracies of the reputable set sum to zero")

    blended = {
        j: 0.5 * state.reputations[j] + 0.5 * punish(vaccs[j] / total_vacc, state.punishment_alpha)
        for j in members
    }
    current = _normalize(blended)
    reputations = dict(state.reputations)

    while True:
        below = [j for j in current if current[j] < state.threshold]
        if not below:
            break
        evicted = min(below, key=lambda j: (current[j], j))
        reputations[evicted] = current.pop(evicted)
        logger.info(
            f"Participant {evicted} evicted: reputation {reputations[evicted]:.4f} < threshold {state.threshold:.4f}"
        )
        if not current:
            raise AllEvicted("Every participant fell below the reputation threshold")
        current = _normalize(current)

    reputations.update(current)
    return replace(state, reputations=reputations, reputable_set=frozenset(current))


def allocation_count(
    state: ReputationState,
    weights: AggregationWeights,
    agg_size: int,
    participant: int,
) -> int:
    """
    Number of aggregated entries participant j may download:
    floor(c_j / max(c) * raw_j / max(raw) * agg_size), maxima over R.
    """
    if participant not in state.reputable_set:
        raise NotReputable(f"Participant {participant} is not in the reputable set")
    if agg_size < 0:
        raise InvalidConfig(f"Aggregate size must be >= 0, got {agg_size}")

    reputation_ratio = state.reputations[participant] / state.max_reputation()
    weight_ratio = weights.relative(participant, state.reputable_set)
    return int(math.floor(reputation_ratio * weight_ratio * agg_size))
