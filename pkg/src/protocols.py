"""
Protocol runners: CFFL end to end, plus the Standalone, FedAvg and DSSGD
baselines and the free-rider adversary.

Every runner mutates only the participants' models, returns one RoundMetrics
per round (rounds numbered from 1) and is deterministic for a given config
seed.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional

import numpy as np

from .data_loader import Shard
from .errors import ConfigError, InvalidConfig
from .model import Dataset, ModelArchitecture, ParameterVector, SgdConfig, evaluate, is_count, local_sgd
from .reputation import ReputationState, ServerModels, allocation_count, update_reputations, validation_accuracy
from .rng import derive_seed, make_rng
from .updates import (
    AggregationWeights,
    SparseUpdate,
    WeightingMode,
    aggregate,
    allocate,
    clip,
    sparsify,
    upload_count,
)

logger = logging.getLogger(__name__)


class Framework(Enum):
    CFFL = "CFFL"
    FEDAVG = "FedAvg"
    DSSGD = "DSSGD"
    STANDALONE = "Standalone"


class Behavior(Enum):
    HONEST = "Honest"
    FREE_RIDER = "FreeRider"


@dataclass(frozen=True)
class ReputationConfig:
    """
    Punishment factor and reputation threshold.

    An absolute `threshold` wins; otherwise the threshold is
    threshold_scale / |R|, recomputed from the reputable set every round.
    """
    alpha: float = 5.0
    threshold: Optional[float] = None
    threshold_scale: Optional[float] = 1.0 / 3.0

    def threshold_for(self, reputable_count: int) -> float:
        if self.threshold is not None:
            return self.threshold
        if self.threshold_scale is None or reputable_count == 0:
            return 0.0
        return self.threshold_scale / reputable_count


@dataclass(frozen=True)
class ProtocolConfig:
    framework: Framework
    architecture: ModelArchitecture
    rounds: int
    sgd: SgdConfig = field(default_factory=SgdConfig)
    upload_rate: float = 0.1
    download_rate: float = 1.0
    pretrain_epochs: int = 0
    weighting_mode: WeightingMode = WeightingMode.DATA_SIZE
    reputation: ReputationConfig = field(default_factory=ReputationConfig)
    seed: int = 0

    def __post_init__(self):
        if not is_count(self.rounds) or self.rounds < 0:
            raise InvalidConfig(f"rounds must be an integer >= 0, got {self.rounds}")
        if not 0 < self.upload_rate <= 1:
            raise InvalidConfig(f"upload_rate must be in (0, 1], got {self.upload_rate}")
        if not 0 < self.download_rate <= 1:
            raise InvalidConfig(f"download_rate must be in (0, 1], got {self.download_rate}")
        if not is_count(self.pretrain_epochs) or self.pretrain_epochs < 0:
            raise InvalidConfig(f"pretrain_epochs must be an integer >= 0, got {self.pretrain_epochs}")
        if self.pretrain_epochs and self.framework != Framework.CFFL:
            logger.warning(f"pretrain_epochs is only used by CFFL, ignored for {self.framework.value}")


@dataclass
class ParticipantState:
    """A participant's local model w_j and shard. `seed` overrides the per-id SGD seed."""
    id: int
    model: ParameterVector
    shard: Shard
    behavior: Behavior = Behavior.HONEST
    seed: Optional[int] = None


@dataclass(frozen=True)
class ParticipantRecord:
    participant: int
    test_accuracy: float
    validation_accuracy: Optional[float] = None
    reputation: Optional[float] = None
    allocation_count: Optional[int] = None
    evicted: bool = False


@dataclass
class RoundMetrics:
    round: int
    records: List[ParticipantRecord]

    def record_for(self, participant: int) -> ParticipantRecord:
        for record in self.records:
            if record.participant == participant:
                return record
        raise KeyError(participant)


ProgressCallback = Callable[[int, int], None]


def _participant_seed(config: ProtocolConfig, participant: ParticipantState, purpose: str) -> int:
    if participant.seed is not None:
        return derive_seed(participant.seed, purpose)
    return derive_seed(config.seed, purpose, participant.id)


def _check_shapes(config: ProtocolConfig, participants: List[ParticipantState]) -> None:
    dimension = config.architecture.num_parameters
    for p in participants:
        if p.model.shape != (dimension,):
            raise ConfigError(f"Participant {p.id} model has shape {p.model.shape}, expected ({dimension},)")
        if p.shard.data.feature_count != config.architecture.layer_sizes[0]:
            raise ConfigError(
                f"Participant {p.id} data has {p.shard.data.feature_count} features, "
                f"architecture expects {config.architecture.layer_sizes[0]}"
            )
    if len({p.id for p in participants}) != len(participants):
        raise ConfigError("Participant ids must be unique")


def make_free_rider(
    dimension: int,
    seed: int,
    upload_rate: float = 1.0,
    bound: float = 0.01,
) -> Callable[[int], SparseUpdate]:
    """
    Upload generator for a participant that sends noise instead of gradients.

    Each round's upload has the honest sparsity, random indices and values
    uniform in [-bound, bound], keyed on (seed, round).
    """
    count = upload_count(dimension, upload_rate)

    def upload(round_index: int) -> SparseUpdate:
        rng = make_rng(seed, round_index)
        indices = np.sort(rng.choice(dimension, size=count, replace=False))
        return SparseUpdate(indices, rng.uniform(-bound, bound, size=count), dimension)

    return upload


def _raw_weights(participants: List[ParticipantState], mode: WeightingMode) -> Dict[int, float]:
    if mode == WeightingMode.DATA_SIZE:
        return {p.id: float(p.shard.example_count) for p in participants}
    return {p.id: float(p.shard.class_count) for p in participants}


def run_cffl(
    participants: List[ParticipantState],
    server: ServerModels,
    config: ProtocolConfig,
    validation: Dataset,
    test: Dataset,
    progress_callback: Optional[ProgressCallback] = None,
    aggregation_callback: Optional[Callable[[int, Dict[int, SparseUpdate], List[int]], None]] = None,
) -> List[RoundMetrics]:
    """
    Run Collaborative Fair Federated Learning.

    Per round: members of R train locally, clip and sparsify their update and
    upload it; the server aggregates, scores every upload on the validation
    set, updates reputations (evicting members below the threshold) and hands
    each remaining member its reputation-sized share of the aggregate, minus
    its own weighted contribution. Evicted participants are frozen.

    Args:
        participants: Participants sharing the server's initial model
        server: Auxiliary model and per-participant replicas
        config: Protocol settings
        validation: Server-side validation set
        test: Test set for per-participant accuracy
        progress_callback: Optional callback(round, total)
        aggregation_callback: Optional callback(round, uploads, members) with
            exactly the uploads that entered the aggregation

    Returns:
        One RoundMetrics per round
    """
    participants = sorted(participants, key=lambda p: p.id)
    _check_shapes(config, participants)
    for p in participants:
        if not np.array_equal(p.model, server.auxiliary) or p.id not in server.replicas:
            raise ConfigError(f"Participant {p.id} does not share the server's initial model")

    arch, sgd = config.architecture, config.sgd
    dimension = arch.num_parameters
    by_id = {p.id: p for p in participants}
    raw = _raw_weights(participants, config.weighting_mode)
    free_riders = {
        p.id: make_free_rider(dimension, derive_seed(config.seed, "adversary", p.id), config.upload_rate, sgd.clip_bound)
        for p in participants
        if p.behavior == Behavior.FREE_RIDER
    }
    state = ReputationState.initial(by_id, config.reputation.threshold_for(len(by_id)), config.reputation.alpha)

    if config.pretrain_epochs:
        pretrain = replace(sgd, local_epochs=config.pretrain_epochs)
        for p in participants:
            if p.behavior == Behavior.HONEST:
                p.model = p.model + local_sgd(arch, p.model, p.shard.data, pretrain, 0, _participant_seed(config, p, "pretrain"))
        logger.info(f"Pretrained {len(participants) - len(free_riders)} participants for {config.pretrain_epochs} epochs")

    metrics: List[RoundMetrics] = []
    last_records: Dict[int, ParticipantRecord] = {}

    for r in range(config.rounds):
        members = sorted(state.reputable_set)
        state = state.with_threshold(config.reputation.threshold_for(len(members)))

        # Participant tier: local training and upload
        deltas: Dict[int, ParameterVector] = {}
        uploads: Dict[int, SparseUpdate] = {}
        for j in members:
            p = by_id[j]
            if j in free_riders:
                deltas[j] = np.zeros(dimension)
                uploads[j] = free_riders[j](r)
            else:
                deltas[j] = local_sgd(arch, p.model, p.shard.data, sgd, r, _participant_seed(config, p, "sgd"))
                uploads[j] = sparsify(clip(deltas[j], sgd.clip_bound), config.upload_rate)

        # Server tier: aggregation, evaluation, reputation, allocation
        if aggregation_callback:
            aggregation_callback(r + 1, dict(uploads), list(members))
        weights = AggregationWeights(config.weighting_mode, raw)
        aggregated = aggregate(uploads, weights, members)

        vaccs = {
            j: validation_accuracy(arch, uploads[j], server, validation, config.upload_rate, j)
            for j in members
        }
        if config.upload_rate == 1:
            for j in members:
                server.apply_upload(j, uploads[j])
        else:
            server.apply_aggregate(aggregated)

        state = update_reputations(state, vaccs)
        aggregate_size = int(np.count_nonzero(aggregated))

        allocations: Dict[int, int] = {}
        for j in members:
            p = by_id[j]
            if j in state.reputable_set:
                allocations[j] = allocation_count(state, weights, aggregate_size, j)
                download = allocate(aggregated, allocations[j], uploads[j], weights.relative(j, state.reputable_set))
                p.model = p.model + deltas[j] + download.to_dense()
            else:
                p.model = p.model + deltas[j]

        records = []
        for p in participants:
            if p.id in members:
                record = ParticipantRecord(
                    participant=p.id,
                    test_accuracy=evaluate(arch, p.model, test),
                    validation_accuracy=vaccs[p.id],
                    reputation=state.reputations[p.id],
                    allocation_count=allocations.get(p.id, 0),
                    evicted=p.id not in state.reputable_set,
                )
            else:
                record = replace(last_records[p.id], allocation_count=0, evicted=True)
            last_records[p.id] = record
            records.append(record)
            logger.debug(
                f"Round {r + 1} | participant {p.id} | test {record.test_accuracy:.4f} | "
                f"reputation {record.reputation:.4f} | alloc {record.allocation_count}"
            )

        metrics.append(RoundMetrics(r + 1, records))
        logger.info(
            f"CFFL round {r + 1}/{config.rounds}: |R|={len(state.reputable_set)}, "
            f"threshold={state.threshold:.4f}, aggregated entries={aggregate_size}"
        )
        if progress_callback:
            progress_callback(r + 1, config.rounds)

    return metrics


def run_standalone(
    participants: List[ParticipantState],
    config: ProtocolConfig,
    test: Dataset,
    progress_callback: Optional[ProgressCallback] = None,
) -> List[RoundMetrics]:
    """Each participant trains alone; accuracy is sampled at every round boundary."""
    participants = sorted(participants, key=lambda p: p.id)
    _check_shapes(config, participants)
    arch = config.architecture

    metrics = []
    for r in range(config.rounds):
        records = []
        for p in participants:
            p.model = p.model + local_sgd(arch, p.model, p.shard.data, config.sgd, r, _participant_seed(config, p, "sgd"))
            records.append(ParticipantRecord(p.id, evaluate(arch, p.model, test)))
        metrics.append(RoundMetrics(r + 1, records))
        if progress_callback:
            progress_callback(r + 1, config.rounds)
    return metrics


def fedavg_average(models: Dict[int, ParameterVector], sizes: Dict[int, float]) -> ParameterVector:
    """Data-size weighted mean of parameter vectors, summed in participant-id order."""
    total = sum(sizes[j] for j in models)
    average = np.zeros_like(next(iter(models.values())))
    for j in sorted(models):
        average += (sizes[j] / total) * models[j]
    return average


def run_fedavg(
    participants: List[ParticipantState],
    config: ProtocolConfig,
    test: Dataset,
    progress_callback: Optional[ProgressCallback] = None,
    aggregation_callback: Optional[Callable[[int, Dict[int, ParameterVector], ParameterVector], None]] = None,
) -> List[RoundMetrics]:
    """
    Federated averaging with the round-robin protocol.

    In ascending id order each participant downloads the global model,
    trains locally and uploads its parameters; its test accuracy is taken on
    the model it then holds. The server replaces the global model with the
    data-size weighted average at the end of the round.
    """
    participants = sorted(participants, key=lambda p: p.id)
    _check_shapes(config, participants)
    if not participants:
        return []
    arch = config.architecture
    sizes = {p.id: float(p.shard.example_count) for p in participants}
    global_model = participants[0].model.copy()

    metrics = []
    for r in range(config.rounds):
        uploaded = {}
        records = []
        for p in participants:
            p.model = global_model.copy()
            p.model = p.model + local_sgd(arch, p.model, p.shard.data, config.sgd, r, _participant_seed(config, p, "sgd"))
            uploaded[p.id] = p.model.copy()
            records.append(ParticipantRecord(p.id, evaluate(arch, p.model, test)))

        global_model = fedavg_average(uploaded, sizes)
        if aggregation_callback:
            aggregation_callback(r + 1, uploaded, global_model.copy())
        metrics.append(RoundMetrics(r + 1, records))
        if progress_callback:
            progress_callback(r + 1, config.rounds)
    return metrics


def most_recent_indices(stamps: np.ndarray, count: int) -> np.ndarray:
    """Indices of the `count` most recently updated parameters (ties to lower index)."""
    order = np.argsort(-stamps, kind="stable")
    return np.sort(order[:count])


def run_dssgd(
    participants: List[ParticipantState],
    config: ProtocolConfig,
    test: Dataset,
    progress_callback: Optional[ProgressCallback] = None,
) -> List[RoundMetrics]:
    """
    Distributed selective SGD with the round-robin protocol.

    In ascending id order each participant downloads the download_rate share
    of most recently updated global parameters, trains locally and uploads the
    largest-values upload_rate share of its clipped gradient, which the
    parameter server applies immediately.
    """
    participants = sorted(participants, key=lambda p: p.id)
    _check_shapes(config, participants)
    if not participants:
        return []
    arch, sgd = config.architecture, config.sgd
    dimension = arch.num_parameters
    global_model = participants[0].model.copy()
    stamps = np.zeros(dimension, dtype=np.int64)
    clock = 0
    download_size = upload_count(dimension, config.download_rate)

    metrics = []
    for r in range(config.rounds):
        records = []
        for p in participants:
            if config.download_rate == 1:
                p.model = global_model.copy()
            else:
                fresh = most_recent_indices(stamps, download_size)
                p.model = p.model.copy()
                p.model[fresh] = global_model[fresh]

            delta = local_sgd(arch, p.model, p.shard.data, sgd, r, _participant_seed(config, p, "sgd"))
            p.model = p.model + delta

            upload = sparsify(clip(delta, sgd.clip_bound), config.upload_rate)
            global_model[upload.indices] += upload.values
            clock += 1
            stamps[upload.indices] = clock

            records.append(ParticipantRecord(p.id, evaluate(arch, p.model, test)))
        metrics.append(RoundMetrics(r + 1, records))
        if progress_callback:
            progress_callback(r + 1, config.rounds)
    return metrics
