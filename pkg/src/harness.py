"""
Experiment harness: builds datasets and shards, runs every framework for
every seed, scores collaborative fairness and writes run artifacts.

Run directory layout:
    <output_dir>/<name>/seed_<seed>/<framework>/
        config.yaml, metrics.csv, summary.json, series_<participant>.csv
"""

import csv
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import pearsonr

from . import config as defaults
from .config import ExperimentConfig, save_config
from .data_loader import (
    PartitionPlan,
    PartitionScheme,
    Shard,
    claim_shard,
    load_adult,
    load_mnist,
    make_synthetic,
    partition,
    split_validation,
)
from .errors import DegenerateInput, MissingMetrics
from .model import Dataset, ModelArchitecture, SgdConfig, init_parameters
from .protocols import (
    Behavior,
    Framework,
    ParticipantState,
    ProtocolConfig,
    ReputationConfig,
    RoundMetrics,
    run_cffl,
    run_dssgd,
    run_fedavg,
    run_standalone,
)
from .reputation import ServerModels
from .rng import derive_seed
from .updates import WeightingMode

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
SUMMARY_FILE = "summary.json"
CONFIG_FILE = "config.yaml"
METRICS_COLUMNS = [
    "round", "participant", "validation_accuracy", "test_accuracy",
    "reputation", "allocation_count", "evicted",
]

SCENARIO_SCHEMES = {
    "ImbalancedSize": PartitionScheme.POWER_LAW_SIZE,
    "ImbalancedClass": PartitionScheme.LINSPACE_CLASS,
    "Uniform": PartitionScheme.UNIFORM,
}


@dataclass(frozen=True)
class FairnessReport:
    """Standalone accuracies x, federated accuracies y and their Pearson coefficient."""
    x: Tuple[float, ...]
    y: Tuple[float, ...]
    coefficient: float


def fairness(x: Sequence[float], y: Sequence[float]) -> float:
    """
    Collaborative fairness: sample Pearson correlation between standalone
    accuracies x (contributions) and final federated accuracies y (rewards).

    Raises:
        DegenerateInput: if lengths differ, fewer than 2 pairs, or a standard deviation is zero
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DegenerateInput(f"x and y must be equal-length vectors, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise DegenerateInput("Fairness needs at least two participants")
    if np.std(x, ddof=1) == 0 or np.std(y, ddof=1) == 0:
        raise DegenerateInput("Fairness is undefined when all accuracies are equal")
    return float(pearsonr(x, y).statistic)


def fairness_report(x: Sequence[float], y: Sequence[float]) -> FairnessReport:
    return FairnessReport(tuple(x), tuple(y), fairness(x, y))


# --- Data ---

@dataclass
class ExperimentData:
    train: Dataset
    validation: Dataset
    test: Dataset
    shards: List[Shard]
    claimed: List[Shard]


def load_dataset(cfg: ExperimentConfig, seed: int) -> Tuple[Dataset, Dataset]:
    if cfg.dataset == "MNIST":
        return load_mnist(cfg.data_path)
    if cfg.dataset == "Adult":
        return load_adult(cfg.data_path, derive_seed(seed, "split", 1), cfg.adult_records_per_class)
    return make_synthetic(
        cfg.synthetic_examples, cfg.synthetic_features, cfg.synthetic_classes,
        derive_seed(seed, "synthetic"), cfg.synthetic_spread,
    )


def prepare_data(cfg: ExperimentConfig, seed: int) -> ExperimentData:
    """Load, split off validation, partition shards and claim free-rider shards."""
    train, test = load_dataset(cfg, seed)
    train, validation = split_validation(train, cfg.validation_fraction, derive_seed(seed, "split"))
    plan = PartitionPlan(
        SCENARIO_SCHEMES[cfg.scenario], cfg.participant_count,
        cfg.resolved_total_examples(), cfg.power_law_exponent,
    )
    shards = partition(train, plan, derive_seed(seed, "partition"))

    claimed = []
    claim_size = int(round(np.mean([s.example_count for s in shards])))
    for k in range(cfg.free_riders):
        owner = cfg.participant_count + k
        claimed.append(claim_shard(train, claim_size, owner, derive_seed(seed, "claim", owner)))

    logger.info(
        f"Data ready: {len(train)} train / {len(validation)} validation / {len(test)} test, "
        f"shard sizes {[s.example_count for s in shards]}"
    )
    return ExperimentData(train, validation, test, shards, claimed)


# --- Protocol setup ---

def build_architecture(cfg: ExperimentConfig, data: ExperimentData) -> ModelArchitecture:
    sizes = [data.train.feature_count, *cfg.resolved_hidden_layers(), data.train.class_count]
    return ModelArchitecture(tuple(sizes), cfg.activation)


def build_protocol_config(
    cfg: ExperimentConfig, framework: Framework, arch: ModelArchitecture, seed: int
) -> ProtocolConfig:
    sgd = SgdConfig(cfg.learning_rate, cfg.decay_gamma, cfg.batch_size, cfg.local_epochs, cfg.clip_bound)
    reputation = ReputationConfig(cfg.alpha, cfg.threshold, cfg.resolved_threshold_scale())
    return ProtocolConfig(
        framework=framework,
        architecture=arch,
        rounds=cfg.rounds,
        sgd=sgd,
        upload_rate=cfg.upload_rate,
        download_rate=cfg.download_rate,
        pretrain_epochs=cfg.pretrain_epochs if framework == Framework.CFFL else 0,
        weighting_mode=WeightingMode(cfg.resolved_weighting_mode()),
        reputation=reputation,
        seed=seed,
    )


def build_participants(data: ExperimentData, initial, include_free_riders: bool) -> List[ParticipantState]:
    participants = [ParticipantState(s.owner, initial.copy(), s) for s in data.shards]
    if include_free_riders:
        participants += [
            ParticipantState(s.owner, initial.copy(), s, Behavior.FREE_RIDER) for s in data.claimed
        ]
    return participants


def run_framework(
    framework: Framework,
    protocol: ProtocolConfig,
    data: ExperimentData,
    progress_callback: Optional[Callable[[int, int], None]] = None,
) -> List[RoundMetrics]:
    """Run one framework from the shared initial model."""
    initial = init_parameters(protocol.architecture, derive_seed(protocol.seed, "init"))
    participants = build_participants(data, initial, framework == Framework.CFFL)

    if framework == Framework.CFFL:
        server = ServerModels.initial(initial, [p.id for p in participants])
        return run_cffl(participants, server, protocol, data.validation, data.test, progress_callback)
    if framework == Framework.FEDAVG:
        return run_fedavg(participants, protocol, data.test, progress_callback)
    if framework == Framework.DSSGD:
        return run_dssgd(participants, protocol, data.test, progress_callback)
    return run_standalone(participants, protocol, data.test, progress_callback)


# --- Artifacts ---

def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def write_metrics(metrics: List[RoundMetrics], path: Path) -> Path:
    """One row per (round, participant); floats in shortest round-trip form."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=METRICS_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for round_metrics in metrics:
            writer.writerows(
                {
                    "round": round_metrics.round,
                    "participant": r.participant,
                    "validation_accuracy": _format(r.validation_accuracy),
                    "test_accuracy": _format(r.test_accuracy),
                    "reputation": _format(r.reputation),
                    "allocation_count": _format(r.allocation_count),
                    "evicted": _format(r.evicted),
                }
                for r in round_metrics.records
            )
    return path


def read_metrics(run_dir) -> pd.DataFrame:
    path = Path(run_dir) / METRICS_FILE
    if not path.exists():
        raise MissingMetrics(f"No {METRICS_FILE} in {run_dir}")
    frame = pd.read_csv(path, float_precision="round_trip")
    if frame.empty:
        raise MissingMetrics(f"{path} holds no rounds")
    return frame


def final_accuracies(metrics: List[RoundMetrics]) -> Dict[int, float]:
    """Per-participant test accuracy at the last round."""
    if not metrics:
        return {}
    return {r.participant: r.test_accuracy for r in metrics[-1].records}


def final_accuracies_from_frame(frame: pd.DataFrame) -> Dict[int, float]:
    last = frame[frame["round"] == frame["round"].max()]
    return {int(p): float(a) for p, a in zip(last["participant"], last["test_accuracy"])}


def eviction_log(metrics: List[RoundMetrics]) -> Dict[int, int]:
    """Participant -> first round it was flagged evicted."""
    evicted = {}
    for round_metrics in metrics:
        for r in round_metrics.records:
            if r.evicted and r.participant not in evicted:
                evicted[r.participant] = round_metrics.round
    return evicted


def summarize(
    framework: Framework,
    seed: int,
    final: Dict[int, float],
    standalone: Dict[int, float],
    evictions: Dict[int, int],
) -> Dict:
    """Flat summary: fairness over participants present in both runs, best accuracy, evictions."""
    shared = sorted(set(final) & set(standalone))
    summary = {
        "framework": framework.value,
        "seed": seed,
        "fairness": None,
        "fairness_error": None,
        "max_accuracy": max(final.values()) if final else None,
        "best_participant": None,
        "best_standalone_accuracy": None,
        "evicted_participants": sorted(evictions),
        "eviction_rounds": [evictions[j] for j in sorted(evictions)],
    }
    if final:
        best = max(sorted(final), key=lambda j: final[j])
        summary["best_participant"] = best
        summary["best_standalone_accuracy"] = standalone.get(best)
    try:
        summary["fairness"] = fairness([standalone[j] for j in shared], [final[j] for j in shared])
    except DegenerateInput as e:
        logger.warning(f"{framework.value} seed {seed}: fairness undefined - {e}")
        summary["fairness_error"] = f"DegenerateInput: {e}"
    return summary


def write_summary(summary: Dict, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2)
        f.write("\n")
    return path


def run_directory(cfg: ExperimentConfig, seed: int, framework: Framework) -> Path:
    return Path(cfg.output_dir) / cfg.name / f"seed_{seed}" / framework.value


def run_experiment(
    cfg: ExperimentConfig,
    progress_callback: Optional[Callable[[str, int, int, int], None]] = None,
) -> List[Path]:
    """
    Run Standalone plus every configured framework for every seed.

    Standalone always runs first; its final accuracies are the contribution
    vector x for every framework's fairness score.

    Args:
        cfg: Experiment configuration
        progress_callback: Optional callback(framework, seed, round, total)

    Returns:
        Run directories written, in execution order
    """
    frameworks = [Framework.STANDALONE] + [
        Framework(f) for f in dict.fromkeys(cfg.frameworks) if f != Framework.STANDALONE.value
    ]
    written = []

    for seed in cfg.seeds:
        data = prepare_data(cfg, seed)
        arch = build_architecture(cfg, data)
        standalone_final: Dict[int, float] = {}

        for framework in frameworks:
            protocol = build_protocol_config(cfg, framework, arch, seed)
            callback = None
            if progress_callback:
                callback = lambda done, total, name=framework.value: progress_callback(name, seed, done, total)

            logger.info(f"Running {framework.value} (seed {seed}, {cfg.rounds} rounds)")
            metrics = run_framework(framework, protocol, data, callback)

            final = final_accuracies(metrics)
            if framework == Framework.STANDALONE:
                standalone_final = final

            run_dir = run_directory(cfg, seed, framework)
            save_config(replace(cfg, seeds=[seed], frameworks=[framework.value]), run_dir / CONFIG_FILE)
            write_metrics(metrics, run_dir / METRICS_FILE)
            write_summary(
                summarize(framework, seed, final, standalone_final, eviction_log(metrics)),
                run_dir / SUMMARY_FILE,
            )
            logger.info(f"Wrote {run_dir}")
            written.append(run_dir)

    return written


def recompute_fairness(standalone_dir, run_dir) -> FairnessReport:
    """Fairness of a finished run against a finished Standalone run, from their metrics.csv."""
    standalone = final_accuracies_from_frame(read_metrics(standalone_dir))
    final = final_accuracies_from_frame(read_metrics(run_dir))
    shared = sorted(set(final) & set(standalone))
    return fairness_report([standalone[j] for j in shared], [final[j] for j in shared])


def emit_plot_data(run_dir) -> List[Path]:
    """
    Write one accuracy-vs-round series per participant.

    Returns:
        Paths of series_<participant>.csv files with columns (round, test_accuracy)
    """
    run_dir = Path(run_dir)
    frame = read_metrics(run_dir)
    written = []
    for participant, series in frame.groupby("participant", sort=True):
        path = run_dir / f"series_{participant}.csv"
        series[["round", "test_accuracy"]].sort_values("round").to_csv(path, index=False)
        written.append(path)
    logger.info(f"Wrote {len(written)} plot series to {run_dir}")
    return written
