"""
Tests for validation scoring, reputation updates, eviction and allocation counts.
"""

import math

import numpy as np
import pytest

from src.errors import AllEvicted, InvalidConfig, NotReputable, ZeroValidationSum
from src.model import Dataset, ModelArchitecture
from src.reputation import (
    ReputationState,
    ServerModels,
    allocation_count,
    punish,
    update_reputations,
    validation_accuracy,
)
from src.updates import AggregationWeights, SparseUpdate, WeightingMode


def make_state(reputations, threshold=0.0, alpha=5.0, members=None) -> ReputationState:
    members = set(reputations) if members is None else set(members)
    return ReputationState(dict(reputations), frozenset(members), threshold, alpha)


class TestPunish:
    """Tests for the sinh punishment."""

    def test_sinh_value(self):
        assert punish(0.2, 5.0) == pytest.approx(math.sinh(1.0), abs=1e-12)

    def test_zero_maps_to_zero(self):
        assert punish(0.0, 5.0) == 0.0

    def test_invalid_alpha(self):
        with pytest.raises(InvalidConfig):
            punish(0.1, 0.0)


class TestUpdateReputations:
    """Tests for the reputation update and eviction loop."""

    def test_equal_accuracies_keep_uniform_reputations(self):
        state = ReputationState.initial(range(4), 0.0, 5.0)
        updated = update_reputations(state, {j: 0.8 for j in range(4)})
        assert all(updated.reputations[j] == pytest.approx(0.25) for j in range(4))
        assert updated.reputable_set == frozenset(range(4))

    def test_better_accuracy_earns_higher_reputation(self):
        state = ReputationState.initial(range(3), 0.0, 5.0)
        updated = update_reputations(state, {0: 0.5, 1: 0.7, 2: 0.9})
        assert updated.reputations[0] < updated.reputations[1] < updated.reputations[2]

    def test_low_scorer_is_evicted_and_keeps_last_reputation(self):
        state = ReputationState.initial(range(3), 0.2, 5.0)
        updated = update_reputations(state, {0: 0.9, 1: 0.9, 2: 0.05})
        assert updated.reputable_set == frozenset({0, 1})
        assert updated.reputations[2] < 0.2
        assert updated.reputations[0] + updated.reputations[1] == pytest.approx(1.0, abs=1e-12)

    def test_evicting_everyone_raises(self):
        state = ReputationState.initial(range(2), 1.5, 5.0)
        with pytest.raises(AllEvicted):
            update_reputations(state, {0: 0.5, 1: 0.6})

    def test_zero_validation_sum(self):
        state = ReputationState.initial(range(2), 0.0, 5.0)
        with pytest.raises(ZeroValidationSum):
            update_reputations(state, {0: 0.0, 1: 0.0})

    def test_missing_accuracy(self):
        state = ReputationState.initial(range(2), 0.0, 5.0)
        with pytest.raises(InvalidConfig):
            update_reputations(state, {0: 0.5})

    def test_non_members_untouched(self):
        state = make_state({0: 0.6, 1: 0.4, 2: 0.01}, members={0, 1})
        updated = update_reputations(state, {0: 0.8, 1: 0.8})
        assert updated.reputations[2] == 0.01
        assert updated.reputable_set == frozenset({0, 1})

    def test_persistent_low_scorer_keeps_losing_reputation(self):
        """The lowest scorer loses reputation every round; the others stay level with each other."""
        state = ReputationState.initial(range(4), 0.0, 5.0)
        vaccs = {0: 0.5, 1: 0.8, 2: 0.8, 3: 0.8}
        history = [state.reputations]
        for _ in range(5):
            state = update_reputations(state, vaccs)
            history.append(state.reputations)

        low = [reps[0] for reps in history]
        assert all(later < earlier for earlier, later in zip(low, low[1:]))
        for reps in history:
            assert reps[1] == reps[2] == reps[3]
        high = [reps[1] for reps in history]
        assert all(later >= earlier for earlier, later in zip(high, high[1:]))
        assert state.reputable_set == frozenset(range(4))

    def test_top_member_survives_thresholds_up_to_uniform_share(self):
        """With c_th <= 1/|R| the highest-reputation member is never evicted."""
        rng = np.random.default_rng(1)
        for _ in range(1000):
            p = int(rng.integers(1, 12))
            raw = rng.uniform(0.01, 1.0, size=p)
            state = make_state({j: float(v) for j, v in enumerate(raw / raw.sum())},
                               threshold=float(rng.uniform(0, 1.0 / p)))
            vaccs = {j: float(rng.uniform(0.05, 1.0)) for j in range(p)}
            updated = update_reputations(state, vaccs)
            top = max(range(p), key=lambda j: (updated.reputations[j], -j))
            assert top in updated.reputable_set

    def test_normalization_and_termination_over_random_cases(self):
        """1,000 random states: R sums to 1 within 1e-12, survivors clear the threshold, R only shrinks."""
        rng = np.random.default_rng(0)
        for _ in range(1000):
            p = int(rng.integers(1, 12))
            raw = rng.uniform(0.01, 1.0, size=p)
            state = make_state({j: float(v) for j, v in enumerate(raw / raw.sum())},
                               threshold=float(rng.uniform(0, 0.5 / p)))
            vaccs = {j: float(rng.uniform(0.05, 1.0)) for j in range(p)}
            try:
                updated = update_reputations(state, vaccs)
            except AllEvicted:
                continue
            members = updated.reputable_set
            assert members <= state.reputable_set
            assert sum(updated.reputations[j] for j in members) == pytest.approx(1.0, abs=1e-12)
            assert all(updated.reputations[j] >= state.threshold for j in members)


class TestAllocationCount:
    """Tests for num_j."""

    def test_best_participant_gets_everything(self):
        state = make_state({0: 0.2, 1: 0.3, 2: 0.5})
        weights = AggregationWeights(WeightingMode.DATA_SIZE, {0: 100, 1: 200, 2: 400})
        assert allocation_count(state, weights, 1000, 2) == 1000

    def test_scaled_by_reputation_and_size(self):
        state = make_state({0: 0.2, 1: 0.3, 2: 0.5})
        weights = AggregationWeights(WeightingMode.DATA_SIZE, {0: 100, 1: 200, 2: 400})
        # floor(0.2/0.5 * 100/400 * 1000) = 100
        assert allocation_count(state, weights, 1000, 0) == 100
        # floor(0.3/0.5 * 200/400 * 1000) = 300
        assert allocation_count(state, weights, 1000, 1) == 300

    def test_monotone_in_reputation_and_raw_weight(self):
        """Raising one participant's reputation or raw weight never lowers its count."""
        rng = np.random.default_rng(2)
        for _ in range(500):
            p = int(rng.integers(2, 8))
            reputations = {j: float(v) for j, v in enumerate(rng.uniform(0.01, 1.0, size=p))}
            raw = {j: float(v) for j, v in enumerate(rng.integers(1, 500, size=p))}
            size = int(rng.integers(0, 5000))
            j = int(rng.integers(0, p))
            base = allocation_count(make_state(reputations), AggregationWeights(WeightingMode.DATA_SIZE, raw), size, j)

            more_reputation = {**reputations, j: reputations[j] + float(rng.uniform(0, 1))}
            more_weight = {**raw, j: raw[j] + float(rng.integers(1, 200))}
            weights = AggregationWeights(WeightingMode.DATA_SIZE, raw)
            assert allocation_count(make_state(more_reputation), weights, size, j) >= base
            assert allocation_count(
                make_state(reputations), AggregationWeights(WeightingMode.DATA_SIZE, more_weight), size, j
            ) >= base

    def test_empty_aggregate(self):
        state = make_state({0: 0.5, 1: 0.5})
        weights = AggregationWeights(WeightingMode.CLASS_NUMBER, {0: 1, 1: 1})
        assert allocation_count(state, weights, 0, 0) == 0

    def test_not_reputable(self):
        state = make_state({0: 0.5, 1: 0.5}, members={0})
        weights = AggregationWeights(WeightingMode.DATA_SIZE, {0: 1, 1: 1})
        with pytest.raises(NotReputable):
            allocation_count(state, weights, 10, 1)


class TestValidationAccuracy:
    """Tests for scoring uploads against the server models."""

    def make_setup(self):
        arch = ModelArchitecture((1, 2))
        # Class 1 wins when the bias of output 1 is positive
        validation = Dataset(np.zeros((4, 1)), np.array([1, 1, 1, 0]), 2)
        server = ServerModels.initial(np.zeros(arch.num_parameters), [0, 1])
        upload = SparseUpdate(np.array([3]), np.array([0.5]), arch.num_parameters)
        return arch, validation, server, upload

    def test_upload_applied_to_auxiliary_model(self):
        arch, validation, server, upload = self.make_setup()
        assert validation_accuracy(arch, upload, server, validation, 0.1, 0) == 0.75
        assert np.all(server.auxiliary == 0)

    def test_full_upload_uses_participant_replica(self):
        arch, validation, server, upload = self.make_setup()
        server.replicas[1][3] = -1.0
        assert validation_accuracy(arch, upload, server, validation, 1.0, 1) == 0.25
        assert validation_accuracy(arch, upload, server, validation, 1.0, 0) == 0.75

    def test_apply_upload_and_aggregate(self):
        arch, _, server, upload = self.make_setup()
        server.apply_upload(0, upload)
        server.apply_aggregate(np.full(arch.num_parameters, 0.1))
        assert server.replicas[0][3] == 0.5
        assert server.replicas[1][3] == 0.0
        assert server.auxiliary == pytest.approx([0.1] * arch.num_parameters)
