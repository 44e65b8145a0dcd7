"""Mask schedules and mask-state growth: rounding, clamping, monotone
chains, tie-breaking, and the tabular variant."""

import numpy as np
import pytest

from roarbench.data import BOS, EOS, MASK, Observation
from roarbench.errors import ContractViolation
from roarbench.importance import ImportanceMap
from roarbench.masking import (MaskState, StepSchedule, apply_mask,
                               cumulative_target, extend_mask, mask_tabular)

from helpers import topk_mask_oracle


def _map(scores, maskable=None, obs_id="t/0"):
    scores = np.asarray(scores, dtype=np.float64)
    if maskable is None:
        maskable = np.ones(len(scores), dtype=bool)
    return ImportanceMap(obs_id=obs_id, measure="oracle", iteration=1,
                         gold_label=0, scores=scores,
                         maskable=np.asarray(maskable, dtype=bool))


REL = StepSchedule(mode="relative", step_size=0.10)


def test_relative_targets_ten_tokens():
    assert cumulative_target(REL, 0, 10) == 0
    assert cumulative_target(REL, 1, 10) == 1
    assert cumulative_target(REL, 5, 10) == 5
    assert cumulative_target(REL, 10, 10) == 10
    assert REL.full_iterations(10) == 10


def test_relative_rounds_half_away_from_zero():
    # 1 * 0.1 * 5 = 0.5 -> 1; 3 * 0.1 * 15 = 4.5 -> 5
    assert cumulative_target(REL, 1, 5) == 1
    assert cumulative_target(REL, 3, 15) == 5
    # 3 * 0.1 * 7 = 2.1 -> 2
    assert cumulative_target(REL, 3, 7) == 2


def test_relative_final_iteration_saturates():
    for m in (1, 3, 7, 9, 13):
        assert cumulative_target(REL, REL.full_iterations(m), m) == m
    odd = StepSchedule(mode="relative", step_size=0.3)
    assert odd.full_iterations(10) == 4
    assert cumulative_target(odd, 4, 10) == 10


def test_absolute_schedule_clamps():
    sched = StepSchedule(mode="absolute", tokens_per_step=3)
    assert sched.full_iterations(7) == 3
    assert cumulative_target(sched, 2, 7) == 6
    assert cumulative_target(sched, 3, 7) == 7
    assert cumulative_target(sched, 9, 7) == 7
    assert sched.ratio(2, 7) == pytest.approx(6 / 7)
    assert sched.ratio(3, 7) == 1.0
    assert sched.ratio(1, 0) == 1.0


def test_ratio_grid_relative():
    assert [REL.ratio(j, 12) for j in (0, 1, 5, 10, 12)] == [
        0.0, 0.1, 0.5, 1.0, 1.0]


def test_max_iterations_truncates():
    sched = StepSchedule(mode="relative", step_size=0.10, max_iterations=3)
    assert sched.iterations(10) == 3
    assert sched.full_iterations(10) == 10
    wide = StepSchedule(mode="relative", step_size=0.5, max_iterations=9)
    assert wide.iterations(10) == 2


def test_schedule_validation():
    with pytest.raises(ContractViolation):
        StepSchedule(mode="linear")
    with pytest.raises(ContractViolation):
        StepSchedule(mode="relative", step_size=0.0)
    with pytest.raises(ContractViolation):
        StepSchedule(mode="relative", step_size=1.5)
    with pytest.raises(ContractViolation):
        StepSchedule(mode="absolute", tokens_per_step=0)
    with pytest.raises(ContractViolation):
        cumulative_target(REL, -1, 5)


def test_extend_mask_picks_highest_then_recomputes():
    # five maskable words; the standout word goes first, then the mask
    # grows under a fresh map where an early word now dominates
    state = MaskState.empty("t/0")
    first = _map([0.1, 0.2, 0.15, 0.9, 0.3])
    state = extend_mask(state, first, 1)
    assert state.masked == frozenset({3})
    assert state.iteration == 1 and state.cumulative_target == 1
    second = _map([0.5, 0.2, 0.1, 0.0, 0.4])
    state = extend_mask(state, second, 2)
    assert state.masked == frozenset({0, 3})


def test_extend_mask_same_target_is_noop_on_positions():
    state = MaskState.empty("t/0")
    state = extend_mask(state, _map([3.0, 1.0, 2.0]), 1)
    again = extend_mask(state, _map([9.0, 9.0, 9.0]), 1)
    assert again.masked == state.masked == frozenset({0})
    assert again.iteration == 2


def test_extend_mask_tie_breaks_lower_index():
    state = extend_mask(MaskState.empty("t/0"), _map([1.0, 1.0, 1.0, 1.0]), 2)
    assert state.masked == frozenset({0, 1})


def test_extend_mask_skips_non_maskable():
    scores = [9.0, 8.0, 7.0, 6.0]
    maskable = [False, True, False, True]
    state = extend_mask(MaskState.empty("t/0"), _map(scores, maskable), 1)
    assert state.masked == frozenset({1})


def test_extend_mask_monotone_chain_matches_targets():
    rng = np.random.default_rng(0)
    for trial in range(50):
        t = int(rng.integers(3, 12))
        maskable = rng.random(t) < 0.8
        maskable[int(rng.integers(t))] = True
        m = int(maskable.sum())
        sched = StepSchedule(mode="relative",
                             step_size=float(rng.choice([0.1, 0.25, 0.4])))
        state = MaskState.empty(f"t/{trial}")
        prev = frozenset()
        for j in range(1, sched.full_iterations(m) + 1):
            target = cumulative_target(sched, j, m)
            state = extend_mask(state,
                                _map(rng.random(t), maskable, f"t/{trial}"),
                                target)
            assert prev <= state.masked
            assert len(state.masked) == target
            prev = state.masked
        assert len(state.masked) == m


def test_frozen_scores_chain_equals_direct_topk():
    rng = np.random.default_rng(7)
    scores = rng.random(9)
    maskable = np.array([True] * 9)
    maskable[[0, 4]] = False
    state = MaskState.empty("t/0")
    for j in range(1, 8):
        target = min(j, 7)
        state = extend_mask(state, _map(scores, maskable), target)
        assert state.masked == topk_mask_oracle(scores, maskable, target)


def test_positive_scaling_leaves_selection_unchanged():
    rng = np.random.default_rng(3)
    for trial in range(20):
        scores = rng.standard_normal(8)
        for c in (0.01, 7.0, 1e6):
            a = extend_mask(MaskState.empty("t/0"), _map(scores), 3)
            b = extend_mask(MaskState.empty("t/0"), _map(scores * c), 3)
            assert a.masked == b.masked


def test_extend_mask_saturation_flag():
    state = extend_mask(MaskState.empty("t/0"),
                        _map([1.0, 2.0], [True, True]), 5)
    assert state.saturated
    assert state.masked == frozenset({0, 1})
    assert state.cumulative_target == 5


def test_extend_mask_errors():
    state = extend_mask(MaskState.empty("t/0"), _map([1.0, 2.0, 3.0]), 2)
    with pytest.raises(ContractViolation):
        extend_mask(state, _map([1.0, 2.0, 3.0]), 1)
    stray = MaskState(obs_id="t/0", masked=frozenset({0}))
    with pytest.raises(ContractViolation):
        extend_mask(stray, _map([1.0, 2.0], [False, True]), 2)


def test_apply_mask_replaces_positions_and_keeps_length():
    obs = Observation(obs_id="t/0", ids=(BOS, 5, 6, 7, EOS), label=1)
    state = MaskState(obs_id="t/0", masked=frozenset({1, 3}))
    masked = apply_mask(obs, state)
    assert masked.ids == (BOS, MASK, 6, MASK, EOS)
    assert masked.label == obs.label
    assert len(masked.ids) == len(obs.ids)


def test_apply_mask_empty_returns_same_observation():
    obs = Observation(obs_id="t/0", ids=(BOS, 5, EOS), label=0)
    assert apply_mask(obs, MaskState.empty("t/0")) is obs


def test_apply_mask_full_coverage():
    obs = Observation(obs_id="t/0", ids=(BOS, 5, 6, EOS), label=0)
    state = MaskState(obs_id="t/0",
                      masked=frozenset(obs.maskable_positions()))
    masked = apply_mask(obs, state)
    assert masked.ids == (BOS, MASK, MASK, EOS)


def test_apply_mask_checks_identity():
    obs = Observation(obs_id="t/0", ids=(BOS, 5, EOS), label=0)
    with pytest.raises(ContractViolation):
        apply_mask(obs, MaskState(obs_id="t/1", masked=frozenset({1})))


def test_mask_tabular_zeroes_columns_without_mutating():
    x = np.arange(12, dtype=np.float64).reshape(3, 4) + 1.0
    out = mask_tabular(x, {1, 3})
    assert np.all(out[:, [1, 3]] == 0.0)
    assert np.all(out[:, [0, 2]] == x[:, [0, 2]])
    assert np.all(x > 0.0)
    assert np.array_equal(mask_tabular(x, set()), x)
    with pytest.raises(ContractViolation):
        mask_tabular(x, {4})
    with pytest.raises(ContractViolation):
        mask_tabular(x, {-1})
