"""Mask selection and application: monotone per-observation mask state,
relative and absolute step schedules, and the tabular feature variant.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .data import MASK
from .errors import ContractViolation


@dataclass(frozen=True)
class StepSchedule:
    mode: str = "relative"          # "relative" | "absolute"
    step_size: float = 0.10         # relative mode: fraction per iteration
    tokens_per_step: int = 1        # absolute mode
    max_iterations: int = None      # truncate the run; None = to saturation

    def __post_init__(self):
        if self.mode not in ("relative", "absolute"):
            raise ContractViolation(f"unknown schedule mode {self.mode!r}")
        if self.mode == "relative" and not 0.0 < self.step_size <= 1.0:
            raise ContractViolation("relative step size must sit in (0, 1]")
        if self.mode == "absolute" and self.tokens_per_step < 1:
            raise ContractViolation("absolute step must mask >= 1 token")

    def full_iterations(self, maskable_count):
        """Iterations until every maskable token is masked."""
        if self.mode == "relative":
            return math.ceil(1.0 / self.step_size - 1e-12)
        return math.ceil(maskable_count / self.tokens_per_step)

    def iterations(self, maskable_count):
        full = self.full_iterations(maskable_count)
        if self.max_iterations is None:
            return full
        return min(full, self.max_iterations)

    def ratio(self, iteration, maskable_count):
        if self.mode == "relative":
            return min(1.0, iteration * self.step_size)
        if maskable_count == 0:
            return 1.0
        return min(1.0, iteration * self.tokens_per_step / maskable_count)


def cumulative_target(schedule, iteration, maskable_count):
    """Total tokens masked after `iteration` steps of the schedule.

    Relative mode rounds half away from zero so the final step always
    saturates; both modes clamp to [0, maskable_count].
    """
    if iteration < 0:
        raise ContractViolation("iteration must be >= 0")
    if schedule.mode == "relative":
        raw = iteration * schedule.step_size * maskable_count
        target = math.floor(raw + 0.5)  # raw >= 0: half rounds up
        if iteration >= schedule.full_iterations(maskable_count):
            target = maskable_count
    else:
        target = iteration * schedule.tokens_per_step
    return max(0, min(maskable_count, target))


@dataclass(frozen=True)
class MaskState:
    obs_id: str
    masked: frozenset
    iteration: int = 0
    cumulative_target: int = 0
    measure: str = ""
    seed: int = 0
    saturated: bool = False

    @classmethod
    def empty(cls, obs_id, measure="", seed=0):
        return cls(obs_id=obs_id, masked=frozenset(), measure=measure,
                   seed=seed)


def extend_mask(state, importance_map, target):
    """Grow the mask to `target` positions using the map's scores.

    New positions are the highest-scoring unmasked maskable ones; ties
    break toward the lower position index. A target beyond the maskable
    count clamps and flags saturation.
    """
    if target < len(state.masked):
        raise ContractViolation("mask target below the current mask size")
    maskable = [i for i, ok in enumerate(importance_map.maskable) if ok]
    if not set(state.masked) <= set(maskable):
        raise ContractViolation("mask state holds a non-maskable position")
    saturated = target > len(maskable)
    capped = min(target, len(maskable))
    candidates = [i for i in maskable if i not in state.masked]
    candidates.sort(key=lambda i: (-importance_map.scores[i], i))
    new = candidates[: capped - len(state.masked)]
    return replace(state,
                   masked=state.masked | frozenset(new),
                   iteration=state.iteration + 1,
                   cumulative_target=target,
                   saturated=state.saturated or saturated)


def apply_mask(observation, state):
    """Replace masked positions with [MASK]; length is preserved."""
    if state.obs_id != observation.obs_id:
        raise ContractViolation("mask state belongs to another observation")
    if not state.masked:
        return observation
    ids = list(observation.ids)
    for pos in state.masked:
        ids[pos] = MASK
    return replace(observation, ids=tuple(ids))


def mask_tabular(x, masked_features):
    """Zero out masked feature columns; 0 is every feature's mean."""
    out = np.array(x, dtype=np.float64, copy=True)
    if masked_features:
        idx = sorted(masked_features)
        if idx[0] < 0 or idx[-1] >= out.shape[-1]:
            raise ContractViolation("masked feature index out of range")
        out[..., idx] = 0.0
    return out
