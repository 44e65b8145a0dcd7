"""Per-token importance measures.

Each measure scores the observation as the model currently sees it (so
already-masked positions are scored on the [MASK] token) and explains the
gold label's logit. Structural special tokens and the whole auxiliary
sequence are flagged non-maskable rather than zeroed.
"""

from dataclasses import dataclass

import numpy as np

from . import grad_core as gc
from ._util import derive_rng
from .data import MASK, STRUCTURAL_IDS
from .errors import ConfigError, ContractViolation, MeasureUnsupported

MEASURE_NAMES = ("attention", "gradient", "input-x-gradient",
                 "integrated-gradient", "random", "oracle", "oracle-top1")


@dataclass(frozen=True)
class ImportanceMap:
    obs_id: str
    measure: str
    iteration: int
    gold_label: int
    scores: np.ndarray
    maskable: np.ndarray

    def __post_init__(self):
        if len(self.scores) != len(self.maskable):
            raise ContractViolation("scores and maskable length mismatch")

    def to_record(self):
        return {"obs_id": self.obs_id, "measure": self.measure,
                "iteration": self.iteration,
                "scores": [float(s) for s in self.scores],
                "maskable": [bool(m) for m in self.maskable]}


def maskable_flags(observation):
    return np.array([t not in STRUCTURAL_IDS for t in observation.ids],
                    dtype=bool)


def _gold_gradient_onehot(model, observation, path_scales=None):
    """d logits[gold] / d one-hot-input, optionally along IG path points.

    Returns an array shaped (T, V) (no path) or (k, T, V) where row i uses
    the scaled input path_scales[i] * one_hot(x).
    """
    ids = np.asarray(observation.ids, dtype=np.int64)
    base = gc.one_hot(ids, model.config.vocab_size)       # (T,V)
    if path_scales is None:
        x_data = base[None, :, :]
    else:
        x_data = path_scales[:, None, None] * base[None, :, :]
    x = gc.tensor(x_data)
    aux = None
    if observation.aux_ids is not None:
        aux = np.asarray(observation.aux_ids, dtype=np.int64)
    with gc.Tape() as tape:
        logits = model.forward_onehot(x, ids, aux)        # (B,C)
        gold_col = gc.select_index(logits, observation.label, axis=1)
        total = gc.reduce_sum(gold_col)
        grads = tape.backward(total, [x])
    g = grads[0]
    return g[0] if path_scales is None else g


def attention_importance(model, observation):
    if not getattr(model, "has_attention", False):
        raise MeasureUnsupported(
            "attention importance requires an attention model")
    from .models import attention_weights
    return attention_weights(model, observation)


def gradient_importance(model, observation):
    g = _gold_gradient_onehot(model, observation)         # (T,V)
    return np.linalg.norm(g, axis=-1)


def input_times_gradient(model, observation):
    g = _gold_gradient_onehot(model, observation)
    ids = np.asarray(observation.ids, dtype=np.int64)
    return g[np.arange(len(ids)), ids]


def integrated_gradient(model, observation, k=50, chunk=64):
    """Right Riemann sum over the straight path from the zero baseline.

    IG_t = x_t * (1/k) sum_{i=1..k} grad f(i/k * x)_gold at the observed
    token coordinate; the baseline b = 0 makes the (x - b) factor a plain
    coordinate pick.
    """
    if k < 1:
        raise ContractViolation("integrated gradients need k >= 1")
    ids = np.asarray(observation.ids, dtype=np.int64)
    acc = None
    for start in range(1, k + 1, chunk):
        stop = min(start + chunk, k + 1)
        scales = np.arange(start, stop, dtype=np.float64) / k
        g = _gold_gradient_onehot(model, observation, scales)  # (c,T,V)
        part = g.sum(axis=0)
        acc = part if acc is None else acc + part
    avg = acc / k
    return avg[np.arange(len(ids)), ids]


def random_importance(observation, seed, iteration):
    rng = derive_rng("random-importance", seed, iteration, observation.obs_id)
    return rng.uniform(0.0, 1.0, size=len(observation.ids))


def _evidence_or_fail(observation):
    if observation.evidence is None:
        raise ConfigError(
            f"observation {observation.obs_id} carries no evidence "
            "annotations; the oracle measures need generator ground truth")
    return observation.evidence


def oracle_importance(observation):
    """1 at every not-yet-masked planted evidence position, else 0."""
    evidence = _evidence_or_fail(observation)
    scores = np.zeros(len(observation.ids))
    for pos in evidence:
        if observation.ids[pos] != MASK:
            scores[pos] = 1.0
    return scores


def oracle_top1_importance(observation):
    """1 at only the first unmasked evidence position.

    Models a measure that highlights a single copy of redundant evidence,
    the failure case classic ROAR cannot see past.
    """
    evidence = _evidence_or_fail(observation)
    scores = np.zeros(len(observation.ids))
    for pos in sorted(evidence):
        if observation.ids[pos] != MASK:
            scores[pos] = 1.0
            break
    return scores


@dataclass(frozen=True)
class MeasureContext:
    seed: int = 0
    iteration: int = 0
    ig_steps: int = 50


_REGISTRY = {}


def register_measure(name, fn):
    """fn(model, observation, ctx) -> score vector aligned to positions."""
    _REGISTRY[name] = fn


register_measure("attention",
                 lambda model, obs, ctx: attention_importance(model, obs))
register_measure("gradient",
                 lambda model, obs, ctx: gradient_importance(model, obs))
register_measure("input-x-gradient",
                 lambda model, obs, ctx: input_times_gradient(model, obs))
register_measure("integrated-gradient",
                 lambda model, obs, ctx: integrated_gradient(
                     model, obs, k=ctx.ig_steps))
register_measure("random",
                 lambda model, obs, ctx: random_importance(
                     obs, ctx.seed, ctx.iteration))
register_measure("oracle", lambda model, obs, ctx: oracle_importance(obs))
register_measure("oracle-top1",
                 lambda model, obs, ctx: oracle_top1_importance(obs))


def compute_importance(measure, model, observation, ctx=None):
    if measure not in _REGISTRY:
        raise ConfigError(f"unknown importance measure {measure!r}")
    ctx = ctx or MeasureContext()
    scores = np.asarray(_REGISTRY[measure](model, observation, ctx),
                        dtype=np.float64)
    if scores.shape != (len(observation.ids),):
        raise ContractViolation(
            f"measure {measure!r} returned a misaligned score vector")
    return ImportanceMap(obs_id=observation.obs_id, measure=measure,
                         iteration=ctx.iteration,
                         gold_label=observation.label, scores=scores,
                         maskable=maskable_flags(observation))
