"""Performance metrics, the area-between-curves faithfulness score,
sparsity curves, and Student-t confidence intervals.
"""

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import (ConfigError, ContractViolation, UndefinedIntervalError,
                     UndefinedScoreError)

METRIC_KINDS = ("accuracy", "macro-f1", "micro-f1")


def classification_metrics(predictions, golds, kind, classes):
    predictions = np.asarray(predictions, dtype=np.int64)
    golds = np.asarray(golds, dtype=np.int64)
    if predictions.shape != golds.shape or predictions.ndim != 1:
        raise ContractViolation("predictions and golds must align 1-D")
    if predictions.size == 0:
        raise ContractViolation("metrics need at least one example")
    if golds.min() < 0 or golds.max() >= classes:
        raise ContractViolation("gold label outside the class range")
    if kind == "accuracy":
        return float(np.mean(predictions == golds))
    if kind == "micro-f1":
        # single-label multiclass: pooled TP is the correct count and
        # pooled FP equals pooled FN, so micro-F1 reduces to accuracy
        correct = int(np.sum(predictions == golds))
        total = predictions.size
        micro = 2 * correct / (2 * correct + 2 * (total - correct))
        assert abs(micro - correct / total) < 1e-12
        return float(micro)
    if kind == "macro-f1":
        f1s = []
        for c in range(classes):
            tp = int(np.sum((predictions == c) & (golds == c)))
            fp = int(np.sum((predictions == c) & (golds != c)))
            fn = int(np.sum((predictions != c) & (golds == c)))
            denom = 2 * tp + fp + fn
            f1s.append(0.0 if denom == 0 else 2 * tp / denom)
        return float(np.mean(f1s))
    raise ConfigError(f"unknown metric kind {kind!r}")


def area_faithfulness(ratios, performance, baseline):
    """Normalized area between the baseline and the measure curve.

    faithfulness = [sum_i 1/2 dx_i (dp_i + dp_{i+1})]
                 / [sum_i 1/2 dx_i (db_i + db_{i+1})]
    with dp_i = b_i - p_i, db_i = b_i - b_I. 1 means the curve sat at the
    100%-masked floor immediately, 0 means indistinguishable from random,
    negative means above the random baseline.
    """
    r = np.asarray(ratios, dtype=np.float64)
    p = np.asarray(performance, dtype=np.float64)
    b = np.asarray(baseline, dtype=np.float64)
    if r.ndim != 1 or len(r) < 2:
        raise ContractViolation("a curve needs at least two grid points")
    if p.shape != r.shape or b.shape != r.shape:
        raise ContractViolation("curve arrays must share the ratio grid")
    if r[0] != 0.0 or r[-1] != 1.0 or np.any(np.diff(r) <= 0):
        raise ContractViolation("ratios must rise strictly from 0 to 1")
    dx = np.diff(r)
    dp = b - p
    db = b - b[-1]
    numerator = float(np.sum(0.5 * dx * (dp[:-1] + dp[1:])))
    denominator = float(np.sum(0.5 * dx * (db[:-1] + db[1:])))
    if denominator == 0.0:
        raise UndefinedScoreError(
            "flat baseline: the faithfulness denominator is zero")
    return numerator / denominator


def interpolate_curve(ratios, values, refined_ratios):
    return np.interp(np.asarray(refined_ratios, dtype=np.float64),
                     np.asarray(ratios, dtype=np.float64),
                     np.asarray(values, dtype=np.float64))


def step_invariance_check(ratios, performance, baseline, refined_ratios):
    """Refine the grid by linear interpolation and re-score.

    Trapezoid integration is exact on piecewise-linear curves, so the
    score must match to near machine precision. Newly *measured* points
    (rather than interpolated ones) may legitimately change the score;
    this check only reports, it never asserts.
    """
    coarse = area_faithfulness(ratios, performance, baseline)
    refined = area_faithfulness(refined_ratios,
                                interpolate_curve(ratios, performance,
                                                  refined_ratios),
                                interpolate_curve(ratios, baseline,
                                                  refined_ratios))
    return {"coarse": coarse, "refined": refined,
            "difference": abs(coarse - refined),
            "invariant": bool(abs(coarse - refined) <= 1e-12)}


@dataclass(frozen=True)
class FaithfulnessScore:
    measure: str
    mean: float
    ci_low: float
    ci_high: float
    per_seed: dict

    def to_record(self):
        return {"measure": self.measure, "mean": self.mean,
                "ci_low": self.ci_low, "ci_high": self.ci_high,
                "per_seed": {str(k): v for k, v in self.per_seed.items()}}


def confidence_interval(values, level=0.95):
    """Two-sided Student-t interval: mean +- t * s / sqrt(n)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or len(values) < 2:
        raise UndefinedIntervalError(
            "confidence interval needs at least two values")
    n = len(values)
    mean = float(values.mean())
    sd = float(values.std(ddof=1))
    t = float(stats.t.ppf(0.5 + level / 2.0, n - 1))
    half = t * sd / np.sqrt(n)
    return mean, mean - half, mean + half


def sparsity_curves(maps, top_k_max=10, relative_grid=None):
    """Cumulative |score| share held by the top-k positions.

    Shares are computed over maskable positions only, averaged over
    observations. All-zero maps fall back to the uniform share k/T and
    are counted in the `flagged_zero` field.
    """
    maps = list(maps)
    if not maps:
        raise ContractViolation("sparsity needs at least one importance map")
    if relative_grid is None:
        relative_grid = [i / 10.0 for i in range(1, 11)]
    abs_rows = []
    flagged = 0
    for m in maps:
        vals = np.abs(np.asarray(m.scores, dtype=np.float64)[m.maskable])
        if vals.size == 0:
            continue
        total = vals.sum()
        order = np.sort(vals)[::-1]
        if total == 0.0:
            flagged += 1
            share = np.arange(1, len(order) + 1) / len(order)
        else:
            share = np.cumsum(order) / total
        abs_rows.append(share)
    if not abs_rows:
        raise ContractViolation("no maskable positions in any map")
    top_k = []
    for k in range(1, top_k_max + 1):
        vals = [row[min(k, len(row)) - 1] for row in abs_rows]
        top_k.append(float(np.mean(vals)))
    top_fraction = []
    for frac in relative_grid:
        vals = []
        for row in abs_rows:
            k = max(1, int(np.ceil(frac * len(row))))
            vals.append(row[min(k, len(row)) - 1])
        top_fraction.append(float(np.mean(vals)))
    return {"top_k": {str(k + 1): v for k, v in enumerate(top_k)},
            "top_fraction": {f"{frac:.2f}": v
                             for frac, v in zip(relative_grid, top_fraction)},
            "flagged_zero": flagged, "maps": len(abs_rows)}


def aggregate_faithfulness(measure, per_seed_scores):
    seeds = sorted(per_seed_scores)
    values = [per_seed_scores[s] for s in seeds]
    if len(values) >= 2:
        mean, low, high = confidence_interval(values)
    else:
        mean, low, high = float(values[0]), float("nan"), float("nan")
    return FaithfulnessScore(measure=measure, mean=mean, ci_low=low,
                             ci_high=high,
                             per_seed={s: float(per_seed_scores[s])
                                       for s in seeds})
