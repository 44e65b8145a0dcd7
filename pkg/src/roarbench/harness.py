"""ROAR / Recursive ROAR orchestration: per-iteration retraining, mask
extension, run caching, seed replication, and the tabular validation
experiment.

Run records are content-addressed: the 0% and 100% iterations share one
record per seed across measures and modes, every other iteration is keyed
by everything that can change its outcome.
"""

import json
import os
import shutil
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import data as data_mod
from . import models as models_mod
from ._util import canonical_json, derive_rng, stable_digest, stable_hash
from .errors import (ConfigError, ContractViolation, RunFailureThreshold,
                     TrainingFailure)
from .importance import (MEASURE_NAMES, ImportanceMap, MeasureContext,
                         compute_importance, maskable_flags)
from .masking import (MaskState, StepSchedule, apply_mask, cumulative_target,
                      extend_mask)
from .metrics import aggregate_faithfulness, area_faithfulness, confidence_interval
from .models import ModelConfig

MODES = ("classic", "recursive")
RANKINGS = ("signed", "absolute")
DEFAULT_SEEDS = (1, 2, 3, 4, 5)
SHARED = "__shared__"
CACHE_ENV = "ROARBENCH_CACHE"


@dataclass(frozen=True)
class ExperimentPlan:
    dataset_spec: dict
    model: ModelConfig
    measures: tuple
    schedule: StepSchedule = field(default_factory=StepSchedule)
    seeds: tuple = DEFAULT_SEEDS
    mode: str = "recursive"
    metric: str = "accuracy"
    ranking: str = "signed"
    ig_steps: int = 50

    def __post_init__(self):
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be non-empty and distinct")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.ranking not in RANKINGS:
            raise ConfigError(f"unknown ranking {self.ranking!r}")
        if not self.measures:
            raise ConfigError("at least one importance measure is required")
        for m in self.measures:
            if m not in MEASURE_NAMES:
                raise ConfigError(f"unknown importance measure {m!r}")

    def all_measures(self):
        """The requested measures plus the always-run random baseline."""
        out = list(self.measures)
        if "random" not in out:
            out.append("random")
        return tuple(out)


def dataset_from_spec(spec):
    if "path" in spec and spec["path"]:
        return data_mod.load_jsonl(spec["path"])
    kind = spec.get("kind")
    if kind not in data_mod.GENERATORS:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    params = dict(spec.get("params") or {})
    if "seed" in spec:
        params["seed"] = spec["seed"]
    return data_mod.GENERATORS[kind](**params)


def plan_payload(plan, dataset):
    return {
        "dataset": plan.dataset_spec,
        "dataset_digest": dataset.digest(),
        "model": plan.model.to_dict(),
        "measures": list(plan.all_measures()),
        "schedule": {"mode": plan.schedule.mode,
                     "step_size": plan.schedule.step_size,
                     "tokens_per_step": plan.schedule.tokens_per_step,
                     "max_iterations": plan.schedule.max_iterations},
        "seeds": list(plan.seeds),
        "mode": plan.mode,
        "metric": plan.metric,
        "ranking": plan.ranking,
        "ig_steps": plan.ig_steps,
    }


class RunStore:
    """Content-addressed cache plus a per-plan materialized run layout.

    Every record lives in its own directory, so concurrent chains can
    append without coordination; writes go through temp files and an
    atomic rename.
    """

    RECORD = "record.json"
    FILES = ("checkpoint.json", "importance.jsonl", "masks.jsonl")

    def __init__(self, root, cache_root=None):
        self.root = str(root)
        env = os.environ.get(CACHE_ENV)
        self.cache_root = str(cache_root or env or
                              os.path.join(self.root, "cache"))
        os.makedirs(self.root, exist_ok=True)
        os.makedirs(self.cache_root, exist_ok=True)

    def _entry_dir(self, key):
        return os.path.join(self.cache_root, stable_digest(key))

    def lookup(self, key):
        """Return the cached record dict, or None. Corrupt entries are
        quarantined and treated as misses."""
        entry = self._entry_dir(key)
        path = os.path.join(entry, self.RECORD)
        if not os.path.exists(path):
            return None
        try:
            with open(path) as fh:
                record = json.load(fh)
            if record.get("key") != key or "status" not in record:
                raise ValueError("key mismatch or missing fields")
        except (ValueError, OSError):
            self._quarantine(entry)
            return None
        return record

    def _quarantine(self, entry):
        for n in range(1000):
            target = f"{entry}.quarantined-{n}"
            if not os.path.exists(target):
                try:
                    os.rename(entry, target)
                except OSError:
                    pass
                return

    def invalidate(self, key):
        """Quarantine an entry whose side files went missing."""
        entry = self._entry_dir(key)
        if os.path.exists(entry):
            self._quarantine(entry)

    def entry_file(self, key, name):
        path = os.path.join(self._entry_dir(key), name)
        return path if os.path.exists(path) else None

    def save(self, key, record, files=None):
        entry = self._entry_dir(key)
        os.makedirs(entry, exist_ok=True)
        for name, content in (files or {}).items():
            _atomic_write(os.path.join(entry, name), content)
        record = dict(record)
        record["key"] = key
        _atomic_write(os.path.join(entry, self.RECORD),
                      canonical_json(record))
        return record

    def materialize(self, plan_hash, measure, seed, iteration, key,
                    extra_files=None):
        """Copy a cache entry into the readable runs/ tree."""
        dest = os.path.join(self.root, "runs", plan_hash, measure, str(seed),
                            str(iteration))
        os.makedirs(dest, exist_ok=True)
        entry = self._entry_dir(key)
        for name in (self.RECORD,) + self.FILES:
            src = os.path.join(entry, name)
            if os.path.exists(src):
                shutil.copyfile(src, os.path.join(dest, name))
        for name, content in (extra_files or {}).items():
            _atomic_write(os.path.join(dest, name), content)
        return dest


def _atomic_write(path, content):
    directory = os.path.dirname(path)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(content)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _shared_key(kind, digest, model_dict, metric, seed):
    return {"kind": kind, "dataset": digest, "model": model_dict,
            "metric": metric, "seed": seed}


def _iteration_key(payload, measure, seed, iteration):
    return {
        "kind": "iteration",
        "dataset": payload["dataset_digest"],
        "model": payload["model"],
        "metric": payload["metric"],
        "seed": seed,
        "measure": measure,
        "mode": payload["mode"],
        "schedule": payload["schedule"],
        "ranking": payload["ranking"],
        "ig_steps": payload["ig_steps"]
        if measure == "integrated-gradient" else None,
        "iteration": iteration,
    }


def _masks_jsonl(states, iteration):
    lines = []
    for obs_id in sorted(states):
        st = states[obs_id]
        lines.append(canonical_json({"obs_id": obs_id,
                                     "iteration": iteration,
                                     "masked_positions": sorted(st.masked)}))
    return "\n".join(lines) + "\n"


def _importance_jsonl(maps):
    lines = [canonical_json(maps[obs_id].to_record())
             for obs_id in sorted(maps)]
    return "\n".join(lines) + "\n"


def _train_with_retry(config, splits, init_seed):
    """One automatic retry with a perturbed seed, then give up."""
    try:
        return models_mod.train(config, splits, seed=init_seed), init_seed, None
    except TrainingFailure as exc:
        retry_seed = stable_hash("retry", init_seed)
        try:
            return (models_mod.train(config, splits, seed=retry_seed),
                    retry_seed, None)
        except TrainingFailure as exc2:
            return None, retry_seed, f"{exc}; retry: {exc2}"


def _restore_model(config, store, key):
    from .grad_core import load_checkpoint
    path = store.entry_file(key, "checkpoint.json")
    if path is None:
        return None
    model = models_mod.build_model(config, 0)
    models_mod.restore_params(model, load_checkpoint(path))
    return model


def _fully_masked_splits(splits):
    out = {}
    for name, obs_list in splits.items():
        masked = []
        for obs in obs_list:
            state = MaskState(obs_id=obs.obs_id,
                              masked=frozenset(obs.maskable_positions()))
            masked.append(apply_mask(obs, state))
        out[name] = masked
    return out


def _ensure_shared_record(kind, payload, store, config, splits, seed, metric):
    """Train-or-fetch one of the measure-shared records (0% or 100%)."""
    key = _shared_key(kind, payload["dataset_digest"], payload["model"],
                      metric, seed)
    record = store.lookup(key)
    if record is not None:
        if (record["status"] == "ok"
                and store.entry_file(key, "checkpoint.json") is None):
            store.invalidate(key)
        else:
            return key, record
    init_seed = stable_hash("init", seed, SHARED,
                            0 if kind == "shared-zero" else "full")
    started = time.time()
    model, used_seed, failure = _train_with_retry(config, splits, init_seed)
    files = {}
    if model is None:
        record = {"status": "failed", "performance": None,
                  "failure": failure, "init_seed": used_seed,
                  "wall_time": time.time() - started}
    else:
        from .grad_core import checkpoint_document
        perf = models_mod.evaluate(model, splits["test"], metric,
                                   config.batch_size)
        files["checkpoint.json"] = canonical_json(
            checkpoint_document(models_mod.checkpoint_params(model)))
        record = {"status": "ok", "performance": perf,
                  "failure": None, "init_seed": used_seed,
                  "wall_time": time.time() - started}
    record = store.save(key, record, files)
    return key, record


def _compute_maps(measures_needed, model, masked_splits, ctx_builder):
    """maps[measure][obs_id] for every observation in every split."""
    out = {m: {} for m in measures_needed}
    for split_obs in masked_splits.values():
        for obs in split_obs:
            for m in measures_needed:
                out[m][obs.obs_id] = compute_importance(
                    m, model, obs, ctx_builder(m))
    return out


def _ranked_map(imap, ranking):
    if ranking == "signed":
        return imap
    return ImportanceMap(obs_id=imap.obs_id, measure=imap.measure,
                         iteration=imap.iteration,
                         gold_label=imap.gold_label,
                         scores=np.abs(imap.scores), maskable=imap.maskable)


def run_chain(payload, measure, seed, store):
    """All iterations for one (measure, seed) under the payload's mode.

    Returns per-iteration row dicts for curve assembly.
    """
    dataset = dataset_from_spec(payload["dataset"])
    if dataset.digest() != payload["dataset_digest"]:
        raise ConfigError("dataset spec no longer reproduces the plan digest")
    config = ModelConfig(**payload["model"])
    schedule = StepSchedule(**payload["schedule"])
    mode, metric = payload["mode"], payload["metric"]
    ranking, ig_steps = payload["ranking"], payload["ig_steps"]
    plan_hash = stable_digest(payload)

    splits = {name: list(obs) for name, obs in dataset.splits.items()
              if obs}
    m_counts = {obs.obs_id: len(obs.maskable_positions())
                for obs_list in splits.values() for obs in obs_list}
    m_ref = max(m_counts.values())
    j_full = schedule.full_iterations(m_ref)
    j_last = schedule.iterations(m_ref)

    rows = []

    def emit(iteration, record, shared):
        rows.append({"measure": measure, "seed": seed,
                     "iteration": iteration,
                     "ratio": schedule.ratio(iteration, m_ref),
                     "performance": record["performance"],
                     "status": record["status"], "shared": shared})

    # iteration 0: unmasked, shared across measures and modes
    key0, record0 = _ensure_shared_record("shared-zero", payload, store,
                                          config, splits, seed, metric)
    empty_states = {obs.obs_id: MaskState.empty(obs.obs_id, measure, seed)
                    for obs_list in splits.values() for obs in obs_list}
    store.materialize(plan_hash, measure, seed, 0, key0,
                      {"masks.jsonl": _masks_jsonl(empty_states, 0)})
    emit(0, record0, True)

    model_prev = None
    if record0["status"] == "ok":
        model_prev = _restore_model(config, store, key0)
    model_zero = model_prev

    states = empty_states
    masked_splits = splits
    frozen_maps = None

    def ctx_builder(iteration):
        return lambda m: MeasureContext(seed=seed, iteration=iteration,
                                        ig_steps=ig_steps)

    for j in range(1, j_last + 1):
        key_j = _iteration_key(payload, measure, seed, j)
        saturating = all(
            cumulative_target(schedule, j, m_counts[oid]) == m_counts[oid]
            for oid in m_counts)
        cached = store.lookup(key_j)
        if cached is not None:
            mask_path = store.entry_file(key_j, "masks.jsonl")
            needs_model = (cached["status"] == "ok" and not saturating
                           and mode == "recursive")
            missing_ckpt = (needs_model and
                            store.entry_file(key_j, "checkpoint.json") is None)
            if (cached["status"] == "ok" and mask_path is None) or missing_ckpt:
                store.invalidate(key_j)
                cached = None
        if cached is not None:
            # rebuild chain state from the cached mask dump
            if mask_path is not None:
                states = _states_from_jsonl(mask_path, measure, seed, j)
                masked_splits = {
                    name: [apply_mask(obs, states[obs.obs_id])
                           for obs in obs_list]
                    for name, obs_list in splits.items()}
            if needs_model:
                model_prev = _restore_model(config, store, key_j)
            elif cached["status"] != "ok":
                model_prev = None
            store.materialize(plan_hash, measure, seed, j, key_j)
            # provenance, not code path: saturating records stay shared
            emit(j, cached, "shared_record" in cached)
            continue

        if model_prev is None and record0["status"] != "ok":
            record = {"status": "failed", "performance": None,
                      "failure": "iteration-0 model unavailable",
                      "init_seed": None, "wall_time": 0.0}
            record = store.save(key_j, record)
            store.materialize(plan_hash, measure, seed, j, key_j)
            emit(j, record, False)
            continue

        started = time.time()
        if mode == "classic":
            if frozen_maps is None:
                if model_zero is None:
                    model_zero = _restore_model(config, store, key0)
                frozen_maps = _compute_maps([measure], model_zero, splits,
                                            ctx_builder(1))[measure]
            maps = frozen_maps
        else:
            if model_prev is None:
                record = {"status": "failed", "performance": None,
                          "failure": "previous iteration model unavailable",
                          "init_seed": None,
                          "wall_time": time.time() - started}
                record = store.save(key_j, record)
                store.materialize(plan_hash, measure, seed, j, key_j)
                emit(j, record, False)
                continue
            maps = _compute_maps([measure], model_prev, masked_splits,
                                 ctx_builder(j))[measure]

        new_states = {}
        for name, obs_list in splits.items():
            for obs in obs_list:
                target = cumulative_target(schedule, j,
                                           m_counts[obs.obs_id])
                new_states[obs.obs_id] = extend_mask(
                    states[obs.obs_id],
                    _ranked_map(maps[obs.obs_id], ranking), target)
        states = new_states
        masked_splits = {
            name: [apply_mask(obs, states[obs.obs_id]) for obs in obs_list]
            for name, obs_list in splits.items()}

        dumps = {"importance.jsonl": _importance_jsonl(maps),
                 "masks.jsonl": _masks_jsonl(states, j)}

        if saturating:
            fully = _fully_masked_splits(splits)
            key_full, rec_full = _ensure_shared_record(
                "shared-full", payload, store, config, fully, seed, metric)
            record = {"status": rec_full["status"],
                      "performance": rec_full["performance"],
                      "failure": rec_full.get("failure"),
                      "init_seed": rec_full.get("init_seed"),
                      "wall_time": rec_full.get("wall_time"),
                      "shared_record": stable_digest(key_full)}
            record = store.save(key_j, record, dumps)
            store.materialize(plan_hash, measure, seed, j, key_j)
            emit(j, record, True)
            model_prev = None
            continue

        init_seed = stable_hash("init", seed, measure, j)
        model_j, used_seed, failure = _train_with_retry(
            config, {**masked_splits}, init_seed)
        if model_j is None:
            record = {"status": "failed", "performance": None,
                      "failure": failure, "init_seed": used_seed,
                      "wall_time": time.time() - started}
            record = store.save(key_j, record, dumps)
            store.materialize(plan_hash, measure, seed, j, key_j)
            emit(j, record, False)
            model_prev = None
            continue

        from .grad_core import checkpoint_document
        perf = models_mod.evaluate(model_j, masked_splits["test"], metric,
                                   config.batch_size)
        dumps["checkpoint.json"] = canonical_json(
            checkpoint_document(models_mod.checkpoint_params(model_j)))
        record = {"status": "ok", "performance": perf, "failure": None,
                  "init_seed": used_seed, "wall_time": time.time() - started}
        record = store.save(key_j, record, dumps)
        store.materialize(plan_hash, measure, seed, j, key_j)
        emit(j, record, False)
        model_prev = model_j

    return rows


def _states_from_jsonl(path, measure, seed, iteration):
    states = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            states[rec["obs_id"]] = MaskState(
                obs_id=rec["obs_id"],
                masked=frozenset(rec["masked_positions"]),
                iteration=iteration,
                cumulative_target=len(rec["masked_positions"]),
                measure=measure, seed=seed)
    return states


def _chain_worker(args):
    payload, measure, seed, root, cache_root = args
    store = RunStore(root, cache_root)
    return run_chain(payload, measure, seed, store)


@dataclass
class PlanResult:
    plan_hash: str
    payload: dict
    ratios: list
    curves: dict          # measure -> {"performance": {seed: [...]}, ...}
    faithfulness: dict    # measure -> FaithfulnessScore or None
    rows: list
    failed: int
    total: int


def run_plan(plan, store_root, jobs=1, cache_root=None):
    dataset = dataset_from_spec(plan.dataset_spec)
    payload = plan_payload(plan, dataset)
    plan_hash = stable_digest(payload)
    store = RunStore(store_root, cache_root)
    measures = plan.all_measures()

    tasks = [(payload, measure, seed, store.root, store.cache_root)
             for measure in measures for seed in plan.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_chain_worker, tasks))
    else:
        chunks = [run_chain(payload, measure, seed, store)
                  for payload, measure, seed, _, _ in tasks]

    rows = [row for chunk in chunks for row in chunk]
    failed = sum(1 for r in rows if r["status"] != "ok")
    total = len(rows)
    if total and failed / total > 0.20:
        raise RunFailureThreshold(
            f"{failed}/{total} runs failed (> 20% threshold)")

    by_measure = {m: {} for m in measures}
    for row in rows:
        seq = by_measure[row["measure"]].setdefault(row["seed"], {})
        seq[row["iteration"]] = row
    iterations = sorted({r["iteration"] for r in rows})
    ratios = [None] * len(iterations)
    for row in rows:
        ratios[row["iteration"]] = row["ratio"]

    curves = {}
    for m in measures:
        perf = {}
        for seed in plan.seeds:
            seq = by_measure[m].get(seed, {})
            perf[seed] = [
                seq[j]["performance"] if j in seq
                and seq[j]["status"] == "ok" else None
                for j in iterations]
        curves[m] = {"performance": perf}

    complete = (ratios and ratios[-1] == 1.0)
    faithfulness = {}
    for m in measures:
        per_seed = {}
        for seed in plan.seeds:
            p = curves[m]["performance"][seed]
            b = curves["random"]["performance"][seed]
            if not complete or any(v is None for v in p + b):
                continue
            per_seed[seed] = area_faithfulness(ratios, p, b)
        faithfulness[m] = (aggregate_faithfulness(m, per_seed)
                           if per_seed else None)

    for m in measures:
        mean, ci_low, ci_high = [], [], []
        for idx, _ in enumerate(iterations):
            vals = [curves[m]["performance"][s][idx] for s in plan.seeds]
            vals = [v for v in vals if v is not None]
            if not vals:
                mu, lo, hi = None, None, None
            elif len(vals) == 1:
                mu, lo, hi = vals[0], None, None
            else:
                mu, lo, hi = confidence_interval(vals)
            mean.append(mu)
            ci_low.append(lo)
            ci_high.append(hi)
        curves[m]["mean"] = mean
        curves[m]["ci_low"] = ci_low
        curves[m]["ci_high"] = ci_high

    return PlanResult(plan_hash=plan_hash, payload=payload, ratios=ratios,
                      curves=curves, faithfulness=faithfulness, rows=rows,
                      failed=failed, total=total)


def curve_document(result, measure):
    """The determinism-sensitive curve artifact: no wall times inside."""
    payload = result.payload
    return {
        "dataset": payload["dataset"],
        "dataset_digest": payload["dataset_digest"],
        "model": payload["model"],
        "measure": measure,
        "mode": payload["mode"],
        "metric": payload["metric"],
        "ranking": payload["ranking"],
        "schedule": payload["schedule"],
        "seeds": payload["seeds"],
        "ratios": result.ratios,
        "performance": {str(s): result.curves[measure]["performance"][s]
                        for s in payload["seeds"]},
        "baseline": {str(s): result.curves["random"]["performance"][s]
                     for s in payload["seeds"]},
        "mean": result.curves[measure]["mean"],
        "ci_low": result.curves[measure]["ci_low"],
        "ci_high": result.curves[measure]["ci_high"],
    }


# ---------------------------------------------------------------------------
# Tabular validation experiment (the Fig.-3-style self check)

VALIDATION_DEFAULTS = {"n_train": 1000, "n_test": 4000, "l2": 1e-4}


def fit_logistic(x, y, l2=1e-4):
    """L2-regularized logistic regression via L-BFGS; bias unpenalized."""
    n, p = x.shape
    xb = np.hstack([x, np.ones((n, 1))])

    def objective(w):
        z = xb @ w
        loss = np.mean(np.logaddexp(0.0, z) - y * z)
        loss += 0.5 * l2 * np.sum(w[:-1] ** 2)
        s = 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
        grad = xb.T @ (s - y) / n
        grad[:-1] += l2 * w[:-1]
        return loss, grad

    res = minimize(objective, np.zeros(p + 1), jac=True, method="L-BFGS-B")
    return res.x[:-1], res.x[-1]


def _tabular_accuracy(w, b, x, y):
    return float(np.mean(((x @ w + b) > 0).astype(np.int64) == y))


def _removal_curve(order_fn, train, test, l2, recursive):
    """Retrain after each single-feature removal; 17 accuracy points.

    order_fn(weights, removed) picks the next feature; classic mode feeds
    it the frozen initial weights, recursive mode the current ones.
    """
    x_train, y_train = train
    x_test, y_test = test
    removed = []
    w, b = fit_logistic(x_train, y_train, l2)
    w_frozen = w.copy()
    accs = [_tabular_accuracy(w, b, x_test, y_test)]
    for _ in range(data_mod.N_FEATURES):
        current = w if recursive else w_frozen
        removed.append(order_fn(current, removed))
        xm_train = np.array(x_train)
        xm_train[:, removed] = 0.0
        xm_test = np.array(x_test)
        xm_test[:, removed] = 0.0
        w, b = fit_logistic(xm_train, y_train, l2)
        accs.append(_tabular_accuracy(w, b, xm_test, y_test))
    return accs


def _weight_order(weights, removed):
    """Highest |weight| among the remaining features; ties take the
    lower index (the |linear weight| importance measure)."""
    scores = np.abs(weights).copy()
    scores[removed] = -np.inf
    return int(np.argmax(scores))


def _fixed_order(order):
    def pick(weights, removed):
        for idx in order:
            if idx not in removed:
                return idx
        raise ContractViolation("fixed order exhausted")
    return pick


def run_synthetic_validation(seeds=DEFAULT_SEEDS, n_train=None, n_test=None,
                             l2=None):
    """Four removal curves on the 16-feature tabular task per seed.

    Ground truth removes the informative features first (strongest |a|
    first), the worst case removes them last; classic and recursive ROAR
    use |weight| importance. The verdict checks the recursive curve stays
    within 2 accuracy points of ground truth (mean over seeds).
    """
    n_train = n_train or VALIDATION_DEFAULTS["n_train"]
    n_test = n_test or VALIDATION_DEFAULTS["n_test"]
    l2 = l2 if l2 is not None else VALIDATION_DEFAULTS["l2"]
    seeds = tuple(seeds)
    if not seeds or len(set(seeds)) != len(seeds):
        raise ConfigError("seeds must be non-empty and distinct")

    curve_names = ("ground-truth", "worst-case", "classic", "recursive")
    per_seed = {name: {} for name in curve_names}
    for seed in seeds:
        ds = data_mod.gen_tabular(n_train, 0, n_test, seed)
        train, test = ds.splits["train"], ds.splits["test"]
        informative = sorted(range(data_mod.N_INFORMATIVE),
                             key=lambda i: (-abs(ds.a[i]), i))
        irrelevant = list(range(data_mod.N_INFORMATIVE,
                                data_mod.N_FEATURES))
        gt_order = informative + irrelevant
        worst_order = irrelevant + informative[::-1]
        per_seed["ground-truth"][seed] = _removal_curve(
            _fixed_order(gt_order), train, test, l2, recursive=False)
        per_seed["worst-case"][seed] = _removal_curve(
            _fixed_order(worst_order), train, test, l2, recursive=False)
        per_seed["classic"][seed] = _removal_curve(
            _weight_order, train, test, l2, recursive=False)
        per_seed["recursive"][seed] = _removal_curve(
            _weight_order, train, test, l2, recursive=True)

    curves = {}
    for name in curve_names:
        rows = np.array([per_seed[name][s] for s in seeds])
        curves[name] = {"per_seed": {str(s): per_seed[name][s]
                                     for s in seeds},
                        "mean": rows.mean(axis=0).tolist()}

    gt = np.array(curves["ground-truth"]["mean"])
    rec = np.array(curves["recursive"]["mean"])
    worst = np.array(curves["worst-case"]["mean"])
    recursive_gap = float(np.max(np.abs(rec - gt)))
    classic_hits = {}
    for s in seeds:
        cls = np.array(per_seed["classic"][s])
        gts = np.array(per_seed["ground-truth"][s])
        classic_hits[str(s)] = bool(np.max(cls[1:-1] - gts[1:-1]) >= 0.05)
    verdict = {
        "tolerance": 0.02,
        "recursive_gap": recursive_gap,
        "pass": bool(recursive_gap <= 0.02),
        "ground_truth_at_4": float(gt[data_mod.N_INFORMATIVE]),
        "worst_case_max_drop": float(np.max(worst[0] - worst[1:13])),
        "classic_exceeds_gt_5pts": classic_hits,
    }
    return {
        "steps": list(range(data_mod.N_FEATURES + 1)),
        "seeds": list(seeds),
        "params": {"n_train": n_train, "n_test": n_test, "l2": l2},
        "curves": curves,
        "verdict": verdict,
    }
