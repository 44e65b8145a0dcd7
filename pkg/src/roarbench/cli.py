"""Command-line front end: dataset generation, benchmark execution,
reporting, and the tabular self-check.

Exit codes: 0 success, 2 config error, 3 run-failure threshold,
4 empty input, 5 validation verdict fail.
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import fields as dataclass_fields

from . import data as data_mod
from . import harness
from ._util import canonical_json
from .errors import (ConfigError, DatasetParseError, EmptyStoreError,
                     RoarbenchError, RunFailureThreshold, UndefinedScoreError,
                     UsageError, ValidationVerdictFailure)
from .importance import MEASURE_NAMES
from .masking import StepSchedule
from .metrics import aggregate_faithfulness, area_faithfulness
from .models import ARCHITECTURES, ModelConfig

TOP_KEYS = {"dataset", "model", "measures", "mode", "schedule", "seeds",
            "metric", "ranking", "ig_steps", "out", "jobs"}
DATASET_KEYS = {"kind", "params", "path", "seed"}
MODEL_KEYS = {f.name for f in dataclass_fields(ModelConfig)}
SCHEDULE_KEYS = {"mode", "step_size", "tokens_per_step", "max_iterations"}

MEASURE_COLORS = {
    "attention": "#1f77b4",
    "gradient": "#d62728",
    "input-x-gradient": "#2ca02c",
    "integrated-gradient": "#9467bd",
    "oracle": "#ff7f0e",
    "oracle-top1": "#8c564b",
    "random": "#7f7f7f",
}
FALLBACK_COLOR = "#17becf"

VALIDATION_COLORS = {
    "ground-truth": "#2ca02c",
    "worst-case": "#d62728",
    "classic": "#1f77b4",
    "recursive": "#9467bd",
}


# ---------------------------------------------------------------------------
# SVG chart emitter (dependency-free; plots are never the only record)

def _px(value, lo, hi, start, span):
    return start + (value - lo) / (hi - lo) * span


def _path(points):
    return "M " + " L ".join(f"{x:.1f},{y:.1f}" for x, y in points)


def _segments(xs, ys):
    """Consecutive runs of defined points; failed runs break the line."""
    run = []
    for x, y in zip(xs, ys):
        if y is None:
            if run:
                yield run
            run = []
        else:
            run.append((x, y))
    if run:
        yield run


def render_chart(series, x_ticks, title, x_label, y_label,
                 x_range=(0.0, 1.0), y_range=(0.0, 1.0), rules=(),
                 width=640, height=420):
    """Line chart with optional CI bands and dashed horizontal rules.

    Each series is a dict with label/color/x/y and optional ci_low,
    ci_high (None entries break the line / band).
    """
    ml, mr, mt, mb = 62, 18, 34, 50
    pw, ph = width - ml - mr, height - mt - mb
    x0, x1 = x_range
    y0, y1 = y_range

    def sx(v):
        return _px(v, x0, x1, ml, pw)

    def sy(v):
        return _px(v, y1, y0, mt, ph)  # y grows downward

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
           f'height="{height}" viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" '
           f'font-family="sans-serif" font-size="14">{title}</text>']

    for t in x_ticks:
        x = sx(t)
        out.append(f'<line x1="{x:.1f}" y1="{mt}" x2="{x:.1f}" '
                   f'y2="{mt + ph}" stroke="#eeeeee" stroke-width="1"/>')
        out.append(f'<text x="{x:.1f}" y="{mt + ph + 16}" '
                   f'text-anchor="middle" font-family="sans-serif" '
                   f'font-size="10">{t:g}</text>')
    y_ticks = [y0 + (y1 - y0) * i / 4 for i in range(5)]
    for t in y_ticks:
        y = sy(t)
        out.append(f'<line x1="{ml}" y1="{y:.1f}" x2="{ml + pw}" '
                   f'y2="{y:.1f}" stroke="#eeeeee" stroke-width="1"/>')
        out.append(f'<text x="{ml - 6}" y="{y + 3:.1f}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="10">{t:g}</text>')

    # CI bands under the lines
    for s in series:
        lo, hi = s.get("ci_low"), s.get("ci_high")
        if not lo or not hi:
            continue
        band_y = [None if (a is None or b is None) else (a, b)
                  for a, b in zip(lo, hi)]
        for seg in _segments(s["x"], band_y):
            top = [(sx(x), sy(b)) for x, (a, b) in seg]
            bot = [(sx(x), sy(a)) for x, (a, b) in reversed(seg)]
            out.append(f'<path d="{_path(top + bot)} Z" fill="{s["color"]}" '
                       f'fill-opacity="0.15" stroke="none"/>')

    for y_val, label, color in rules:
        y = sy(y_val)
        out.append(f'<line x1="{ml}" y1="{y:.1f}" x2="{ml + pw}" '
                   f'y2="{y:.1f}" stroke="{color}" stroke-width="1.2" '
                   f'stroke-dasharray="6,4"/>')

    for s in series:
        dash = ' stroke-dasharray="5,3"' if s.get("dash") else ""
        for seg in _segments(s["x"], s["y"]):
            pts = [(sx(x), sy(y)) for x, y in seg]
            if len(pts) == 1:
                x, y = pts[0]
                out.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="2.5" '
                           f'fill="{s["color"]}"/>')
            else:
                out.append(f'<path d="{_path(pts)}" fill="none" '
                           f'stroke="{s["color"]}" stroke-width="1.8"'
                           f'{dash}/>')

    out.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" '
               f'fill="none" stroke="#333333" stroke-width="1"/>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 12}" '
               f'text-anchor="middle" font-family="sans-serif" '
               f'font-size="12">{x_label}</text>')
    out.append(f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="12" '
               f'transform="rotate(-90 16 {mt + ph / 2:.1f})">{y_label}'
               f'</text>')

    legend = [(s["label"], s["color"], s.get("dash", False))
              for s in series]
    legend += [(label, color, True) for _, label, color in rules]
    ly = mt + 10
    for label, color, dash in legend:
        dash_attr = ' stroke-dasharray="5,3"' if dash else ""
        out.append(f'<line x1="{ml + pw - 150}" y1="{ly}" '
                   f'x2="{ml + pw - 122}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="2"{dash_attr}/>')
        out.append(f'<text x="{ml + pw - 116}" y="{ly + 4}" '
                   f'font-family="sans-serif" font-size="10">{label}</text>')
        ly += 16
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# pipeline config

PIPELINE_DEFAULTS = {
    "mode": "recursive",
    "seeds": list(harness.DEFAULT_SEEDS),
    "metric": "accuracy",
    "ranking": "signed",
    "ig_steps": 50,
    "jobs": 1,
}


def _reject_unknown(mapping, allowed, where):
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ConfigError(f"unknown {where} field(s): {', '.join(unknown)}")


def load_pipeline_config(path):
    try:
        with open(path) as fh:
            config = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}")
    if not isinstance(config, dict):
        raise ConfigError("pipeline config must be a JSON object")
    _reject_unknown(config, TOP_KEYS, "config")
    if "dataset" in config:
        _reject_unknown(config["dataset"], DATASET_KEYS, "dataset")
    if "model" in config:
        _reject_unknown(config["model"], MODEL_KEYS, "model")
    if "schedule" in config:
        _reject_unknown(config["schedule"], SCHEDULE_KEYS, "schedule")
    return config


def _parse_seed_list(text):
    try:
        seeds = tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"bad seed list {text!r}")
    if not seeds:
        raise ConfigError("empty seed list")
    return seeds


def merge_roar_flags(config, args):
    config = dict(config)
    if args.out:
        config["out"] = args.out
    if args.mode:
        config["mode"] = args.mode
    if args.metric:
        config["metric"] = args.metric
    if args.seeds:
        config["seeds"] = list(_parse_seed_list(args.seeds))
    if args.measures:
        config["measures"] = [m.strip() for m in args.measures.split(",")
                              if m.strip()]
    if args.ranking:
        config["ranking"] = args.ranking
    if args.ig_steps is not None:
        config["ig_steps"] = args.ig_steps
    if args.jobs is not None:
        config["jobs"] = args.jobs
    schedule = dict(config.get("schedule") or {})
    if args.schedule_mode:
        schedule["mode"] = args.schedule_mode
    if args.step_size is not None:
        schedule["step_size"] = args.step_size
    if args.tokens_per_step is not None:
        schedule["tokens_per_step"] = args.tokens_per_step
    if args.max_iterations is not None:
        schedule["max_iterations"] = args.max_iterations
    if schedule:
        config["schedule"] = schedule
    for key, value in PIPELINE_DEFAULTS.items():
        config.setdefault(key, value)
    return config


def build_plans(config):
    """Effective config -> dataset + one ExperimentPlan per mode."""
    if "dataset" not in config:
        raise ConfigError("config needs a dataset section")
    if "model" not in config or "arch" not in config["model"]:
        raise ConfigError("config needs a model section with an arch")
    if not config.get("measures"):
        raise ConfigError("config needs a non-empty measures list")
    if "out" not in config:
        raise ConfigError("no output directory (config `out` or --out)")

    dataset_spec = dict(config["dataset"])
    dataset = harness.dataset_from_spec(dataset_spec)
    model_dict = dict(config["model"])
    model_dict.setdefault("vocab_size", len(dataset.vocab))
    model_dict.setdefault("classes", dataset.classes())
    model = ModelConfig(**model_dict)
    schedule = StepSchedule(**(config.get("schedule") or {}))

    measures = tuple(config["measures"])
    for m in measures:
        if m not in MEASURE_NAMES:
            raise ConfigError(f"unknown importance measure {m!r}")
    if model.arch == "linear" and "attention" in measures:
        raise ConfigError("attention importance needs an attention model")

    mode = config["mode"]
    modes = ("classic", "recursive") if mode == "both" else (mode,)
    plans = []
    for m in modes:
        plans.append(harness.ExperimentPlan(
            dataset_spec=dataset_spec, model=model, measures=measures,
            schedule=schedule, seeds=tuple(config["seeds"]), mode=m,
            metric=config["metric"], ranking=config["ranking"],
            ig_steps=config["ig_steps"]))
    effective = dict(config)
    effective["model"] = model.to_dict()
    effective["schedule"] = {
        "mode": schedule.mode, "step_size": schedule.step_size,
        "tokens_per_step": schedule.tokens_per_step,
        "max_iterations": schedule.max_iterations}
    return dataset, plans, effective


# ---------------------------------------------------------------------------
# commands

def cmd_gen(args):
    os.makedirs(args.out, exist_ok=True)
    if args.kind == "tabular":
        dataset = data_mod.gen_tabular(args.n, args.n_validation,
                                       args.n_test, args.seed)
        meta = {"kind": "tabular", "seed": args.seed,
                "a": dataset.a.tolist(), "d": dataset.d.tolist()}
        with open(os.path.join(args.out, "meta.json"), "w") as fh:
            fh.write(canonical_json(meta))
        for name, (x, y) in dataset.splits.items():
            with open(os.path.join(args.out, f"{name}.jsonl"), "w") as fh:
                for row, label in zip(x, y):
                    fh.write(canonical_json({"x": row.tolist(),
                                             "y": int(label)}) + "\n")
    else:
        params = {"n_train": args.n, "n_validation": args.n_validation,
                  "n_test": args.n_test, "seed": args.seed}
        if args.kind in ("keyword", "leakage"):
            params.update(classes=args.classes, distractors=args.distractors,
                          length=args.length)
        if args.kind == "keyword":
            params["redundancy"] = args.redundancy
        if args.kind == "leakage":
            params["leak_precision"] = args.leak_precision
        if args.kind == "paired":
            params.update(entities=args.entities, locations=args.locations,
                          max_statements=args.max_statements)
        dataset = data_mod.GENERATORS[args.kind](**params)
        data_mod.save_jsonl(dataset, args.out)
    print(f"dataset {dataset.digest()}")
    print(f"wrote {args.out}")
    return 0


def _faithfulness_rows(doc):
    """Per-seed areas from one curve document; None when undefined."""
    ratios = doc["ratios"]
    if not ratios or ratios[-1] != 1.0:
        return None
    per_seed = {}
    for seed in doc["seeds"]:
        p = doc["performance"][str(seed)]
        b = doc["baseline"][str(seed)]
        if any(v is None for v in p + b):
            continue
        try:
            per_seed[seed] = area_faithfulness(ratios, p, b)
        except UndefinedScoreError:
            continue
    if not per_seed:
        return None
    return aggregate_faithfulness(doc["measure"], per_seed)


def _write_faithfulness_csv(path, docs):
    rows = []
    for doc in docs:
        score = _faithfulness_rows(doc)
        row = {"task": doc["dataset"].get("kind", "dataset"),
               "model": doc["model"]["arch"], "mode": doc["mode"],
               "metric": doc["metric"], "measure": doc["measure"],
               "mean": "", "ci_low": "", "ci_high": "", "seeds_used": ""}
        if score is not None:
            row["mean"] = f"{score.mean:.6f}"
            if score.ci_low == score.ci_low:  # not NaN
                row["ci_low"] = f"{score.ci_low:.6f}"
                row["ci_high"] = f"{score.ci_high:.6f}"
            row["seeds_used"] = len(score.per_seed)
        rows.append(row)
    rows.sort(key=lambda r: (r["task"], r["model"], r["mode"], r["measure"]))
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["task", "model", "mode",
                                                "metric", "measure", "mean",
                                                "ci_low", "ci_high",
                                                "seeds_used"],
                                lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def _chart_from_docs(docs, title):
    """One chart per (task, model, mode) group of curve documents."""
    series = []
    rules = []
    for doc in sorted(docs, key=lambda d: d["measure"]):
        color = MEASURE_COLORS.get(doc["measure"], FALLBACK_COLOR)
        series.append({"label": doc["measure"], "color": color,
                       "x": doc["ratios"], "y": doc["mean"],
                       "ci_low": doc["ci_low"], "ci_high": doc["ci_high"],
                       "dash": doc["measure"] == "random"})
    floor_doc = next((d for d in docs
                      if d["ratios"] and d["ratios"][-1] == 1.0
                      and d["mean"] and d["mean"][-1] is not None), None)
    if floor_doc is not None:
        rules.append((floor_doc["mean"][-1], "100% masked", "#333333"))
    x_ticks = docs[0]["ratios"] if docs else []
    return render_chart(series, x_ticks, title, "masking ratio",
                        docs[0]["metric"] if docs else "performance",
                        rules=rules)


def cmd_roar(args):
    config = merge_roar_flags(load_pipeline_config(args.config), args)
    dataset, plans, effective = build_plans(config)
    out = config["out"]
    os.makedirs(out, exist_ok=True)
    curves_dir = os.path.join(out, "curves")
    os.makedirs(curves_dir, exist_ok=True)
    with open(os.path.join(out, "effective-config.json"), "w") as fh:
        fh.write(canonical_json(effective))

    jobs = int(config["jobs"])
    docs = []
    summary = {"plans": []}
    for plan in plans:
        result = harness.run_plan(plan, store_root=out, jobs=jobs)
        for measure in plan.all_measures():
            doc = harness.curve_document(result, measure)
            docs.append(doc)
            name = f"{plan.mode}-{measure}.json"
            with open(os.path.join(curves_dir, name), "w") as fh:
                fh.write(canonical_json(doc))
        plan_summary = {
            "plan_hash": result.plan_hash, "mode": plan.mode,
            "runs_total": result.total, "runs_failed": result.failed,
            "faithfulness": {
                m: (result.faithfulness[m].to_record()
                    if result.faithfulness[m] is not None else None)
                for m in plan.all_measures()},
        }
        summary["plans"].append(plan_summary)
        print(f"plan {result.plan_hash} mode={plan.mode}: "
              f"{result.total - result.failed}/{result.total} runs ok")
        for m in plan.all_measures():
            score = result.faithfulness[m]
            if score is None:
                print(f"  {m}: faithfulness undefined (incomplete curve)")
            else:
                print(f"  {m}: faithfulness {score.mean:+.4f} "
                      f"[{score.ci_low:+.4f}, {score.ci_high:+.4f}]")
    _write_faithfulness_csv(os.path.join(out, "faithfulness.csv"), docs)
    with open(os.path.join(out, "summary.json"), "w") as fh:
        fh.write(canonical_json(summary))
    print(f"wrote {out}")
    return 0


def cmd_report(args):
    store = args.store
    out = args.out or store
    curves_dir = os.path.join(store, "curves")
    docs = []
    if os.path.isdir(curves_dir):
        for name in sorted(os.listdir(curves_dir)):
            if name.endswith(".json"):
                with open(os.path.join(curves_dir, name)) as fh:
                    docs.append(json.load(fh))
    if not docs:
        raise EmptyStoreError(f"no curve documents under {curves_dir}")
    os.makedirs(out, exist_ok=True)

    groups = {}
    for doc in docs:
        key = (doc["dataset"].get("kind", "dataset"),
               doc["model"]["arch"], doc["mode"])
        groups.setdefault(key, []).append(doc)
    for (task, arch, mode), group in sorted(groups.items()):
        title = f"{task} / {arch} / {mode} ROAR"
        svg = _chart_from_docs(group, title)
        name = f"{task}-{arch}-{mode}.svg"
        with open(os.path.join(out, name), "w") as fh:
            fh.write(svg)
        print(f"wrote {os.path.join(out, name)}")
    _write_faithfulness_csv(os.path.join(out, "faithfulness.csv"), docs)
    print(f"wrote {os.path.join(out, 'faithfulness.csv')}")
    return 0


def cmd_validate(args):
    seeds = _parse_seed_list(args.seeds) if args.seeds \
        else harness.DEFAULT_SEEDS
    bundle = harness.run_synthetic_validation(
        seeds=seeds, n_train=args.n_train, n_test=args.n_test, l2=args.l2)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "validation.json"), "w") as fh:
        fh.write(canonical_json(bundle))

    steps = bundle["steps"]
    series = []
    for name in ("ground-truth", "worst-case", "classic", "recursive"):
        series.append({"label": name, "color": VALIDATION_COLORS[name],
                       "x": steps, "y": bundle["curves"][name]["mean"],
                       "dash": name == "worst-case"})
    svg = render_chart(series, x_ticks=list(range(0, 17, 2)),
                       title="recursive vs classic removal on the tabular "
                             "task",
                       x_label="features removed", y_label="accuracy",
                       x_range=(0, 16), y_range=(0.0, 1.0))
    with open(os.path.join(args.out, "validation.svg"), "w") as fh:
        fh.write(svg)

    verdict = bundle["verdict"]
    status = "PASS" if verdict["pass"] else "FAIL"
    print(f"recursive-vs-ground-truth gap {verdict['recursive_gap']:.4f} "
          f"(tolerance {verdict['tolerance']:.2f}): {status}")
    print(f"wrote {args.out}")
    if not verdict["pass"]:
        raise ValidationVerdictFailure(
            f"recursive gap {verdict['recursive_gap']:.4f} exceeds "
            f"{verdict['tolerance']:.2f}")
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser():
    parser = argparse.ArgumentParser(
        prog="roarbench",
        description="Faithfulness benchmarking for feature importance "
                    "measures via iterative mask-and-retrain.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a dataset")
    gen_sub = gen.add_subparsers(dest="kind", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--n", type=int, required=True,
                        help="training split size")
    common.add_argument("--n-validation", type=int, default=500)
    common.add_argument("--n-test", type=int, default=500)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", required=True)

    g_keyword = gen_sub.add_parser("keyword", parents=[common])
    g_keyword.add_argument("--classes", type=int, default=2)
    g_keyword.add_argument("--distractors", type=int, default=30)
    g_keyword.add_argument("--redundancy", type=int, default=1)
    g_keyword.add_argument("--length", type=int, default=12)

    g_leak = gen_sub.add_parser("leakage", parents=[common])
    g_leak.add_argument("--classes", type=int, default=2)
    g_leak.add_argument("--distractors", type=int, default=30)
    g_leak.add_argument("--length", type=int, default=12)
    g_leak.add_argument("--leak-precision", type=float, default=0.6)

    g_paired = gen_sub.add_parser("paired", parents=[common])
    g_paired.add_argument("--entities", type=int, default=6)
    g_paired.add_argument("--locations", type=int, default=4)
    g_paired.add_argument("--max-statements", type=int, default=3)

    g_tab = gen_sub.add_parser("tabular", parents=[common])
    for p in (g_keyword, g_leak, g_paired, g_tab):
        p.set_defaults(func=cmd_gen)

    roar = sub.add_parser("roar", help="run a ROAR benchmark plan")
    roar.add_argument("--config", required=True)
    roar.add_argument("--out")
    roar.add_argument("--mode", choices=("classic", "recursive", "both"))
    roar.add_argument("--metric",
                      choices=("accuracy", "micro-f1", "macro-f1"))
    roar.add_argument("--seeds", help="comma-separated list")
    roar.add_argument("--measures", help="comma-separated list")
    roar.add_argument("--ranking", choices=("signed", "absolute"))
    roar.add_argument("--ig-steps", type=int)
    roar.add_argument("--schedule-mode", choices=("relative", "absolute"))
    roar.add_argument("--step-size", type=float)
    roar.add_argument("--tokens-per-step", type=int)
    roar.add_argument("--max-iterations", type=int)
    roar.add_argument("--jobs", type=int)
    roar.set_defaults(func=cmd_roar)

    report = sub.add_parser("report", help="render plots and tables")
    report.add_argument("--store", required=True,
                        help="output directory of a roar run")
    report.add_argument("--out")
    report.set_defaults(func=cmd_report)

    validate = sub.add_parser("validate",
                              help="tabular ground-truth self-check")
    validate.add_argument("--seeds", help="comma-separated list")
    validate.add_argument("--n-train", type=int)
    validate.add_argument("--n-test", type=int)
    validate.add_argument("--l2", type=float)
    validate.add_argument("--out", required=True)
    validate.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError, DatasetParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RunFailureThreshold as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except EmptyStoreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ValidationVerdictFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    except RoarbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
