"""Command-line interface.

Subcommands: ``generate``, ``train``, ``suite``, ``ablation``, ``grid``,
``plotdata``.  Settings resolve as: explicit flags, then ``--config`` file,
then built-in defaults.  Every output lands under ``--out``.

Exit codes: 0 success, 1 run error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace

from . import experiments as ex
from .data import EXP1_DATA, EXP2_DATA, CsvSchema, Splits, ToySpec, load_csv, toy_splits, write_csv
from .errors import ConfigError, HydaError, TrainingDiverged
from .multitask import write_checkpoint
from .trainer import RunLog, TrainConfig, train
from .weighting import STRATEGIES, STRATEGY_PARAMS

log = logging.getLogger("hydalearn")

EXIT_OK, EXIT_RUN, EXIT_CONFIG = 0, 1, 2

# flag name -> (strategy parameter, strategies it applies to)
STRATEGY_FLAGS = {
    "beta": ("beta", {"hydalearn"}),
    "ratio": ("ratio", {"static"}),
    "period": ("period", {"olaux"}),
    "olaux_lr": ("weight_lr", {"olaux"}),
    "alpha_gn": ("alpha_gn", {"gradnorm"}),
    "gradnorm_lr": ("weight_lr", {"gradnorm"}),
    "normalize_fake_grads": ("normalize_fake_grads", {"hydalearn"}),
    "metric_dataset": ("metric_dataset", {"hydalearn"}),
    "downscale": ("downscale_W", {"hydalearn"}),
    "metric_subsample": ("metric_subsample", {"hydalearn"}),
    "negative_gains": ("negative_gains", {"hydalearn"}),
}

TRAIN_FLAGS = {
    "lr": "learning_rate",
    "total_weight": "total_weight",
    "max_epochs": "max_epochs",
    "max_steps": "max_steps",
    "eval_every": "eval_every",
    "patience": "early_stop_patience",
    "batch_size": "batch_size",
    "seed": "seed",
    "strategy": "strategy",
    "metric": "metric",
}


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _toy_from_args(args, base: ToySpec) -> ToySpec:
    fields = {}
    for name in ("n_train", "n_val", "n_test", "input_dim", "output_dim", "noise_std", "seed"):
        value = getattr(args, name, None)
        if value is not None:
            fields[name] = value
    return replace(base, **fields)


# --------------------------------------------------------------------------
# generate


def cmd_generate(args):
    base = EXP2_DATA if args.exp2 else EXP1_DATA
    spec = _toy_from_args(args, base)
    splits = toy_splits(spec)
    os.makedirs(args.out, exist_ok=True)
    schema = None
    for name, ds in (("train", splits.train), ("val", splits.val), ("test", splits.test)):
        schema = write_csv(ds, os.path.join(args.out, f"{name}.csv"))
    _write_json(os.path.join(args.out, "schema.json"), schema.to_dict())
    _write_json(os.path.join(args.out, "meta.json"), {
        "toy": spec.to_dict(),
        "rows": {"train": len(splits.train), "val": len(splits.val), "test": len(splits.test)},
        "checksum": splits.checksum(),
    })
    print(f"wrote {len(splits.train)}/{len(splits.val)}/{len(splits.test)} rows to {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# train


def _default_run_config():
    spec = ex.exp1_spec()
    return {
        "data": {"toy": EXP1_DATA.to_dict()},
        "architecture": {"encoder_sizes": spec.encoder_sizes, "head_sizes": spec.head_sizes,
                         "activation": spec.activation},
        "train": TrainConfig(strategy_params={"beta": 6.0}).to_dict(),
    }


def resolve_run_config(args):
    """Merge defaults, the ``--config`` file and explicit flags into one dict."""
    cfg = _default_run_config()
    if args.config:
        loaded = _read_json(args.config)
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise ConfigError(f"{args.config}: unknown section(s) {sorted(unknown)}")
        for section in ("architecture", "train"):
            cfg[section].update(loaded.get(section, {}))
        if "data" in loaded:
            cfg["data"] = loaded["data"]

    if args.exp1 or args.exp2:
        base = EXP2_DATA if args.exp2 else EXP1_DATA
        cfg["data"] = {"toy": _toy_from_args(args, base).to_dict()}
        spec = ex.exp2_spec() if args.exp2 else ex.exp1_spec()
        if not args.config:
            cfg["architecture"].update(encoder_sizes=spec.encoder_sizes, head_sizes=spec.head_sizes)
    elif args.data:
        cfg["data"] = {"dir": args.data}
    elif args.csv:
        if not args.schema:
            raise ConfigError("--csv requires --schema")
        cfg["data"] = {"csv": {"path": args.csv, "schema": args.schema,
                               "fractions": [0.7, 0.15, 0.15]}}
    elif "toy" in cfg["data"] and args.seed is not None:
        cfg["data"]["toy"]["seed"] = args.seed

    train_cfg = cfg["train"]
    previous_strategy = train_cfg.get("strategy")
    for flag, key in TRAIN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            train_cfg[key] = value
    if train_cfg["strategy"] != previous_strategy:
        train_cfg["strategy_params"] = {}
    if "toy" in cfg["data"] and args.seed is not None:
        cfg["data"]["toy"]["seed"] = args.seed

    strategy = train_cfg["strategy"]
    if strategy not in STRATEGIES:
        raise ConfigError(f"--strategy: unknown value {strategy!r}")
    params = {k: v for k, v in train_cfg.get("strategy_params", {}).items() if k in STRATEGY_PARAMS[strategy]}
    for flag, (key, applies) in STRATEGY_FLAGS.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if strategy not in applies:
            log.warning("--%s does not apply to strategy %r and is ignored", flag.replace("_", "-"), strategy)
            continue
        params[key] = value
    train_cfg["strategy_params"] = params
    if args.literal_aux_head_base:
        train_cfg["literal_aux_head_base"] = True
    return cfg


def _load_run_data(data_cfg, seed):
    if "toy" in data_cfg:
        return toy_splits(ToySpec(**data_cfg["toy"]))
    if "dir" in data_cfg:
        d = data_cfg["dir"]
        schema_path = os.path.join(d, "schema.json")
        if not os.path.exists(schema_path):
            raise ConfigError(f"data directory {d!r} has no schema.json")
        schema = CsvSchema.load(schema_path)
        parts = []
        for name in ("train", "val", "test"):
            path = os.path.join(d, f"{name}.csv")
            if not os.path.exists(path):
                raise ConfigError(f"data directory {d!r} has no {name}.csv")
            parts.append(load_csv(path, schema))
        return Splits(*parts)
    if "csv" in data_cfg:
        spec = ex.ExperimentSpec("cli", data_cfg["csv"], [1], [])
        return ex.load_splits(spec, seed)
    raise ConfigError("data section must contain 'toy', 'dir' or 'csv'")


def cmd_train(args):
    cfg = resolve_run_config(args)
    train_cfg = TrainConfig.from_dict(cfg["train"])
    arch = cfg["architecture"]
    splits = _load_run_data(cfg["data"], train_cfg.seed)
    spec = ex.ExperimentSpec("run", EXP1_DATA, arch["encoder_sizes"], arch["head_sizes"],
                             activation=arch.get("activation", "tanh"))
    net = ex.build_net(spec, splits, train_cfg.seed)
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "config.json"), cfg)
    summary = {
        "strategy": train_cfg.strategy,
        "strategy_params": train_cfg.strategy_params,
        "seed": train_cfg.seed,
        "data_checksum": splits.checksum(),
        "init_checksum": net.checksum(),
    }
    try:
        net, run_log = train(net, splits, train_cfg)
    except TrainingDiverged as exc:
        getattr(exc, "log", RunLog()).write_jsonl(os.path.join(args.out, "runlog.jsonl"))
        _write_json(os.path.join(args.out, "summary.json"), {**summary, "status": "failed", "error": str(exc)})
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN
    run_log.write_jsonl(os.path.join(args.out, "runlog.jsonl"))
    summary.update(run_log.final)
    summary["final_checksum"] = net.checksum()
    _write_json(os.path.join(args.out, "summary.json"), summary)
    write_checkpoint(net, os.path.join(args.out, "checkpoint.bin"))
    print(json.dumps({k: summary[k] for k in ("strategy", "best_val", "test_metric_main", "stopped_step")}))
    return EXIT_OK


# --------------------------------------------------------------------------
# suite / ablation / grid


def _experiment_from_args(args) -> ex.ExperimentSpec:
    name = args.experiment
    if name == "exp1":
        spec = ex.exp1_spec()
    elif name == "exp2":
        spec = ex.exp2_spec()
    elif os.path.exists(name):
        spec = ex.ExperimentSpec.load(name)
    else:
        raise ConfigError(f"--experiment: {name!r} is neither exp1, exp2 nor a file")
    train_updates = {}
    if getattr(args, "max_epochs", None) is not None:
        train_updates["max_epochs"] = args.max_epochs
    if getattr(args, "max_steps", None) is not None:
        train_updates["max_steps"] = args.max_steps
    if getattr(args, "patience", None) is not None:
        train_updates["early_stop_patience"] = args.patience
    if train_updates:
        spec = replace(spec, train=replace(spec.train, **train_updates))
    if getattr(args, "seeds", None):
        spec = replace(spec, seeds=args.seeds)
    if getattr(args, "strategies", None):
        spec = replace(spec, strategies=args.strategies)
    return spec


def cmd_suite(args):
    spec = _experiment_from_args(args)
    os.makedirs(args.out, exist_ok=True)
    spec.save(os.path.join(args.out, f"{spec.name}_experiment.json"))
    table, results = ex.run_suite(spec, out_dir=args.out)
    print(table.format(spec.name))
    failed = [r.summary for r in results if r.summary.get("status") != "ok"]
    for s in failed:
        print(f"failed: {s['label']} seed={s['seed']}: {s.get('error')}", file=sys.stderr)
    return EXIT_RUN if failed and len(failed) == len(results) else EXIT_OK


def cmd_ablation(args):
    spec = _experiment_from_args(args)
    os.makedirs(args.out, exist_ok=True)
    spec.save(os.path.join(args.out, f"{spec.name}_experiment.json"))
    _write_json(os.path.join(args.out, f"{spec.name}_arms.json"), ex.ablation_configs(spec))
    table, results = ex.run_ablation(spec, out_dir=args.out)
    print(table.format("Experiment"))
    failed = [r for r in results if r.summary.get("status") != "ok"]
    return EXIT_RUN if failed and len(failed) == len(results) else EXIT_OK


def _parse_grid(items):
    grid = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--grid expects name=v1,v2,... got {item!r}")
        name, values = item.split("=", 1)
        name = "learning_rate" if name in ("lr", "learning_rate") else name
        parsed = []
        for v in values.split(","):
            v = v.strip()
            try:
                parsed.append(float(v))
            except ValueError:
                parsed.append({"true": True, "false": False}.get(v.lower(), v))
        grid[name] = parsed
    return grid


def cmd_grid(args):
    spec = _experiment_from_args(args)
    grid = _parse_grid(args.grid)
    if not grid:
        raise ConfigError("--grid is required at least once")
    allowed = STRATEGY_PARAMS[args.strategy] | {"learning_rate"}
    unknown = set(grid) - allowed
    if unknown:
        raise ConfigError(f"--grid: {sorted(unknown)} not valid for {args.strategy!r}")
    os.makedirs(args.out, exist_ok=True)
    best, rows = ex.grid_search(spec, args.strategy, grid, seeds=spec.seeds, out_dir=args.out)
    _write_json(os.path.join(args.out, spec.name, f"best_{args.strategy}.json"), best)
    print(json.dumps(best["config"]), best["val_metric"])
    return EXIT_OK


# --------------------------------------------------------------------------
# plotdata


def _find_runs(paths):
    runs, missing = [], []
    for p in paths:
        if os.path.isfile(os.path.join(p, "runlog.jsonl")):
            runs.append(p)
            continue
        found = False
        for root, _, files in os.walk(p):
            if "runlog.jsonl" in files:
                runs.append(root)
                found = True
        if not found:
            missing.append(p)
    return sorted(set(runs)), missing


def epoch_means(run_log: RunLog, key="w_a", normalise=True):
    """Per-epoch mean of ``key`` (divided by ``W_effective`` when ``normalise``), in one pass."""
    sums, counts = {}, {}
    for rec in run_log.steps:
        value = rec.get(key)
        if value is None:
            continue
        if normalise:
            value = value / rec["W_effective"] if rec.get("W_effective") else 0.0
        e = rec["epoch"]
        sums[e] = sums.get(e, 0.0) + value
        counts[e] = counts.get(e, 0) + 1
    return [(e, sums[e] / counts[e]) for e in sorted(sums)]


def _run_identity(run_dir):
    for name in ("summary.json", "config.json"):
        path = os.path.join(run_dir, name)
        if os.path.exists(path):
            with open(path) as fh:
                d = json.load(fh)
            label = d.get("label") or d.get("strategy") or d.get("train", {}).get("strategy")
            return label or os.path.basename(run_dir), d.get("seed", d.get("run", {}).get("seed", ""))
    return os.path.basename(run_dir), ""


def cmd_plotdata(args):
    runs, missing = _find_runs(args.runs)
    if missing or not runs:
        print("error: no run logs found under: " + ", ".join(missing or args.runs), file=sys.stderr)
        return EXIT_RUN
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "weights_epoch.csv"), "w", newline="") as fw, \
            open(os.path.join(args.out, "val_curves.csv"), "w", newline="") as fv, \
            open(os.path.join(args.out, "deltas.csv"), "w", newline="") as fd:
        ww, wv, wd = (csv.writer(f, lineterminator="\n") for f in (fw, fv, fd))
        ww.writerow(["run", "label", "seed", "epoch", "mean_w_a_over_W"])
        wv.writerow(["run", "label", "seed", "step", "val_metric_main", "val_metric_aux"])
        wd.writerow(["run", "label", "seed", "step", "delta_mm", "delta_ma", "w_m", "w_a", "W_effective"])
        for run_dir in runs:
            run_log = RunLog.read_jsonl(os.path.join(run_dir, "runlog.jsonl"))
            label, seed = _run_identity(run_dir)
            rel = os.path.relpath(run_dir)
            for epoch, mean in epoch_means(run_log):
                ww.writerow([rel, label, seed, epoch, repr(mean)])
            for rec in run_log.evals:
                wv.writerow([rel, label, seed, rec["step"], repr(rec["val_metric_main"]),
                             "" if rec.get("val_metric_aux") is None else repr(rec["val_metric_aux"])])
            for rec in run_log.steps:
                if rec.get("delta_mm") is None:
                    continue
                wd.writerow([rel, label, seed, rec["step"], repr(rec["delta_mm"]), repr(rec["delta_ma"]),
                             repr(rec["w_m"]), repr(rec["w_a"]), repr(rec["W_effective"])])
    print(f"wrote plot data for {len(runs)} run(s) to {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------


def _bool_flag(parser, name, dest, help_on):
    group = parser.add_mutually_exclusive_group()
    group.add_argument(f"--{name}", dest=dest, action="store_true", default=None, help=help_on)
    group.add_argument(f"--no-{name}", dest=dest, action="store_false", default=None)


def _add_toy_flags(p):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--exp1", action="store_true", help="related-task toy data (75 -> 25)")
    src.add_argument("--exp2", action="store_true", help="unrelated-task toy data (25 -> 5)")
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-val", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--input-dim", type=int)
    p.add_argument("--output-dim", type=int)
    p.add_argument("--noise-std", type=float)
    p.add_argument("--seed", type=int)
    return src


def build_parser():
    parser = argparse.ArgumentParser(prog="hydalearn", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a toy dataset as CSV")
    _add_toy_flags(g)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one model")
    src = _add_toy_flags(t)
    src.add_argument("--data", help="directory written by 'generate'")
    src.add_argument("--csv", help="CSV file (needs --schema)")
    t.add_argument("--schema")
    t.add_argument("--config", help="JSON run config (e.g. a previous run's config.json)")
    t.add_argument("--strategy", choices=STRATEGIES)
    t.add_argument("--lr", type=float)
    t.add_argument("--total-weight", type=float)
    t.add_argument("--max-epochs", type=int)
    t.add_argument("--max-steps", type=int)
    t.add_argument("--eval-every", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--metric", choices=("mae", "mse", "auc"))
    t.add_argument("--beta", type=float)
    t.add_argument("--ratio", type=float)
    t.add_argument("--period", type=int)
    t.add_argument("--olaux-lr", type=float)
    t.add_argument("--alpha-gn", type=float)
    t.add_argument("--gradnorm-lr", type=float)
    t.add_argument("--metric-dataset", choices=("validation", "training"))
    t.add_argument("--metric-subsample", type=int)
    t.add_argument("--negative-gains", choices=("literal", "inverse"))
    _bool_flag(t, "normalize-fake-grads", "normalize_fake_grads", "unit-normalise fake-update gradients")
    _bool_flag(t, "downscale", "downscale", "shrink W when both gains are negative")
    t.add_argument("--literal-aux-head-base", action="store_true")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (("suite", cmd_suite, "all strategies x seeds"),
                                 ("ablation", cmd_ablation, "the four ExpImp arms"),
                                 ("grid", cmd_grid, "grid search for one strategy")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--experiment", default="exp1", help="exp1, exp2 or an experiment JSON file")
        p.add_argument("--seeds", type=int, nargs="+")
        p.add_argument("--max-epochs", type=int)
        p.add_argument("--max-steps", type=int)
        p.add_argument("--patience", type=int)
        p.add_argument("--out", required=True)
        if name == "suite":
            p.add_argument("--strategies", nargs="+", choices=STRATEGIES)
        if name == "grid":
            p.add_argument("--strategy", required=True, choices=STRATEGIES)
            p.add_argument("--grid", action="append", help="name=v1,v2,... (repeatable; lr for learning rate)")
        p.set_defaults(func=func)

    pd = sub.add_parser("plotdata", help="tidy CSVs of weights, validation curves and gains")
    pd.add_argument("--runs", nargs="+", required=True, help="run directories or roots to search")
    pd.add_argument("--out", required=True)
    pd.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (HydaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
