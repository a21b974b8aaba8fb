"""Canned experiment suites: Exp1/Exp2 toy comparisons, the component ablation, grid search.

All strategies inside one suite see the same data, splits, initial
parameters and batch order for a given seed; only the weighting differs.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data import EXP1_DATA, EXP2_DATA, CsvSchema, Splits, ToySpec, load_csv, split_indices, toy_splits
from .errors import ConfigError, HydaError, StrategyError, TrainingDiverged
from .multitask import MultiTaskNet, write_checkpoint
from .tensor_core import Rng
from .trainer import TrainConfig, train
from .weighting import STRATEGIES

log = logging.getLogger(__name__)

ABLATION_ARMS = {
    "ExpImp-0": {},
    "ExpImp-1": {"normalize_fake_grads": False},
    "ExpImp-2": {"metric_dataset": "training"},
    "ExpImp-3": {"downscale_W": False},
}


@dataclass
class ExperimentSpec:
    name: str
    data: object  # ToySpec or a CSV source dict {"path", "schema", "fractions"}
    encoder_sizes: list
    head_sizes: list
    activation: str = "tanh"
    strategies: list = field(default_factory=lambda: list(STRATEGIES))
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    train: TrainConfig = field(default_factory=TrainConfig)
    strategy_params: dict = field(default_factory=dict)
    # per-strategy learning rate; falls back to train.learning_rate
    learning_rates: dict = field(default_factory=dict)
    grids: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("an experiment needs at least one seed")
        unknown = set(self.strategies) - set(STRATEGIES)
        if unknown:
            raise ConfigError(f"unknown strategies {sorted(unknown)}")
        if not self.encoder_sizes:
            raise ConfigError("encoder_sizes must list at least one layer")

    def params_for(self, strategy):
        return dict(self.strategy_params.get(strategy, {}))

    def lr_for(self, strategy):
        return float(self.learning_rates.get(strategy, self.train.learning_rate))

    def to_dict(self):
        d = asdict(self)
        d["data"] = {"toy": self.data.to_dict()} if isinstance(self.data, ToySpec) else {"csv": self.data}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        data = d.pop("data")
        if "toy" in data:
            data = ToySpec(**data["toy"])
        elif "csv" in data:
            data = data["csv"]
        else:
            raise ConfigError("experiment data must be {'toy': {...}} or {'csv': {...}}")
        train_cfg = TrainConfig.from_dict(d.pop("train", {}))
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment field(s): {sorted(unknown)}")
        return cls(data=data, train=train_cfg, **d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def _toy_spec(name, data, encoder, head, max_epochs):
    return ExperimentSpec(
        name=name,
        data=data,
        encoder_sizes=encoder,
        head_sizes=head,
        train=TrainConfig(learning_rate=0.01, max_epochs=max_epochs, early_stop_patience=10),
        strategy_params={"hydalearn": {"beta": 6.0}, "static": {"ratio": 1.5}, "olaux": {"period": 5}},
        grids={
            "hydalearn": {"beta": [1.0, 3.0, 6.0]},
            "static": {"ratio": [1.5, 10.0, 100.0]},
            "olaux": {"period": [5]},
        },
    )


def exp1_spec(max_epochs=20) -> ExperimentSpec:
    """Related auxiliary task: 75 -> 4x64 encoder, heads 64 -> 32 -> 25."""
    return _toy_spec("exp1", EXP1_DATA, [64] * 4, [32], max_epochs)


def exp2_spec(max_epochs=600) -> ExperimentSpec:
    """Unrelated auxiliary task: 25 -> 2x40 encoder, heads 40 -> 20 -> 5."""
    return _toy_spec("exp2", EXP2_DATA, [40] * 2, [20], max_epochs)


_SPLIT_CACHE = {}


def load_splits(spec: ExperimentSpec, seed) -> Splits:
    """Data for one seed; identical for every strategy of the experiment."""
    if isinstance(spec.data, ToySpec):
        toy = replace(spec.data, seed=seed)
        key = ("toy", json.dumps(toy.to_dict(), sort_keys=True))
        if key not in _SPLIT_CACHE:
            _SPLIT_CACHE.clear()
            _SPLIT_CACHE[key] = toy_splits(toy)
        return _SPLIT_CACHE[key]
    src = spec.data
    schema = CsvSchema.from_dict(src["schema"]) if isinstance(src["schema"], dict) else CsvSchema.load(src["schema"])
    with open(src["path"]) as fh:
        n_rows = sum(1 for _ in fh) - 1
    tr, va, te = split_indices(n_rows, src.get("fractions", (0.7, 0.15, 0.15)), seed)
    ds = load_csv(src["path"], schema, train_rows=tr)
    return Splits(ds.subset(tr), ds.subset(va), ds.subset(te))


def build_net(spec: ExperimentSpec, splits: Splits, seed) -> MultiTaskNet:
    kinds = splits.train.task_kinds
    return MultiTaskNet.build(
        splits.train.inputs.shape[1], spec.encoder_sizes, spec.head_sizes,
        splits.train.targets_main.shape[1], splits.train.targets_aux.shape[1],
        Rng(seed).child("init"), activation=spec.activation,
        loss_main="bce" if kinds[0] == "classification" else "mse",
        loss_aux="bce" if kinds[1] == "classification" else "mse",
    )


def metric_for(splits: Splits, spec: ExperimentSpec):
    return "auc" if splits.train.task_kinds[0] == "classification" else spec.train.metric


@dataclass
class RunResult:
    summary: dict
    log: object = None


def run_single(spec: ExperimentSpec, strategy, seed, params=None, learning_rate=None,
               label=None, out_dir=None) -> RunResult:
    """Train one (strategy, seed) cell; failures are captured in ``summary['status']``."""
    params = spec.params_for(strategy) if params is None else dict(params)
    lr = spec.lr_for(strategy) if learning_rate is None else float(learning_rate)
    label = label or strategy
    splits = load_splits(spec, seed)
    net = build_net(spec, splits, seed)
    summary = {
        "experiment": spec.name,
        "label": label,
        "strategy": strategy,
        "seed": seed,
        "params": params,
        "learning_rate": lr,
        "data_checksum": splits.checksum(),
        "init_checksum": net.checksum(),
    }
    cfg = replace(spec.train, strategy=strategy, strategy_params=params, seed=seed,
                  learning_rate=lr, metric=metric_for(splits, spec))
    run_log = None
    try:
        net, run_log = train(net, splits, cfg)
        summary.update(run_log.final)
        w_eff = run_log.column("W_effective")
        summary["min_W_effective"] = float(np.nanmin(w_eff)) if w_eff.size else None
    except TrainingDiverged as exc:
        run_log = getattr(exc, "log", None)
        summary.update({"status": "failed", "error": str(exc)})
    except HydaError as exc:
        summary.update({"status": "failed", "error": f"{type(exc).__name__}: {exc}"})
    if out_dir is not None:
        run_dir = os.path.join(out_dir, spec.name, label, f"seed{seed}")
        os.makedirs(run_dir, exist_ok=True)
        with open(os.path.join(run_dir, "config.json"), "w") as fh:
            json.dump({"experiment": spec.to_dict(), "run": cfg.to_dict(), "label": label}, fh,
                      indent=2, sort_keys=True)
        if run_log is not None:
            run_log.write_jsonl(os.path.join(run_dir, "runlog.jsonl"))
        with open(os.path.join(run_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        if summary.get("status") == "ok":
            write_checkpoint(net, os.path.join(run_dir, "checkpoint.bin"))
    return RunResult(summary, run_log)


@dataclass
class ResultTable:
    """Per-(label, seed) values with per-label aggregates.

    ``std`` is the sample standard deviation (ddof=1) and is ``None`` for a
    label with fewer than two successful seeds.
    """

    value_name: str = "test_mse_main"
    rows: list = field(default_factory=list)

    def add(self, summary):
        value = summary.get(self.value_name) if summary.get("status") == "ok" else None
        self.rows.append({"label": summary["label"], "seed": summary["seed"],
                          "value": value, "status": summary.get("status", "failed")})

    def labels(self):
        seen = []
        for r in self.rows:
            if r["label"] not in seen:
                seen.append(r["label"])
        return seen

    def values(self, label):
        return np.array([r["value"] for r in self.rows if r["label"] == label and r["value"] is not None],
                        dtype=np.float64)

    def aggregate(self):
        out = {}
        for label in self.labels():
            v = self.values(label)
            n_failed = sum(1 for r in self.rows if r["label"] == label and r["value"] is None)
            out[label] = {
                "n": int(v.size),
                "failed": n_failed,
                "mean": float(v.mean()) if v.size else None,
                "median": float(np.median(v)) if v.size else None,
                "std": float(v.std(ddof=1)) if v.size >= 2 else None,
            }
        return out

    def to_csv(self, path=None):
        """Per-(label, seed) rows as CSV text; also written to ``path`` if given."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", "seed", self.value_name, "status"])
        for r in self.rows:
            w.writerow([r["label"], r["seed"], "" if r["value"] is None else repr(r["value"]), r["status"]])
        return _emit(buf.getvalue(), path)

    def summary_csv(self, path=None):
        """One row per label: ``n, mean, std, median, failed``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", "n", "mean", "std", "median", "failed"])
        for label, a in self.aggregate().items():
            w.writerow([label, a["n"], _fmt(a["mean"]), _fmt(a["std"]), _fmt(a["median"]), a["failed"]])
        return _emit(buf.getvalue(), path)

    def format(self, title="Experiment"):
        """Text table: one row per label with mean and standard deviation."""
        name = self.value_name
        agg = self.aggregate()
        w_label = max([12, len(title)] + [len(k) for k in agg])
        w_value = max(14, len(name))
        lines = [f"| {title:<{w_label}} | {name:>{w_value}} | {'Std Deviation':>13} |",
                 f"|{'-' * (w_label + 2)}|{'-' * (w_value + 2)}|{'-' * 15}|"]
        for label, a in agg.items():
            mean = "failed" if a["mean"] is None else f"{a['mean']:.4f}"
            std = "n/a" if a["std"] is None else f"{a['std']:.4f}"
            lines.append(f"| {label:<{w_label}} | {mean:>{w_value}} | {std:>13} |")
        return "\n".join(lines)


def _fmt(x):
    return "" if x is None else repr(x)


def _emit(text, path):
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def run_suite(spec: ExperimentSpec, strategies=None, seeds=None, out_dir=None,
              value_name="test_mse_main", overrides=None):
    """Every (strategy, seed) cell of ``spec``.

    ``overrides`` maps a strategy to ``{"params": ..., "learning_rate": ...}``
    replacing the values in ``spec``.  Returns ``(ResultTable, list[RunResult])``.
    """
    strategies = list(strategies or spec.strategies)
    seeds = list(seeds or spec.seeds)
    overrides = overrides or {}
    table = ResultTable(value_name)
    results = []
    for seed in seeds:
        for strategy in strategies:
            ov = overrides.get(strategy, {})
            res = run_single(spec, strategy, seed, ov.get("params"), ov.get("learning_rate"), out_dir=out_dir)
            log.info("%s %s seed=%s -> %s", spec.name, strategy, seed, res.summary.get("status"))
            table.add(res.summary)
            results.append(res)
    _write_table(table, out_dir, spec.name, "results")
    return table, results


def _write_table(table, out_dir, name, stem):
    if out_dir is None:
        return
    path = os.path.join(out_dir, name)
    os.makedirs(path, exist_ok=True)
    table.to_csv(os.path.join(path, f"{stem}.csv"))
    table.summary_csv(os.path.join(path, f"{stem}_summary.csv"))
    with open(os.path.join(path, f"{stem}.txt"), "w") as fh:
        fh.write(table.format(name) + "\n")


def run_exp1(seeds=(0, 1, 2, 3, 4), out_dir=None, **kw):
    spec = exp1_spec(**kw)
    return run_suite(spec, seeds=seeds, out_dir=out_dir)[0]


def run_exp2(seeds=(0, 1, 2, 3, 4), out_dir=None, **kw):
    spec = exp2_spec(**kw)
    return run_suite(spec, seeds=seeds, out_dir=out_dir)[0]


def ablation_configs(base: ExperimentSpec) -> dict:
    """Full HydaLearn parameter dict per arm; each arm flips one field of ExpImp-0."""
    base_params = base.params_for("hydalearn")
    base_params.update({"normalize_fake_grads": True, "metric_dataset": "validation", "downscale_W": True})
    return {arm: {**base_params, **flip} for arm, flip in ABLATION_ARMS.items()}


def run_ablation(base: ExperimentSpec, seeds=None, out_dir=None, value_name="test_mse_main"):
    """The four ExpImp arms over identical seeds.  Returns ``(ResultTable, list[RunResult])``."""
    seeds = list(seeds or base.seeds)
    table = ResultTable(value_name)
    results = []
    configs = ablation_configs(base)
    for seed in seeds:
        for arm, params in configs.items():
            res = run_single(base, "hydalearn", seed, params, label=arm, out_dir=out_dir)
            table.add(res.summary)
            results.append(res)
    _write_table(table, out_dir, base.name, "ablation")
    return table, results


def grid_search(spec: ExperimentSpec, strategy, grid: dict, seeds=None, out_dir=None):
    """Exhaustive search over ``grid`` (``{param: [values]}``, ``learning_rate`` allowed).

    Each configuration is scored by its early-stopping validation metric,
    averaged over ``seeds``.  Returns ``(best_config, rows)``; ``rows`` holds one
    dict per configuration in grid order.
    """
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ConfigError("grid must be non-empty along every axis")
    seeds = list(seeds or spec.seeds[:1])
    keys = list(grid)
    higher = metric_for(load_splits(spec, seeds[0]), spec) == "auc"
    rows = []
    for values in itertools.product(*(grid[k] for k in keys)):
        cfg = dict(zip(keys, values))
        lr = cfg.get("learning_rate", spec.lr_for(strategy))
        params = spec.params_for(strategy)
        params.update({k: v for k, v in cfg.items() if k != "learning_rate"})
        label = strategy + "[" + ",".join(f"{k}={v}" for k, v in cfg.items()) + "]"
        vals, tests = [], []
        for seed in seeds:
            s = run_single(spec, strategy, seed, params, lr, label=label, out_dir=out_dir).summary
            if s.get("status") == "ok":
                vals.append(s["best_val"])
                tests.append(s.get("test_mse_main"))
        rows.append({"config": cfg, "params": params, "learning_rate": lr, "label": label,
                     "val_metric": float(np.mean(vals)) if len(vals) == len(seeds) else None,
                     "n_ok": len(vals)})
    scored = [r for r in rows if r["val_metric"] is not None]
    if not scored:
        raise StrategyError(f"every grid configuration failed for {strategy}")
    best = (max if higher else min)(scored, key=lambda r: r["val_metric"])
    if out_dir is not None:
        path = os.path.join(out_dir, spec.name)
        os.makedirs(path, exist_ok=True)
        with open(os.path.join(path, f"grid_{strategy}.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(keys + ["val_metric", "n_ok"])
            for r in rows:
                w.writerow([r["config"][k] for k in keys] + ["" if r["val_metric"] is None else repr(r["val_metric"]),
                                                             r["n_ok"]])
    return best, rows
