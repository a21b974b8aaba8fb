"""Training loop with per-step task weighting and validation early stopping.

Each step runs, in order:

1. sample a mini-batch;
2. compute main and auxiliary losses and gradients at the current parameters;
3. update each head with its own (unweighted) task gradient;
4. ask the weighting strategy for the combined shared gradient;
5. update the shared encoder with it.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .data import Splits, SplitBatcher
from .errors import ConfigError, DegenerateMetricError, TrainingDiverged
from .multitask import MultiTaskNet, ParamSnapshot
from .nn import Metric
from .tensor_core import Rng
from .weighting import STRATEGY_PARAMS, StepInputs, Strategy, StrategyContext, evaluate_metric, make_strategy

STEP_KEYS = ("step", "epoch", "w_m", "w_a", "W_effective", "delta_mm", "delta_ma", "loss_m", "loss_a", "mu")


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    total_weight: float = 2.0
    max_epochs: int = 20
    # overrides max_epochs when set
    max_steps: Optional[int] = None
    # in steps; None means once per epoch
    eval_every: Optional[int] = None
    early_stop_patience: int = 10
    batch_size: int = 16
    seed: int = 0
    strategy: str = "hydalearn"
    strategy_params: dict = field(default_factory=dict)
    metric: str = "mae"
    # reproduce the head-update line that bases the aux head on the main head's parameters
    literal_aux_head_base: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not self.total_weight > 0:
            raise ConfigError(f"total_weight must be > 0, got {self.total_weight}")
        if self.early_stop_patience < 1:
            raise ConfigError(f"early_stop_patience must be >= 1, got {self.early_stop_patience}")
        if self.max_epochs < 1 and self.max_steps is None:
            raise ConfigError("max_epochs must be >= 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if self.eval_every is not None and self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.strategy not in STRATEGY_PARAMS:
            raise ConfigError(f"strategy: unknown value {self.strategy!r}")
        unknown = set(self.strategy_params) - STRATEGY_PARAMS[self.strategy]
        if unknown:
            raise ConfigError(f"strategy_params: {sorted(unknown)} not valid for {self.strategy!r}")
        Metric(self.metric)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training field(s): {sorted(unknown)}")
        return cls(**d)


@dataclass
class RunLog:
    """Append-only record of one training run.

    Serialised as JSON lines: one ``{"type": "step", ...}`` object per step
    (keys ``step, epoch, w_m, w_a, W_effective, delta_mm, delta_ma, loss_m,
    loss_a, mu`` plus strategy extras), one ``{"type": "eval", "step",
    "val_metric_main", "val_metric_aux"}`` per evaluation, and a closing
    ``{"type": "final", ...}`` summary.
    """

    steps: list = field(default_factory=list)
    evals: list = field(default_factory=list)
    final: dict = field(default_factory=dict)

    def lines(self):
        for rec in self.steps:
            yield json.dumps({"type": "step", **rec}, sort_keys=True)
        for rec in self.evals:
            yield json.dumps({"type": "eval", **rec}, sort_keys=True)
        yield json.dumps({"type": "final", **self.final}, sort_keys=True)

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line + "\n")

    @classmethod
    def read_jsonl(cls, path) -> "RunLog":
        log = cls()
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                kind = rec.pop("type")
                if kind == "step":
                    log.steps.append(rec)
                elif kind == "eval":
                    log.evals.append(rec)
                else:
                    log.final = rec
        return log

    def column(self, key):
        return np.array([np.nan if r.get(key) is None else r[key] for r in self.steps], dtype=np.float64)


@dataclass
class StopState:
    metric: Metric
    patience: int
    best_val: float = float("nan")
    best_step: int = -1
    patience_left: int = 0
    best_params: Optional[ParamSnapshot] = None

    def __post_init__(self):
        self.best_val = self.metric.worst()
        self.patience_left = self.patience


def early_stop_update(stop: StopState, val, step, net: MultiTaskNet) -> str:
    """Record a validation value; returns ``"continue"`` or ``"stop"``.

    A strict improvement snapshots the whole net and resets patience; anything
    else spends one unit of patience.
    """
    if stop.metric.gain(val, stop.best_val) > 0:
        stop.best_val = float(val)
        stop.best_step = step
        stop.best_params = net.snapshot()
        stop.patience_left = stop.patience
        return "continue"
    stop.patience_left -= 1
    return "stop" if stop.patience_left <= 0 else "continue"


def evaluate(net: MultiTaskNet, dataset, metric, task="main") -> float:
    """Metric of one task's predictions over a whole split; parameters are not touched."""
    if len(dataset) == 0:
        raise ConfigError("cannot evaluate on an empty split")
    targets = dataset.targets_main if task == "main" else dataset.targets_aux
    return evaluate_metric(metric, net.predict(dataset.inputs, task), targets)


def aux_metric_for(kind) -> Metric:
    return Metric("auc") if kind == "classification" else Metric("mae")


def _finite(x):
    return x is None or math.isfinite(x)


def train(net: MultiTaskNet, splits: Splits, cfg: TrainConfig, strategy: Optional[Strategy] = None,
          metric=None, on_phase: Optional[Callable] = None):
    """Train ``net`` in place and return ``(net, RunLog)`` with the best validation snapshot restored.

    ``metric`` overrides ``cfg.metric`` (any object accepted by
    :func:`~hydalearn.weighting.evaluate_metric`).  ``on_phase(name, net)`` is
    called after the head update (``"heads"``) and after the shared update
    (``"shared"``) of every step.

    Raises :class:`TrainingDiverged` on a non-finite loss; the partial log is
    attached as ``exc.log``.
    """
    metric = metric if metric is not None else Metric(cfg.metric)
    aux_metric = aux_metric_for(splits.train.task_kinds[1])
    if strategy is None:
        strategy = make_strategy(cfg.strategy, cfg.total_weight, **cfg.strategy_params)
    lr = cfg.learning_rate
    train_set, val_set = splits.train, splits.val
    root = Rng(cfg.seed)
    batcher = SplitBatcher(len(train_set), cfg.batch_size, seed=cfg.seed)
    per_epoch = batcher.batches_per_epoch
    max_steps = cfg.max_steps if cfg.max_steps is not None else cfg.max_epochs * per_epoch
    eval_every = cfg.eval_every or per_epoch
    if cfg.literal_aux_head_base and net.head_main.n_params != net.head_aux.n_params:
        raise ConfigError("literal_aux_head_base needs identically shaped heads")

    log = RunLog()
    stop = StopState(metric, cfg.early_stop_patience)

    def run_eval(step):
        val = evaluate(net, val_set, metric)
        try:
            val_aux = evaluate(net, val_set, aux_metric, "aux")
        except DegenerateMetricError:
            val_aux = None
        log.evals.append({"step": step, "val_metric_main": val, "val_metric_aux": val_aux})
        return early_stop_update(stop, val, step, net)

    context = StrategyContext(
        metric=metric, lr=lr,
        metric_sets={"validation": (val_set.inputs, val_set.targets_main),
                     "training": (train_set.inputs, train_set.targets_main)},
        rng=root.child("strategy"),
    )
    strategy.start(net, context)
    run_eval(0)

    step = 0
    while step < max_steps:
        step += 1
        batch = train_set.batch(batcher.next_indices())
        epoch = batcher.epoch
        loss_m, grad_main = net.task_gradients(batch, "main")
        loss_a, grad_aux = (net.task_gradients(batch, "aux") if strategy.uses_aux else (None, None))
        if not (_finite(loss_m) and _finite(loss_a)):
            record = {"step": step, "epoch": epoch, "loss_m": loss_m, "loss_a": loss_a, "diverged": True}
            log.steps.append(record)
            log.final = {"status": "diverged", "stopped_step": step}
            exc = TrainingDiverged(f"non-finite loss at step {step} (main={loss_m}, aux={loss_a})", record)
            exc.log = log
            raise exc

        main_before = net.head_main.params.copy() if cfg.literal_aux_head_base else None
        net.apply_update("m", grad_main.grad_m, lr)
        if strategy.uses_aux:
            if cfg.literal_aux_head_base:
                net.head_aux.set_params(main_before - lr * grad_aux.grad_a)
            else:
                net.apply_update("a", grad_aux.grad_a, lr)
        if on_phase:
            on_phase("heads", net)

        combined = strategy.combine(StepInputs(net, step, lr, loss_m, loss_a, grad_main, grad_aux))
        net.apply_update("s", combined, lr)
        if on_phase:
            on_phase("shared", net)

        record = {k: None for k in STEP_KEYS}
        record.update(strategy.record())
        record.update({"step": step, "epoch": epoch, "loss_m": loss_m, "loss_a": loss_a})
        log.steps.append(record)

        if step % eval_every == 0 or step == max_steps:
            if run_eval(step) == "stop":
                break

    if stop.best_params is not None:
        net.restore(stop.best_params)
    test = splits.test
    regression = test.task_kinds[0] == "regression"
    log.final = {
        "status": "ok",
        "stopped_step": step,
        "best_step": stop.best_step,
        "best_val": stop.best_val,
        "steps_per_epoch": per_epoch,
        "test_metric_main": evaluate(net, test, metric) if len(test) else None,
        "test_mse_main": evaluate(net, test, Metric("mse")) if len(test) and regression else None,
    }
    return net, log
