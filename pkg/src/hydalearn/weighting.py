"""Task-weighting strategies for the shared-encoder update.

Every strategy turns the main- and auxiliary-task gradients of the shared
parameters into one combined gradient per step.  The pure ``*_step`` functions
carry the arithmetic; the ``Strategy`` subclasses hold per-run state and are
what the trainer drives.

HydaLearn measures, once per mini-batch, how much a provisional ("fake") step
along each task's shared gradient changes the main-task metric on a held-out
set, then sets ``w_m / w_a = (gain_main / gain_aux) ** beta`` subject to
``w_m + w_a = W``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DegenerateMetricError, StrategyError
from .nn import Metric, metric_value
from .tensor_core import Rng, l2_norm

STRATEGIES = ("hydalearn", "static", "stl", "gcosim", "olaux", "gradnorm")


@dataclass
class WeightState:
    w_m: float
    w_a: float
    total: float
    mu: float = float("nan")
    step: int = 0
    effective_total: Optional[float] = None

    def __post_init__(self):
        if self.effective_total is None:
            self.effective_total = self.total

    @classmethod
    def balanced(cls, total, mu=float("nan")):
        return cls(total / 2.0, total / 2.0, total, mu)


@dataclass
class DeltaPair:
    delta_mm: float
    delta_ma: float
    mu_mm: float
    mu_ma: float


@dataclass
class HydaConfig:
    beta: float = 6.0
    normalize_fake_grads: bool = True
    metric_dataset: str = "validation"
    downscale_W: bool = True
    delta_floor: float = 1e-12
    # delta = metric_new - metric_old with no orientation (reproduces the algorithm text verbatim)
    literal_sign: bool = False
    # rows of the metric set used per step; None means the whole set
    metric_subsample: Optional[int] = None
    # both gains negative: "literal" keeps w_m/w_a = (|d_mm|/|d_ma|)**beta,
    # "inverse" uses (|d_ma|/|d_mm|)**beta so the less harmful task dominates
    negative_gains: str = "literal"
    # "algorithm": gains are measured against the anchor carried over from the
    # previous step; "current": against a fresh evaluation (one extra metric pass)
    anchor: str = "algorithm"

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError(f"beta must be > 0, got {self.beta}")
        if not self.delta_floor > 0:
            raise ConfigError(f"delta_floor must be > 0, got {self.delta_floor}")
        if self.negative_gains not in ("literal", "inverse"):
            raise ConfigError(f"negative_gains must be 'literal' or 'inverse', got {self.negative_gains!r}")
        if self.anchor not in ("algorithm", "current"):
            raise ConfigError(f"anchor must be 'algorithm' or 'current', got {self.anchor!r}")
        if self.metric_dataset not in ("validation", "training"):
            raise ConfigError(f"metric_dataset must be 'validation' or 'training', got {self.metric_dataset!r}")


def evaluate_metric(metric, pred, target) -> float:
    """Value of ``metric``; accepts a :class:`Metric` or any callable carrying a ``sign``."""
    if isinstance(metric, Metric):
        return metric_value(metric, pred, target)
    return float(metric(pred, target))


def weights_from_gains(delta_mm, delta_ma, beta, total, floor=1e-12, downscale=True, negative_gains="literal"):
    """Task weights from oriented gains.

    Returns ``(w_m, w_a, effective_total)`` with ``w_m / w_a`` equal to the
    clamped gain ratio raised to ``beta`` and ``w_m + w_a == effective_total``.

    * both gains negative: the ratio of their magnitudes is used (inverted
      when ``negative_gains="inverse"``) and, with ``downscale``, the budget
      shrinks to ``W / (1 + exp(-w_a / w_m))``;
    * otherwise each gain is clamped below at ``floor``, so a harmful task's
      weight goes to (almost) zero and two zero gains give an even split.
    """
    both_negative = delta_mm < 0 and delta_ma < 0
    if both_negative:
        num, den = -delta_mm, -delta_ma
        if negative_gains == "inverse":
            num, den = den, num
    else:
        num, den = delta_mm, delta_ma
    num = max(num, floor)
    den = max(den, floor)
    log_ratio = beta * (math.log(num) - math.log(den))
    frac_m = float(expit(log_ratio))
    frac_a = float(expit(-log_ratio))
    effective = total
    if both_negative and downscale:
        with np.errstate(over="ignore"):
            aux_over_main = float(np.exp(-log_ratio))
        effective = total * float(expit(aux_over_main))
    return effective * frac_m, effective * frac_a, effective


def combine(w_m, g_main, w_a, g_aux):
    return w_m * g_main + w_a * g_aux


def fake_update_metric(net, grad, lr, normalize, evaluate):
    """Metric after a provisional step on the shared parameters; the net is restored afterwards."""
    snap = net.snapshot(("s",))
    step = grad
    if normalize:
        norm = l2_norm(grad)
        if norm > 0:
            step = grad / norm
    net.apply_update("s", step, lr)
    try:
        return evaluate(net)
    finally:
        net.restore(snap)


def hydalearn_step(net, metric_set, state: WeightState, cfg: HydaConfig, *, metric, lr,
                   grad_main, grad_aux):
    """One weight computation and the resulting combined shared gradient.

    ``metric_set`` is ``(inputs, targets_main)``.  The heads must already have
    been updated for this step; ``grad_main`` and ``grad_aux`` are the shared
    gradients taken before that head update.

    Returns ``(new_state, deltas, combined_grad)``.
    """
    inputs, targets = metric_set
    sign = 1.0 if cfg.literal_sign else metric.sign

    def evaluate(n):
        n.counters["metric_eval"] += 1
        try:
            return evaluate_metric(metric, n.predict(inputs, "main"), targets)
        except DegenerateMetricError as exc:
            raise StrategyError(f"main-task metric undefined on the {cfg.metric_dataset} set: {exc}") from exc

    if cfg.anchor == "current":
        state = replace(state, mu=evaluate(net))
    mu_mm = fake_update_metric(net, grad_main, lr, cfg.normalize_fake_grads, evaluate)
    mu_ma = fake_update_metric(net, grad_aux, lr, cfg.normalize_fake_grads, evaluate)
    delta_mm = sign * (mu_mm - state.mu)
    delta_ma = sign * (mu_ma - state.mu)
    if not (math.isfinite(delta_mm) and math.isfinite(delta_ma)):
        raise StrategyError(f"non-finite gain (delta_mm={delta_mm}, delta_ma={delta_ma}, mu={state.mu})")
    w_m, w_a, effective = weights_from_gains(
        delta_mm, delta_ma, cfg.beta, state.total, cfg.delta_floor, cfg.downscale_W, cfg.negative_gains
    )
    mu_next = mu_mm if delta_mm >= delta_ma else mu_ma
    new_state = replace(state, w_m=w_m, w_a=w_a, effective_total=effective, mu=mu_next, step=state.step + 1)
    return new_state, DeltaPair(delta_mm, delta_ma, mu_mm, mu_ma), combine(w_m, grad_main, w_a, grad_aux)


def static_weights(total, ratio):
    """``(w_m, w_a)`` with ``w_m / w_a == ratio`` and ``w_m + w_a == total``."""
    if not ratio > 0:
        raise ConfigError(f"static ratio must be > 0, got {ratio}")
    w_a = total / (1.0 + ratio)
    return total - w_a, w_a


def static_step(state: WeightState, grads_main, grads_aux, ratio):
    w_m, w_a = static_weights(state.total, ratio)
    return combine(w_m, grads_main, w_a, grads_aux)


def stl_step(grads_main, total=2.0):
    return total * grads_main


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between ``a`` and ``b``; 0 if either is the zero vector."""
    na, nb = l2_norm(a), l2_norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a.ravel(), b.ravel()) / (na * nb))


def gcosim_step(grads_main, grads_aux):
    """Main gradient plus the auxiliary one when their cosine is strictly positive.

    Returns ``(combined, cosine)``.
    """
    cos = cosine_similarity(grads_main, grads_aux)
    if cos > 0.0:
        return grads_main + grads_aux, cos
    return grads_main.copy(), cos


def olaux_step(history, grads_main, grads_aux, state: WeightState, *, period=5, weight_lr=1.0, lr=0.01):
    """Online auxiliary weighting from accumulated gradient alignment.

    ``history`` is a deque of past auxiliary shared gradients.  The combined
    gradient uses the current weights; afterwards the current auxiliary
    gradient joins the history, and every ``period`` steps

        w_a <- max(0, w_a + weight_lr * lr * sum_j <g_main(now), g_aux(j)>)

    over the previous ``period`` auxiliary gradients, after which the history
    is cleared.  ``w_m`` stays at ``W / 2``.
    """
    combined = combine(state.w_m, grads_main, state.w_a, grads_aux)
    step = state.step + 1
    w_a = state.w_a
    if step % period == 0 and history:
        alignment = sum(float(np.dot(grads_main, g)) for g in history)
        w_a = max(0.0, w_a + weight_lr * lr * alignment)
        history.clear()
    history.append(np.array(grads_aux, copy=True))
    return replace(state, w_a=w_a, step=step, effective_total=state.w_m + w_a), combined


def gradnorm_step(state: WeightState, losses_now, losses_initial, layer_grad_norms, *,
                  alpha_gn=1.5, weight_lr=0.025, grads_main=None, grads_aux=None, loss_floor=1e-12):
    """One GradNorm update of ``(w_m, w_a)``.

    ``layer_grad_norms`` are the unweighted per-task gradient norms at the last
    shared layer.  The combined gradient (if gradients are given) uses the
    weights before the update, as in the original method.

    Returns ``(new_state, combined_or_None)``.
    """
    w = np.array([state.w_m, state.w_a])
    norms = np.asarray(layer_grad_norms, dtype=np.float64)
    initial = np.maximum(np.asarray(losses_initial, dtype=np.float64), loss_floor)
    ratios = np.asarray(losses_now, dtype=np.float64) / initial
    inverse_rate = ratios / ratios.mean() if ratios.mean() > 0 else np.ones_like(ratios)
    weighted = w * norms
    target = weighted.mean() * inverse_rate ** alpha_gn
    # d/dw_i sum_j |w_j ||g_j|| - target_j|, targets held constant
    grad_w = np.sign(weighted - target) * norms
    w = np.maximum(w - weight_lr * grad_w, 1e-8)
    w = w * (state.total / w.sum())
    combined = None
    if grads_main is not None:
        combined = combine(state.w_m, grads_main, state.w_a, grads_aux)
    new_state = replace(state, w_m=float(w[0]), w_a=float(w[1]), step=state.step + 1,
                        effective_total=state.total)
    return new_state, combined


# --------------------------------------------------------------------------
# stateful strategies


@dataclass
class StepInputs:
    net: object
    step: int
    lr: float
    loss_main: float
    loss_aux: Optional[float]
    grad_main: object  # GradientBundle
    grad_aux: object


class Strategy:
    """Base class; subclasses set ``name`` and implement :meth:`combine`."""

    name = "base"
    uses_aux = True
    params: dict = {}

    def __init__(self, total_weight=2.0):
        self.total = float(total_weight)
        self.state = WeightState.balanced(self.total)
        self.last = {}

    def start(self, net, context):
        """Called once before the first step; ``context`` is a :class:`StrategyContext`."""

    def combine(self, inputs: StepInputs) -> np.ndarray:
        raise NotImplementedError

    def record(self) -> dict:
        rec = {
            "w_m": self.state.w_m,
            "w_a": self.state.w_a,
            "W_effective": self.state.effective_total,
        }
        rec.update(self.last)
        return rec

    def config(self) -> dict:
        return {"name": self.name, **self.params}


@dataclass
class StrategyContext:
    metric: object
    lr: float
    metric_sets: dict = field(default_factory=dict)
    rng: Optional[Rng] = None


class StlStrategy(Strategy):
    name = "stl"
    uses_aux = False

    def __init__(self, total_weight=2.0):
        super().__init__(total_weight)
        self.state = WeightState(self.total, 0.0, self.total)

    def combine(self, inputs):
        return stl_step(inputs.grad_main.grad_s, self.total)


class StaticStrategy(Strategy):
    name = "static"

    def __init__(self, total_weight=2.0, ratio=1.5):
        super().__init__(total_weight)
        self.ratio = float(ratio)
        self.params = {"ratio": self.ratio}
        w_m, w_a = static_weights(self.total, self.ratio)
        self.state = WeightState(w_m, w_a, self.total)

    def combine(self, inputs):
        return static_step(self.state, inputs.grad_main.grad_s, inputs.grad_aux.grad_s, self.ratio)


class GcosimStrategy(Strategy):
    name = "gcosim"

    def __init__(self, total_weight=2.0):
        super().__init__(total_weight)
        self.state = WeightState(1.0, 1.0, self.total, effective_total=2.0)

    def combine(self, inputs):
        combined, cos = gcosim_step(inputs.grad_main.grad_s, inputs.grad_aux.grad_s)
        w_a = 1.0 if cos > 0.0 else 0.0
        self.state = replace(self.state, w_a=w_a, effective_total=1.0 + w_a, step=self.state.step + 1)
        self.last = {"cosine": cos}
        return combined


class OlauxStrategy(Strategy):
    name = "olaux"

    def __init__(self, total_weight=2.0, period=5, weight_lr=1.0):
        super().__init__(total_weight)
        if int(period) < 1:
            raise ConfigError("olaux period must be >= 1")
        self.period = int(period)
        self.weight_lr = float(weight_lr)
        self.params = {"period": self.period, "weight_lr": self.weight_lr}
        self.history = deque(maxlen=self.period)

    def combine(self, inputs):
        self.state, combined = olaux_step(
            self.history, inputs.grad_main.grad_s, inputs.grad_aux.grad_s, self.state,
            period=self.period, weight_lr=self.weight_lr, lr=inputs.lr,
        )
        return combined


class GradNormStrategy(Strategy):
    name = "gradnorm"

    def __init__(self, total_weight=2.0, alpha_gn=1.5, weight_lr=0.025):
        super().__init__(total_weight)
        self.alpha_gn = float(alpha_gn)
        self.weight_lr = float(weight_lr)
        self.params = {"alpha_gn": self.alpha_gn, "weight_lr": self.weight_lr}
        self.initial_losses = None
        self._last_layer = None

    def start(self, net, context):
        self._last_layer = net.encoder.slices[-1][0]

    def combine(self, inputs):
        losses = (inputs.loss_main, inputs.loss_aux)
        if self.initial_losses is None:
            self.initial_losses = losses
        g_m = inputs.grad_main.grad_s
        g_a = inputs.grad_aux.grad_s
        norms = (l2_norm(g_m[self._last_layer]), l2_norm(g_a[self._last_layer]))
        used = (self.state.w_m, self.state.w_a)
        self.state, combined = gradnorm_step(
            self.state, losses, self.initial_losses, norms,
            alpha_gn=self.alpha_gn, weight_lr=self.weight_lr, grads_main=g_m, grads_aux=g_a,
        )
        self.last = {"w_m_used": used[0], "w_a_used": used[1]}
        return combined

    def record(self):
        # log the weights that shaped this step's update, not next step's
        return {"w_m": self.last["w_m_used"], "w_a": self.last["w_a_used"],
                "W_effective": self.total, "w_m_next": self.state.w_m, "w_a_next": self.state.w_a}


class HydaLearnStrategy(Strategy):
    name = "hydalearn"

    def __init__(self, total_weight=2.0, **cfg):
        super().__init__(total_weight)
        self.cfg = HydaConfig(**cfg)
        self.params = asdict(self.cfg)
        self.metric = None
        self.lr = None
        self._inputs = self._targets = None
        self._rng = None

    def start(self, net, context):
        self.metric = context.metric
        self.lr = context.lr
        key = self.cfg.metric_dataset
        if key not in context.metric_sets:
            raise ConfigError(f"HydaLearn needs a {key} set for its metric")
        self._inputs, self._targets = context.metric_sets[key]
        self._rng = (context.rng or Rng(0)).child("metric_subsample")
        inputs, targets = self._metric_set(0)
        net.counters["metric_eval"] += 1
        mu0 = evaluate_metric(self.metric, net.predict(inputs, "main"), targets)
        self.state = WeightState.balanced(self.total, mu0)

    def _metric_set(self, step):
        k = self.cfg.metric_subsample
        n = self._inputs.shape[0]
        if k is None or k >= n:
            return self._inputs, self._targets
        idx = self._rng.child(step).choice(n, k)
        return self._inputs[idx], self._targets[idx]

    def combine(self, inputs):
        metric_set = self._metric_set(inputs.step)
        self.state, deltas, combined = hydalearn_step(
            inputs.net, metric_set, self.state, self.cfg, metric=self.metric, lr=inputs.lr,
            grad_main=inputs.grad_main.grad_s, grad_aux=inputs.grad_aux.grad_s,
        )
        self.last = {"delta_mm": deltas.delta_mm, "delta_ma": deltas.delta_ma, "mu": self.state.mu,
                     "mu_mm": deltas.mu_mm, "mu_ma": deltas.mu_ma,
                     "alignment_ratio": self._alignment(deltas, inputs)}
        return combined

    def _alignment(self, deltas, inputs):
        """Measured ``<grad M, g_a> / <grad M, g_m>``, recovered from the two gains at no extra cost.

        With normalised fake steps each gain is about ``lr * <grad M, g / |g|>``,
        so the norms are multiplied back in.  Diagnostic only.
        """
        if deltas.delta_mm == 0.0:
            return None
        ratio = deltas.delta_ma / deltas.delta_mm
        if self.cfg.normalize_fake_grads:
            n_m, n_a = l2_norm(inputs.grad_main.grad_s), l2_norm(inputs.grad_aux.grad_s)
            if n_m == 0.0:
                return None
            ratio *= n_a / n_m
        return ratio


def make_strategy(name, total_weight=2.0, **params) -> Strategy:
    """Instantiate a strategy by name; unknown parameters raise :class:`ConfigError`."""
    classes = {
        "hydalearn": HydaLearnStrategy,
        "static": StaticStrategy,
        "stl": StlStrategy,
        "gcosim": GcosimStrategy,
        "olaux": OlauxStrategy,
        "gradnorm": GradNormStrategy,
    }
    if name not in classes:
        raise ConfigError(f"unknown strategy {name!r}; choose from {', '.join(STRATEGIES)}")
    try:
        return classes[name](total_weight, **params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for strategy {name!r}: {exc}") from None


STRATEGY_PARAMS = {
    "hydalearn": set(HydaConfig.__dataclass_fields__),
    "static": {"ratio"},
    "stl": set(),
    "gcosim": set(),
    "olaux": {"period", "weight_lr"},
    "gradnorm": {"alpha_gn", "weight_lr"},
}
