"""Dense feed-forward networks with hand-written backpropagation.

Parameters of an :class:`Mlp` live in one flat float64 vector.  The layout is
fixed: for each layer in order, the weight matrix (``in x out``, row-major)
followed by the bias (``out``).  :class:`DenseLayer` objects hold views into
that vector, so an update to ``Mlp.params`` is immediately visible to forward
passes and snapshotting a network is a single array copy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .errors import ContractError, DegenerateMetricError, DomainError, ShapeError
from .tensor_core import Rng, as_matrix

ACTIVATIONS = ("tanh", "relu", "sigmoid", "identity")
BCE_CLAMP = 1e-7


def _activate(kind, z):
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return expit(z)
    return z


def _activation_grad(kind, z, a):
    """d(activation)/dz evaluated elementwise, using the cached output where cheaper."""
    if kind == "tanh":
        return 1.0 - a * a
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    if kind == "sigmoid":
        return a * (1.0 - a)
    return None


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str

    @property
    def in_dim(self):
        return self.weights.shape[0]

    @property
    def out_dim(self):
        return self.weights.shape[1]


@dataclass
class ForwardCache:
    owner: int
    version: int
    inputs: list
    pre: list
    post: list


def xavier_init(rng: Rng, shape) -> np.ndarray:
    """Glorot-uniform matrix: entries in [-sqrt(6/(in+out)), sqrt(6/(in+out)))."""
    fan_in, fan_out = shape
    if fan_in <= 0 or fan_out <= 0:
        raise DomainError(f"xavier_init needs positive dims, got {shape}")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return (2.0 * rng.uniform((fan_in, fan_out)) - 1.0) * bound


class Mlp:
    """Stack of dense layers sharing one flat parameter vector."""

    def __init__(self, sizes: Sequence[int], activations: Sequence[str], params=None):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2:
            raise ShapeError("an Mlp needs at least an input and an output size")
        if len(activations) != len(sizes) - 1:
            raise ShapeError(f"{len(sizes) - 1} layers but {len(activations)} activations")
        for act in activations:
            if act not in ACTIVATIONS:
                raise DomainError(f"unknown activation {act!r}")
        self.sizes = sizes
        self.activations = list(activations)
        self.slices = []
        offset = 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = slice(offset, offset + fan_in * fan_out)
            offset = w.stop
            b = slice(offset, offset + fan_out)
            offset = b.stop
            self.slices.append((w, b))
        self.n_params = offset
        if params is None:
            self.params = np.zeros(offset)
        else:
            params = np.array(params, dtype=np.float64).ravel()
            if params.size != offset:
                raise ShapeError(f"expected {offset} parameters, got {params.size}")
            self.params = params
        self.version = 0
        self._bind()

    def _bind(self):
        self.layers = []
        for (w, b), fan_in, fan_out, act in zip(self.slices, self.sizes[:-1], self.sizes[1:], self.activations):
            self.layers.append(
                DenseLayer(self.params[w].reshape(fan_in, fan_out), self.params[b], act)
            )

    @classmethod
    def initialized(cls, sizes, activations, rng: Rng) -> "Mlp":
        """Xavier-uniform weights, zero biases; layer ``i`` draws from ``rng.child(i)``."""
        net = cls(sizes, activations)
        for i, layer in enumerate(net.layers):
            layer.weights[...] = xavier_init(rng.child(i), layer.weights.shape)
        return net

    @property
    def in_dim(self):
        return self.sizes[0]

    @property
    def out_dim(self):
        return self.sizes[-1]

    def set_params(self, values):
        values = np.asarray(values, dtype=np.float64).ravel()
        if values.size != self.n_params:
            raise ShapeError(f"expected {self.n_params} parameters, got {values.size}")
        self.params[...] = values
        self.version += 1

    def add_(self, delta, scale=1.0):
        """In-place ``params += scale * delta``."""
        delta = np.asarray(delta, dtype=np.float64).ravel()
        if delta.size != self.n_params:
            raise ShapeError(f"expected {self.n_params} parameters, got {delta.size}")
        if scale == 1.0:
            self.params += delta
        else:
            self.params += scale * delta
        self.version += 1

    def forward(self, batch, keep_cache=True):
        x = as_matrix(batch)
        if x.shape[1] != self.in_dim:
            raise ShapeError(f"batch has {x.shape[1]} columns, network expects {self.in_dim}")
        inputs, pre, post = [], [], []
        h = x
        for layer in self.layers:
            z = h @ layer.weights
            z += layer.bias
            a = _activate(layer.activation, z)
            if keep_cache:
                inputs.append(h)
                pre.append(z)
                post.append(a)
            h = a
        cache = ForwardCache(id(self), self.version, inputs, pre, post) if keep_cache else None
        return h, cache

    def predict(self, batch):
        return self.forward(batch, keep_cache=False)[0]

    def backward(self, cache: ForwardCache, upstream, preactivation=False):
        """Gradients for a forward pass recorded in ``cache``.

        ``upstream`` is dLoss/d(output).  With ``preactivation=True`` it is taken
        to be dLoss/dz of the last layer instead, which lets fused losses such as
        sigmoid + BCE skip the activation derivative.

        Returns ``(param_grad, input_grad)`` where ``param_grad`` follows the flat
        parameter layout.
        """
        if cache is None or cache.owner != id(self) or cache.version != self.version:
            raise ContractError("forward cache does not belong to the current parameters")
        g = as_matrix(upstream)
        if g.shape != cache.post[-1].shape:
            raise ShapeError(f"upstream gradient {g.shape} vs output {cache.post[-1].shape}")
        grad = np.empty(self.n_params)
        last = len(self.layers) - 1
        for i in range(last, -1, -1):
            layer = self.layers[i]
            if not (preactivation and i == last):
                d = _activation_grad(layer.activation, cache.pre[i], cache.post[i])
                if d is not None:
                    g = g * d
            w_slice, b_slice = self.slices[i]
            grad[w_slice] = (cache.inputs[i].T @ g).ravel()
            grad[b_slice] = g.sum(axis=0)
            g = g @ layer.weights.T
        return grad, g


def forward(mlp: Mlp, batch):
    return mlp.forward(batch)


def backward(mlp: Mlp, cache, upstream_grad):
    return mlp.backward(cache, upstream_grad)


@dataclass(frozen=True)
class Loss:
    kind: str = "mse"

    def __post_init__(self):
        if self.kind not in ("mse", "bce"):
            raise DomainError(f"unknown loss {self.kind!r}")


def loss_value_and_grad(loss: Loss, pred, target):
    """Mean loss over every element of ``pred`` and its gradient w.r.t. ``pred``.

    mse: ``mean((p - t)^2)``, gradient ``2 (p - t) / n``.
    bce: probabilities are clamped to ``[1e-7, 1 - 1e-7]``; the gradient is zero
    where clamping is active.
    """
    pred = as_matrix(pred)
    target = as_matrix(target)
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    n = pred.size
    if loss.kind == "mse":
        diff = pred - target
        return float(np.mean(diff * diff)), 2.0 * diff / n
    p = np.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    value = -np.mean(target * np.log(p) + (1.0 - target) * np.log1p(-p))
    inside = (pred > BCE_CLAMP) & (pred < 1.0 - BCE_CLAMP)
    grad = np.where(inside, (p - target) / (p * (1.0 - p)), 0.0) / n
    return float(value), grad


def bce_with_logits(logits, target):
    """Stable sigmoid + BCE on logits; returns ``(mean loss, dLoss/dlogits)``."""
    z = as_matrix(logits)
    target = as_matrix(target)
    if z.shape != target.shape:
        raise ShapeError(f"logits {z.shape} vs target {target.shape}")
    # softplus(z) - t*z, written to avoid overflow for large |z|
    value = np.mean(np.maximum(z, 0.0) - target * z + np.log1p(np.exp(-np.abs(z))))
    return float(value), (expit(z) - target) / z.size


@dataclass(frozen=True)
class Metric:
    kind: str = "mae"

    def __post_init__(self):
        if self.kind not in ("mae", "mse", "auc"):
            raise DomainError(f"unknown metric {self.kind!r}")

    @property
    def higher_is_better(self) -> bool:
        return self.kind == "auc"

    @property
    def orientation(self) -> str:
        return "higher_is_better" if self.higher_is_better else "lower_is_better"

    @property
    def sign(self) -> float:
        """+1 if larger values are improvements, -1 otherwise."""
        return 1.0 if self.higher_is_better else -1.0

    def gain(self, new, old) -> float:
        """Change from ``old`` to ``new``, positive iff the metric improved."""
        return self.sign * (new - old)

    def better(self, a, b) -> bool:
        return self.gain(a, b) > 0

    def worst(self) -> float:
        return -np.inf if self.higher_is_better else np.inf


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with average ranks for ties."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if scores.shape != labels.shape:
        raise ShapeError("scores and labels differ in length")
    pos = labels == 1.0
    neg = labels == 0.0
    if not np.all(pos | neg):
        raise DegenerateMetricError("AUC labels must be 0 or 1")
    n_pos = int(pos.sum())
    n_neg = int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateMetricError(f"AUC needs both classes (positives={n_pos}, negatives={n_neg})")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def metric_value(metric: Metric, pred, target) -> float:
    pred = as_matrix(pred)
    target = as_matrix(target)
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    if metric.kind == "mae":
        return float(np.mean(np.abs(pred - target)))
    if metric.kind == "mse":
        diff = pred - target
        return float(np.mean(diff * diff))
    return roc_auc(pred, target)
