"""Hard-parameter-sharing network: shared encoder plus a main and an auxiliary head.

Parameter groups are addressed by single letters: ``"s"`` (shared encoder),
``"m"`` (main head) and ``"a"`` (auxiliary head).
"""

from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ContractError, ShapeError
from .nn import Loss, Mlp, bce_with_logits, loss_value_and_grad
from .tensor_core import Rng, as_matrix, checksum

GROUPS = ("s", "m", "a")
TASKS = ("main", "aux")
CHECKPOINT_MAGIC = b"HYDCKPT1"


@dataclass
class Batch:
    inputs: np.ndarray
    targets_main: np.ndarray
    targets_aux: np.ndarray
    indices: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.inputs.shape[0]
        if self.targets_main.shape[0] != n or self.targets_aux.shape[0] != n:
            raise ShapeError("batch fields disagree on row count")

    def __len__(self):
        return self.inputs.shape[0]

    def targets(self, task):
        return self.targets_main if task == "main" else self.targets_aux


@dataclass
class GradientBundle:
    grad_s: np.ndarray
    grad_m: Optional[np.ndarray] = None
    grad_a: Optional[np.ndarray] = None
    source_task: str = "main"

    @property
    def head(self):
        return self.grad_m if self.source_task == "main" else self.grad_a


@dataclass
class ParamSnapshot:
    values: dict = field(default_factory=dict)


class MultiTaskNet:
    """Encoder ``Mlp`` feeding two head ``Mlp``s.

    A head whose loss is ``bce`` must end in a sigmoid; its gradient is then
    computed from the logits in one numerically stable step.
    """

    def __init__(self, encoder: Mlp, head_main: Mlp, head_aux: Mlp,
                 loss_main: Loss = Loss("mse"), loss_aux: Loss = Loss("mse")):
        if encoder.out_dim != head_main.in_dim or encoder.out_dim != head_aux.in_dim:
            raise ShapeError("encoder output size must match both heads' input size")
        for head, loss in ((head_main, loss_main), (head_aux, loss_aux)):
            if loss.kind == "bce" and head.activations[-1] != "sigmoid":
                raise ShapeError("a bce head must end in a sigmoid activation")
        self.encoder = encoder
        self.head_main = head_main
        self.head_aux = head_aux
        self.loss_main = loss_main
        self.loss_aux = loss_aux
        # instrumentation read by the trainer's invariant checks
        self.counters = Counter()

    @classmethod
    def build(cls, input_dim, encoder_sizes, head_sizes, out_main, out_aux, rng: Rng,
              activation="tanh", loss_main="mse", loss_aux="mse"):
        """Construct and Xavier-initialise a network.

        ``head_sizes`` lists hidden widths of each head; a linear (or sigmoid,
        for bce) output layer is appended.
        """
        enc = [input_dim, *encoder_sizes]
        encoder = Mlp.initialized(enc, [activation] * len(encoder_sizes), rng.child("encoder"))
        heads = []
        for name, out, loss in (("main", out_main, loss_main), ("aux", out_aux, loss_aux)):
            sizes = [enc[-1], *head_sizes, out]
            acts = [activation] * len(head_sizes) + ["sigmoid" if loss == "bce" else "identity"]
            heads.append(Mlp.initialized(sizes, acts, rng.child("head", name)))
        return cls(encoder, heads[0], heads[1], Loss(loss_main), Loss(loss_aux))

    def group(self, name) -> Mlp:
        try:
            return {"s": self.encoder, "m": self.head_main, "a": self.head_aux}[name]
        except KeyError:
            raise ContractError(f"unknown parameter group {name!r}") from None

    def head(self, task) -> Mlp:
        return self.head_main if task == "main" else self.head_aux

    def loss(self, task) -> Loss:
        return self.loss_main if task == "main" else self.loss_aux

    def task_forward(self, inputs, task):
        x = inputs.inputs if isinstance(inputs, Batch) else as_matrix(inputs)
        h, enc_cache = self.encoder.forward(x)
        pred, head_cache = self.head(task).forward(h)
        return pred, (enc_cache, head_cache)

    def predict(self, inputs, task="main"):
        h = self.encoder.predict(inputs)
        return self.head(task).predict(h)

    def task_gradients(self, batch: Batch, task):
        """Loss on ``batch`` for one task and gradients for the encoder and that task's head."""
        pred, (enc_cache, head_cache) = self.task_forward(batch.inputs, task)
        target = batch.targets(task)
        loss = self.loss(task)
        if loss.kind == "bce":
            value, upstream = bce_with_logits(head_cache.pre[-1], target)
            preact = True
        else:
            value, upstream = loss_value_and_grad(loss, pred, target)
            preact = False
        head_grad, h_grad = self.head(task).backward(head_cache, upstream, preactivation=preact)
        grad_s, _ = self.encoder.backward(enc_cache, h_grad)
        self.counters["backward"] += 1
        if task == "main":
            return value, GradientBundle(grad_s, grad_m=head_grad, source_task="main")
        return value, GradientBundle(grad_s, grad_a=head_grad, source_task="aux")

    def task_loss(self, inputs, targets, task) -> float:
        return loss_value_and_grad(self.loss(task), self.predict(inputs, task), targets)[0]

    def apply_update(self, group, grad, step_size):
        """``theta_group -= step_size * grad``; other groups are untouched."""
        self.group(group).add_(grad, -step_size)

    def snapshot(self, groups=GROUPS) -> ParamSnapshot:
        return ParamSnapshot({g: self.group(g).params.copy() for g in groups})

    def restore(self, snap: ParamSnapshot):
        for g, values in snap.values.items():
            mlp = self.group(g)
            if values.shape != mlp.params.shape:
                raise ContractError(f"snapshot of group {g!r} has {values.size} values, net has {mlp.n_params}")
            mlp.set_params(values)

    def checksum(self, groups=GROUPS) -> str:
        return checksum(*(self.group(g).params for g in groups))

    def architecture(self) -> dict:
        return {
            g: {"sizes": self.group(g).sizes, "activations": self.group(g).activations}
            for g in GROUPS
        } | {"loss_main": self.loss_main.kind, "loss_aux": self.loss_aux.kind}


def write_checkpoint(net: MultiTaskNet, path):
    """Write parameters as ``magic | u32 header length | JSON header | float64 LE groups``.

    The JSON header carries per-group parameter counts, layer sizes, activations
    and loss kinds; the payload is groups ``s``, ``m``, ``a`` in that order.
    """
    header = net.architecture()
    header["group_sizes"] = {g: net.group(g).n_params for g in GROUPS}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for g in GROUPS:
            fh.write(np.ascontiguousarray(net.group(g).params, dtype="<f8").tobytes())


def read_checkpoint(path) -> MultiTaskNet:
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ContractError(f"{path}: not a checkpoint file")
        (length,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(length).decode("utf-8"))
        mlps = {}
        for g in GROUPS:
            n = header["group_sizes"][g]
            values = np.frombuffer(fh.read(8 * n), dtype="<f8").astype(np.float64)
            if values.size != n:
                raise ContractError(f"{path}: truncated payload in group {g!r}")
            mlps[g] = Mlp(header[g]["sizes"], header[g]["activations"], values)
    return MultiTaskNet(mlps["s"], mlps["m"], mlps["a"], Loss(header["loss_main"]), Loss(header["loss_aux"]))
