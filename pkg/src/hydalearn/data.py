"""Synthetic tasks, CSV ingestion, splitting and mini-batching.

The toy tasks follow ``f_i(x) = sigma_i * tanh((B + eps_i) x)`` with a shared
basis ``B`` and task-specific perturbations ``eps_i``.  In the *unrelated*
mode the auxiliary targets are replaced by uniform draws over the main task's
per-dimension output range, so they carry no information about ``x``.
"""

from __future__ import annotations

import csv
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DomainError, SchemaError, ShapeError
from .multitask import Batch
from .tensor_core import Rng, checksum, gaussian_matrix

log = logging.getLogger(__name__)

CACHE_MAGIC = b"HYDDATA1"


@dataclass
class Dataset:
    inputs: np.ndarray
    targets_main: np.ndarray
    targets_aux: np.ndarray
    task_kinds: tuple = ("regression", "regression")
    feature_names: Optional[list] = None

    def __post_init__(self):
        n = self.inputs.shape[0]
        if self.targets_main.shape[0] != n or self.targets_aux.shape[0] != n:
            raise ShapeError("inputs and targets disagree on row count")
        for kind, targets in zip(self.task_kinds, (self.targets_main, self.targets_aux)):
            if kind == "classification" and not np.all((targets == 0) | (targets == 1)):
                raise DomainError("classification targets must be 0 or 1")

    def __len__(self):
        return self.inputs.shape[0]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.inputs[idx], self.targets_main[idx], self.targets_aux[idx],
                       self.task_kinds, self.feature_names)

    def batch(self, idx) -> Batch:
        idx = np.asarray(idx)
        return Batch(self.inputs[idx], self.targets_main[idx], self.targets_aux[idx], idx)

    def checksum(self) -> str:
        return checksum(self.inputs, self.targets_main, self.targets_aux)


@dataclass
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset

    def checksum(self) -> str:
        return checksum(*(a for d in (self.train, self.val, self.test)
                          for a in (d.inputs, d.targets_main, d.targets_aux)))


@dataclass
class ToySpec:
    n_train: int = 10000
    n_val: int = 2000
    n_test: int = 2000
    input_dim: int = 75
    output_dim: int = 25
    b_variance: float = 10.0
    eps_variance: float = 3.5
    sigma_main: float = 1.0
    sigma_aux: float = 10.0
    # None: 0.05 * sigma of each task
    noise_std: Optional[float] = None
    aux_mode: str = "related"
    seed: int = 0

    def __post_init__(self):
        if min(self.n_train, self.input_dim, self.output_dim) <= 0 or min(self.n_val, self.n_test) < 0:
            raise ConfigError("toy dataset sizes and dimensions must be positive")
        if self.b_variance < 0 or self.eps_variance < 0:
            raise ConfigError("variances must be non-negative")
        if self.noise_std is not None and self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")
        if self.aux_mode not in ("related", "unrelated"):
            raise ConfigError(f"aux_mode must be 'related' or 'unrelated', got {self.aux_mode!r}")

    @property
    def n_total(self):
        return self.n_train + self.n_val + self.n_test

    def noise_for(self, sigma):
        return 0.05 * sigma if self.noise_std is None else self.noise_std

    def to_dict(self):
        return asdict(self)


EXP1_DATA = ToySpec()
EXP2_DATA = ToySpec(n_train=1000, n_val=200, n_test=200, input_dim=25, output_dim=5, aux_mode="unrelated")


def generate_toy(spec: ToySpec) -> Dataset:
    """All ``n_train + n_val + n_test`` rows of a toy problem, in that order."""
    rng = Rng(spec.seed).child("toy")
    n, d, k = spec.n_total, spec.input_dim, spec.output_dim
    basis = gaussian_matrix(rng.child("B"), k, d, 0.0, spec.b_variance)
    x = gaussian_matrix(rng.child("x"), n, d, 0.0, 1.0)

    def task(name, sigma):
        eps = gaussian_matrix(rng.child("eps", name), k, d, 0.0, spec.eps_variance)
        clean = sigma * np.tanh(x @ (basis + eps).T)
        noise = gaussian_matrix(rng.child("noise", name), n, k, 0.0, spec.noise_for(sigma) ** 2)
        return clean + noise

    y_main = task("main", spec.sigma_main)
    if spec.aux_mode == "related":
        y_aux = task("aux", spec.sigma_aux)
    else:
        lo = y_main.min(axis=0)
        hi = y_main.max(axis=0)
        y_aux = lo + (hi - lo) * rng.child("uniform_aux").uniform((n, k))
    return Dataset(x, y_main, y_aux)


def toy_splits(spec: ToySpec) -> Splits:
    """Train/val/test in generation order; the rows are already i.i.d."""
    ds = generate_toy(spec)
    a = spec.n_train
    b = a + spec.n_val
    return Splits(ds.subset(np.arange(a)), ds.subset(np.arange(a, b)), ds.subset(np.arange(b, spec.n_total)))


def split_indices(n, fractions, seed):
    """Disjoint, exhaustive index arrays for a seeded shuffle of ``range(n)``."""
    fractions = np.asarray(fractions, dtype=np.float64)
    if fractions.size != 3 or np.any(fractions < 0) or not np.isclose(fractions.sum(), 1.0):
        raise ConfigError(f"split fractions must be three non-negative numbers summing to 1, got {fractions.tolist()}")
    counts = np.floor(fractions * n + 1e-9).astype(int)
    counts[0] += n - counts.sum()
    for name, frac, c in zip(("train", "val", "test"), fractions, counts):
        if frac > 0 and c == 0:
            raise ConfigError(f"{name} split is empty for n={n} and fraction {frac}")
    if counts[0] == 0:
        raise ConfigError("train split is empty")
    perm = Rng(seed).child("split").permutation(n)
    a, b = counts[0], counts[0] + counts[1]
    return np.sort(perm[:a]), np.sort(perm[a:b]), np.sort(perm[b:])


def split(dataset: Dataset, fractions=(0.7, 0.15, 0.15), seed=0) -> Splits:
    tr, va, te = split_indices(len(dataset), fractions, seed)
    return Splits(dataset.subset(tr), dataset.subset(va), dataset.subset(te))


class SplitBatcher:
    """Shuffled mini-batches; epoch ``e`` uses permutation ``Rng(seed).child('shuffle', e)``.

    The final batch of an epoch is shorter when ``batch_size`` does not divide
    the number of rows.
    """

    def __init__(self, n_rows, batch_size=16, seed=0):
        if batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        self.n_rows = int(n_rows)
        self.batch_size = int(batch_size)
        self.seed = seed
        self.epoch = 0
        self._order = None
        self._pos = 0

    @property
    def batches_per_epoch(self):
        return -(-self.n_rows // self.batch_size)

    def next_indices(self):
        if self._order is None or self._pos >= self.n_rows:
            if self._order is not None:
                self.epoch += 1
            self._order = Rng(self.seed).child("shuffle", self.epoch).permutation(self.n_rows)
            self._pos = 0
        idx = self._order[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return idx


def next_batch(batcher: SplitBatcher, train_set: Dataset) -> Batch:
    return train_set.batch(batcher.next_indices())


# --------------------------------------------------------------------------
# CSV


@dataclass
class ColumnSpec:
    name: str
    role: str  # feature | main | aux | ignore
    kind: str = "continuous"  # continuous | categorical | raw


@dataclass
class CsvSchema:
    columns: list = field(default_factory=list)
    task_kinds: tuple = ("regression", "regression")

    @classmethod
    def from_dict(cls, d):
        cols = []
        for c in d["columns"]:
            spec = ColumnSpec(c["name"], c.get("role", "feature"), c.get("kind", "continuous"))
            if spec.role not in ("feature", "main", "aux", "ignore"):
                raise SchemaError(f"column {spec.name!r}: unknown role {spec.role!r}")
            if spec.kind not in ("continuous", "categorical", "raw"):
                raise SchemaError(f"column {spec.name!r}: unknown kind {spec.kind!r}")
            if spec.role in ("main", "aux") and spec.kind == "categorical":
                raise SchemaError(f"target column {spec.name!r} cannot be categorical")
            cols.append(spec)
        return cls(cols, tuple(d.get("task_kinds", ("regression", "regression"))))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return {"columns": [asdict(c) for c in self.columns], "task_kinds": list(self.task_kinds)}

    def by_role(self, role):
        return [c for c in self.columns if c.role == role]


def _to_float(value, column, row):
    try:
        return float(value)
    except ValueError:
        raise SchemaError(f"row {row}: column {column!r} holds non-numeric value {value!r}") from None


def load_csv(path, schema: CsvSchema, train_rows=None) -> Dataset:
    """Read a headed CSV into a :class:`Dataset`.

    Continuous features are z-scored and categorical features one-hot encoded
    using statistics of ``train_rows`` only (all rows by default).  Categories
    absent from the training rows encode as all zeros, with a warning.  Output
    columns follow schema order; one-hot blocks list categories sorted.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c.name for c in schema.columns if c.name not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        rows = list(reader)
    n = len(rows)
    train_rows = np.arange(n) if train_rows is None else np.asarray(train_rows)
    train_mask = np.zeros(n, dtype=bool)
    train_mask[train_rows] = True

    blocks, names = [], []
    for col in schema.by_role("feature"):
        raw = [r[col.name] for r in rows]
        if col.kind == "categorical":
            cats = sorted({raw[i] for i in np.flatnonzero(train_mask)})
            lookup = {c: j for j, c in enumerate(cats)}
            block = np.zeros((n, len(cats)))
            unseen = 0
            for i, v in enumerate(raw):
                j = lookup.get(v)
                if j is None:
                    unseen += 1
                else:
                    block[i, j] = 1.0
            if unseen:
                log.warning("column %r: %d row(s) with categories unseen in training, encoded as zeros",
                            col.name, unseen)
            blocks.append(block)
            names.extend(f"{col.name}={c}" for c in cats)
        else:
            values = np.array([_to_float(v, col.name, i) for i, v in enumerate(raw)])
            if col.kind == "continuous":
                mean = values[train_mask].mean()
                std = values[train_mask].std()
                values = (values - mean) / (std if std > 0 else 1.0)
            blocks.append(values[:, None])
            names.append(col.name)

    def targets(role):
        cols = schema.by_role(role)
        if not cols:
            raise SchemaError(f"schema names no {role} target column")
        return np.array([[_to_float(r[c.name], c.name, i) for c in cols] for i, r in enumerate(rows)]).reshape(n, len(cols))

    inputs = np.hstack(blocks) if blocks else np.zeros((n, 0))
    return Dataset(inputs, targets("main"), targets("aux"), schema.task_kinds, names)


def write_csv(dataset: Dataset, path):
    """Write a dataset with columns ``x0.., main0.., aux0..`` and return its raw schema."""
    d_in = dataset.inputs.shape[1]
    d_m = dataset.targets_main.shape[1]
    d_a = dataset.targets_aux.shape[1]
    header = ([f"x{i}" for i in range(d_in)] + [f"main{i}" for i in range(d_m)]
              + [f"aux{i}" for i in range(d_a)])
    table = np.hstack([dataset.inputs, dataset.targets_main, dataset.targets_aux])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in table:
            w.writerow([repr(float(v)) for v in row])
    cols = ([ColumnSpec(h, "feature", "raw") for h in header[:d_in]]
            + [ColumnSpec(h, "main", "raw") for h in header[d_in:d_in + d_m]]
            + [ColumnSpec(h, "aux", "raw") for h in header[d_in + d_m:]])
    return CsvSchema(cols, tuple(dataset.task_kinds))


# --------------------------------------------------------------------------
# binary cache


def save_dataset_cache(dataset: Dataset, path):
    """``magic | u32 header length | JSON header | float64 LE inputs, main, aux``."""
    header = {
        "shapes": [list(dataset.inputs.shape), list(dataset.targets_main.shape), list(dataset.targets_aux.shape)],
        "task_kinds": list(dataset.task_kinds),
        "feature_names": dataset.feature_names,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for a in (dataset.inputs, dataset.targets_main, dataset.targets_aux):
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_dataset_cache(path) -> Dataset:
    with open(path, "rb") as fh:
        if fh.read(len(CACHE_MAGIC)) != CACHE_MAGIC:
            raise SchemaError(f"{path}: not a dataset cache")
        (length,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(length).decode("utf-8"))
        arrays = []
        for shape in header["shapes"]:
            count = int(np.prod(shape))
            a = np.frombuffer(fh.read(8 * count), dtype="<f8")
            if a.size != count:
                raise SchemaError(f"{path}: truncated payload")
            arrays.append(a.astype(np.float64).reshape(shape))
    return Dataset(*arrays, tuple(header["task_kinds"]), header["feature_names"])
