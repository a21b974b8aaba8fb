"""Dense float64 arrays and seeded random streams.

numpy ``ndarray`` (float64, C order) is the matrix type throughout the package.
This module adds the few checked primitives the rest of the code relies on and
a counter-based random generator that can be split into named, independent
streams so that data generation, initialisation and shuffling never share
state.
"""

from __future__ import annotations

import hashlib
import zlib

import numpy as np

from .errors import DomainError, ShapeError

__all__ = [
    "Rng",
    "as_matrix",
    "matmul",
    "gaussian_matrix",
    "l2_norm",
    "checksum",
]


def as_matrix(a) -> np.ndarray:
    """Return ``a`` as a 2-D float64 C-contiguous array (vectors become one row)."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape} does not conform")
    return a @ b


def l2_norm(v) -> float:
    """Euclidean norm of the flattened input."""
    flat = np.asarray(v, dtype=np.float64).ravel()
    return float(np.sqrt(np.dot(flat, flat)))


def checksum(*arrays) -> str:
    """SHA-256 over the little-endian float64 bytes of the given arrays."""
    h = hashlib.sha256()
    for a in arrays:
        arr = np.ascontiguousarray(a, dtype="<f8")
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def _name_key(name) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name)
    return zlib.crc32(str(name).encode("utf-8"))


class Rng:
    """Philox-backed random stream addressed by ``(seed, path)``.

    ``Rng(7).child("data")`` and ``Rng(7).child("init")`` are statistically
    independent and each is reproducible on its own, regardless of how much
    the other has been consumed.  Normals are produced by the Box-Muller
    transform of the generator's uniforms:

        z0 = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)
        z1 = sqrt(-2 ln(1 - u1)) * sin(2 pi u2)

    emitted in pairs (z0, z1) and truncated to the requested count.
    """

    def __init__(self, seed: int, path: tuple = ()):
        if int(seed) < 0:
            raise DomainError("seed must be non-negative")
        self.seed = int(seed)
        self.path = tuple(path)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=tuple(_name_key(p) for p in self.path))
        self._gen = np.random.Generator(np.random.Philox(seq))

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={self.path!r})"

    def child(self, *names) -> "Rng":
        return Rng(self.seed, self.path + tuple(names))

    def uniform(self, size) -> np.ndarray:
        """Uniform draws on [0, 1)."""
        return self._gen.random(size)

    def standard_normal(self, size) -> np.ndarray:
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        pairs = (n + 1) // 2
        u = self._gen.random((pairs, 2))
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        angle = 2.0 * np.pi * u[:, 1]
        z = np.empty((pairs, 2))
        z[:, 0] = radius * np.cos(angle)
        z[:, 1] = radius * np.sin(angle)
        return z.ravel()[:n].reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Uniform random permutation of ``range(n)`` (Fisher-Yates on the uniforms)."""
        perm = np.arange(n)
        if n < 2:
            return perm
        u = self._gen.random(n - 1)
        for i in range(n - 1, 0, -1):
            j = int(u[n - 1 - i] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def choice(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)``, sorted."""
        if k > n:
            raise DomainError(f"cannot choose {k} of {n}")
        return np.sort(self.permutation(n)[:k])


def gaussian_matrix(rng: Rng, rows: int, cols: int, mean: float = 0.0, variance: float = 1.0) -> np.ndarray:
    """``rows x cols`` matrix of i.i.d. N(mean, variance) draws."""
    if variance < 0:
        raise DomainError(f"variance must be >= 0, got {variance}")
    if rows < 0 or cols < 0:
        raise ShapeError("negative dimension")
    z = rng.standard_normal((rows, cols))
    return mean + np.sqrt(variance) * z
