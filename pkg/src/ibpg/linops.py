"""Linear operators and seeded instance generators.

Every operator here is a small dense matrix wrapped in :class:`LinearOperator`;
the problem sizes this package targets (n up to a few hundred) do not need
matrix-free application.

Randomness goes through :func:`substream`, which derives an independent
Philox stream per named component (``"matrix"``, ``"signal"``, ``"init"``,
...) from one integer seed, so an experiment can be regenerated piecewise.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "LinearOperator",
    "substream",
    "gaussian_matrix",
    "finite_difference",
    "haar_dictionary",
    "planted_signal",
    "measurement_count",
    "adjoint_mismatch",
    "save_operator_text",
    "load_operator_text",
]

RNG_NAME = "numpy.Philox"
RNG_VERSION = 1


def substream(seed: int, component: str) -> np.random.Generator:
    """Independent generator for ``component`` derived from ``seed``.

    The component name is folded into the seed-sequence spawn key via CRC32,
    so the mapping is stable across Python processes.
    """
    key = zlib.crc32(component.encode("utf-8"))
    ss = np.random.SeedSequence(int(seed), spawn_key=(RNG_VERSION, key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, eq=False)
class LinearOperator:
    """Dense linear map ``R^cols -> R^rows``."""

    matrix: np.ndarray
    name: str = ""

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2:
            raise ValueError("operator matrix must be 2-D")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def adjoint(self, u: np.ndarray) -> np.ndarray:
        return self.matrix.T @ u

    def to_dense(self) -> np.ndarray:
        return np.array(self.matrix)

    __matmul__ = apply


def adjoint_mismatch(op: LinearOperator, probes: int = 10, seed: int = 0) -> float:
    """Largest ``|<Ax, u> - <x, A^T u>| / (|x| |u|)`` over random probes."""
    rng = np.random.default_rng(seed)
    rows, cols = op.shape
    worst = 0.0
    for _ in range(probes):
        x = rng.standard_normal(cols)
        u = rng.standard_normal(rows)
        lhs = float(np.dot(op.apply(x), u))
        rhs = float(np.dot(x, op.adjoint(u)))
        worst = max(worst, abs(lhs - rhs) / (np.linalg.norm(x) * np.linalg.norm(u)))
    return worst


def gaussian_matrix(m: int, n: int, seed: int, normalize: bool = False) -> LinearOperator:
    """i.i.d. standard normal ``m x n`` sensing matrix.

    With ``normalize`` the entries are scaled by ``1/sqrt(n)`` so rows have
    squared norm close to one.
    """
    if m < 1 or n < 1:
        raise ValueError("gaussian_matrix needs m, n >= 1")
    a = substream(seed, "matrix").standard_normal((m, n))
    if normalize:
        a /= math.sqrt(n)
    return LinearOperator(a, name="gaussian")


def finite_difference(n: int) -> LinearOperator:
    """Forward differences ``(Dx)_i = x_{i+1} - x_i``, shape ``(n-1, n)``."""
    if n < 2:
        raise ValueError("finite_difference needs n >= 2")
    d = np.zeros((n - 1, n))
    idx = np.arange(n - 1)
    d[idx, idx] = -1.0
    d[idx, idx + 1] = 1.0
    return LinearOperator(d, name="finite_difference")


def haar_dictionary(n: int, j_max: int) -> LinearOperator:
    """Shift-invariant Haar synthesis dictionary ``W: R^(n(j_max+1)) -> R^n``.

    Channel ``j < j_max`` holds every circular shift of the Haar filter of
    half-width ``2**j`` (``+2^-(j+1)`` on ``[0, 2^j)``, ``-2^-(j+1)`` on
    ``[-2^j, 0)``); the last channel holds shifts of a box of width
    ``2**j_max``. Columns are scaled to unit norm.
    """
    if n < 2 or n & (n - 1):
        raise ValueError("haar_dictionary needs n a power of two")
    levels = int(round(math.log2(n)))
    if not 1 <= j_max < levels:
        raise ValueError(f"need 1 <= j_max < log2(n) = {levels}")
    filters = []
    for j in range(j_max):
        h = np.zeros(n)
        w = 2**j
        h[:w] = 2.0 ** -(j + 1)
        h[n - w :] = -(2.0 ** -(j + 1))
        filters.append(h)
    box = np.zeros(n)
    box[: 2**j_max] = 1.0
    filters.append(box)
    cols = []
    for h in filters:
        h = h / np.linalg.norm(h)
        # column k of the channel is the filter shifted to position k
        cols.append(np.stack([np.roll(h, k) for k in range(n)], axis=1))
    return LinearOperator(np.hstack(cols), name="haar")


def planted_signal(kind: str, n: int, sparsity: int, seed: int, block_size: int = 8) -> np.ndarray:
    """Deterministic planted signal.

    ``kind`` is ``"sparse"`` (``sparsity`` nonzeros), ``"block-sparse"``
    (``sparsity`` aligned blocks of ``block_size``) or ``"piecewise-constant"``
    (``sparsity`` jumps). Nonzero entries, and jump heights, are random signs
    times magnitudes uniform on ``[0.5, 1.5]``.
    """
    rng = substream(seed, "signal")

    def amplitudes(k):
        return rng.choice([-1.0, 1.0], size=k) * rng.uniform(0.5, 1.5, size=k)

    x = np.zeros(n)
    if kind == "sparse":
        if not 0 <= sparsity <= n:
            raise ValueError("infeasible sparsity")
        idx = np.sort(rng.choice(n, size=sparsity, replace=False))
        x[idx] = amplitudes(sparsity)
    elif kind == "block-sparse":
        if block_size < 1 or n % block_size or sparsity * block_size > n or sparsity < 0:
            raise ValueError("infeasible block sparsity")
        blocks = np.sort(rng.choice(n // block_size, size=sparsity, replace=False))
        for b in blocks:
            x[b * block_size : (b + 1) * block_size] = amplitudes(block_size)
    elif kind == "piecewise-constant":
        if not 0 <= sparsity <= n - 1:
            raise ValueError("infeasible jump count")
        jumps = np.sort(rng.choice(np.arange(1, n), size=sparsity, replace=False))
        dx = np.zeros(n)
        dx[jumps] = amplitudes(sparsity)
        x = np.cumsum(dx)
    else:
        raise ValueError(f"unknown signal kind {kind!r}")
    return x


def measurement_count(recipe: str, n: int, s: int, block_size: int = 8) -> int:
    """Number of quadratic measurements for the named recipe (natural log, ceiling).

    ``"l1"``: ``0.5 s^1.5 ln n``; ``"group"``: ``0.5 (s * block_size)^2 ln n``;
    ``"tv"``: ``0.5 s^2 ln n``.
    """
    if recipe == "l1":
        m = 0.5 * s**1.5 * math.log(n)
    elif recipe == "group":
        m = 0.5 * (s * block_size) ** 2 * math.log(n)
    elif recipe == "tv":
        m = 0.5 * s**2 * math.log(n)
    else:
        raise ValueError(f"unknown measurement recipe {recipe!r}")
    return max(1, math.ceil(m))


def save_operator_text(path: str | Path, array: np.ndarray) -> None:
    """Write a vector or matrix as ``# rows cols`` header plus row-major decimals."""
    a = np.atleast_2d(np.asarray(array, dtype=float))
    if np.asarray(array).ndim == 1:
        a = a.reshape(-1, 1)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {a.shape[0]} {a.shape[1]}\n")
        for row in a:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_operator_text(path: str | Path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 3 or header[0] != "#":
            raise ValueError(f"{path}: missing dimensions header")
        rows, cols = int(header[1]), int(header[2])
        data = np.array([float(tok) for line in fh for tok in line.split()])
    if data.size != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} values, found {data.size}")
    return data.reshape(rows, cols)
