"""Query-counted oracle views, deterministic estimator noise, and the cost model.

The quantum estimators used by the pipeline are simulated: exact classical
values are perturbed by a multiplicative factor in ``[1 - eps, 1 + eps]``
that is a pure function of ``(seed, tag, index)``.  Oracle handles charge a
:class:`QueryLedger` so query counts can be audited after a run.
"""
from __future__ import annotations

import math
import threading
import zlib
from dataclasses import dataclass, replace

import numpy as np

from .matrix_io import RowMatrix

ORACLE_NAMES = (
    "matrix-element",
    "matrix-index",
    "matrix-row",
    "loss-eval",
    "weight-eval",
    "overestimate-eval",
)


class QueryLedger:
    """Monotone per-oracle call counters.  Increments are lock-protected."""

    def __init__(self):
        self._lock = threading.Lock()
        self._counts = dict.fromkeys(ORACLE_NAMES, 0)

    def charge(self, name: str, k: int = 1) -> None:
        if name not in self._counts:
            raise KeyError(f"unknown oracle {name!r}")
        k = int(k)
        if k < 0:
            raise ValueError("ledger counters cannot decrease")
        with self._lock:
            self._counts[name] += k

    def __getitem__(self, name: str) -> int:
        return self._counts[name]

    @property
    def counts(self) -> dict[str, int]:
        with self._lock:
            return dict(self._counts)

    def reset(self) -> None:
        with self._lock:
            for k in self._counts:
                self._counts[k] = 0

    def __repr__(self):
        return f"QueryLedger({self.counts})"


def charge(ledger: QueryLedger | None, name: str, k: int = 1) -> None:
    if ledger is not None:
        ledger.charge(name, k)


@dataclass(frozen=True)
class NoiseConfig:
    epsilon: float = 0.0
    seed: int = 0
    enabled: bool = True

    def __post_init__(self):
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError(f"noise epsilon must lie in [0, 1), got {self.epsilon}")

    def with_epsilon(self, epsilon: float) -> "NoiseConfig":
        return replace(self, epsilon=float(epsilon))


DISABLED = NoiseConfig(0.0, 0, False)

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    # Standard SplitMix64 finalizer; uint64 arithmetic wraps modulo 2**64.
    with np.errstate(over="ignore"):
        x = (x + np.uint64(0x9E3779B97F4A7C15)) & _MASK
        x = ((x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK
        x = ((x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK
        return x ^ (x >> np.uint64(31))


def _uniform01(seed: int, tag: str, index) -> np.ndarray:
    idx = np.atleast_1d(np.asarray(index, dtype=np.int64)).astype(np.uint64)
    key = _splitmix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))
    key = _splitmix64(key ^ np.uint64(zlib.crc32(tag.encode("utf-8"))))
    with np.errstate(over="ignore"):
        h = _splitmix64(key ^ _splitmix64(idx))
    return (h >> np.uint64(11)).astype(np.float64) * 2.0**-53


def noisy_factors(cfg: NoiseConfig, tag: str, indices) -> np.ndarray:
    """Vectorized :func:`noisy_factor`."""
    indices = np.atleast_1d(np.asarray(indices, dtype=np.int64))
    if not cfg.enabled or cfg.epsilon == 0.0:
        return np.ones(indices.shape, dtype=np.float64)
    u = _uniform01(cfg.seed, tag, indices)
    return 1.0 + cfg.epsilon * (2.0 * u - 1.0)


def noisy_factor(cfg: NoiseConfig, tag: str, index: int) -> float:
    """Deterministic multiplicative error in [1 - eps, 1 + eps]; 1.0 when disabled."""
    return float(noisy_factors(cfg, tag, [index])[0])


class MatrixOracle:
    """Element / index / row access to a :class:`RowMatrix`, charged to a ledger.

    A row query also advances the element counter by the row's nonzero
    count, since one row query stands for r_i element queries.
    """

    def __init__(self, A: RowMatrix, ledger: QueryLedger | None = None):
        self.A = A
        self.ledger = ledger if ledger is not None else QueryLedger()

    def _check_row(self, i):
        if not 0 <= i < self.A.m:
            raise IndexError(f"row {i} out of range [0, {self.A.m})")

    def element(self, i: int, j: int) -> float:
        self._check_row(i)
        if not 0 <= j < self.A.n:
            raise IndexError(f"column {j} out of range [0, {self.A.n})")
        self.ledger.charge("matrix-element")
        lo, hi = self.A.indptr[i], self.A.indptr[i + 1]
        cols = self.A.indices[lo:hi]
        k = np.searchsorted(cols, j)
        if k < cols.size and cols[k] == j:
            return float(self.A.data[lo + k])
        return 0.0

    def index(self, i: int, k: int) -> int:
        self._check_row(i)
        lo, hi = self.A.indptr[i], self.A.indptr[i + 1]
        if not 0 <= k < hi - lo:
            raise IndexError(f"row {i} has {hi - lo} nonzeros, asked for #{k}")
        self.ledger.charge("matrix-index")
        return int(self.A.indices[lo + k])

    def row(self, i: int) -> list[tuple[int, float]]:
        self._check_row(i)
        r_i = int(self.A.indptr[i + 1] - self.A.indptr[i])
        self.ledger.charge("matrix-row")
        self.ledger.charge("matrix-element", r_i)
        return self.A.row(i)


def quantum_budget(m: int, n: int, r: int, epsilon: float, scale_ratio: float = 1.0) -> dict:
    """Leading-order cost terms of the sparsification pipeline.

    All terms are reported up to polylog factors; omega is taken as 3.
    Each quantum term is multiplied by ``log2(scale_ratio) + 1``.
    """
    if not (m >= n >= r >= 1):
        raise ValueError(f"need m >= n >= r >= 1, got m={m}, n={n}, r={r}")
    if not 0.0 < epsilon <= 1.0:
        # epsilon = 1 is allowed so that the r = n, eps = 1 substitution works.
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    if not scale_ratio >= 1.0:
        raise ValueError(f"scale_ratio must be >= 1, got {scale_ratio}")
    scales = math.log2(scale_ratio) + 1.0
    sampling = r * math.sqrt(m * n) / epsilon * scales
    linalg = float(n) ** 3 * scales
    sparsity = n * float(r) ** 2 * scales
    return {
        "quantum_leading_term": sampling,
        "quantum_linear_algebra_term": linalg,
        "quantum_row_sparsity_term": sparsity,
        "quantum_total": sampling + linalg + sparsity,
        "classical_term": float(m) * r,
        "scale_factor": scales,
        "omega": 3,
        "annotation": "up to polylog(m, n, 1/eps) factors",
    }
