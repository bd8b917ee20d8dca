"""Leverage scores of W^{1/2} A: exact values, a noisy estimator, spectral checks."""
from __future__ import annotations

import math

import numpy as np
import scipy.linalg as sla

from .matrix_io import RowMatrix
from .oracles import DISABLED, NoiseConfig, QueryLedger, charge, noisy_factors

# Singular values below RCOND * s_max are treated as zero.
RCOND = 1e-12
# Scores at or below this are considered exactly zero (degenerate rows).
ZERO_LEVERAGE = 1e-14


class RankDeficiencyError(np.linalg.LinAlgError):
    pass


def _dense(A) -> np.ndarray:
    return A.dense if isinstance(A, RowMatrix) else np.asarray(A, dtype=np.float64)


def _check_weights(w, m):
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (m,):
        raise ValueError(f"weight vector must have length {m}, got {w.shape}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    return w


def leverage_and_quadform(A, w) -> tuple[np.ndarray, np.ndarray, int]:
    """Return (sigma, u, rank) where u_i = a_i^T (A^T W A)^+ a_i and sigma = w * u.

    Uses a thin SVD of W^{1/2} A with a relative rank cutoff.
    """
    a = _dense(A)
    w = _check_weights(w, a.shape[0])
    b = np.sqrt(w)[:, None] * a
    _, s, vt = np.linalg.svd(b, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        z = np.zeros(a.shape[0])
        return z, z.copy(), 0
    keep = s > RCOND * s[0]
    proj = (a @ vt[keep].T) / s[keep]
    u = np.einsum("ij,ij->i", proj, proj)
    sigma = w * u
    if not (np.all(np.isfinite(sigma)) and np.all(np.isfinite(u))):
        raise FloatingPointError("non-finite leverage score; matrix is catastrophically conditioned")
    return sigma, u, int(keep.sum())


def exact_leverage(A, w=None) -> np.ndarray:
    """sigma_i = w_i a_i^T (A^T W A)^+ a_i.  Rows with w_i = 0 get 0."""
    a = _dense(A)
    w = np.ones(a.shape[0]) if w is None else w
    return leverage_and_quadform(a, w)[0]


class LeverageEstimator:
    """Serves (1 +/- eps)-accurate leverage estimates of W^{1/2} A.

    Scores are computed exactly once at build time and perturbed per index
    by deterministic multiplicative noise.  Queries are charged to the
    ledger as one row query (plus r_i element reads) and one weight read.
    """

    def __init__(self, A: RowMatrix, w, epsilon: float, noise: NoiseConfig = DISABLED,
                 ledger: QueryLedger | None = None, tag: str = "lev"):
        if not 0.0 < epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
        self.A = A
        self.w = _check_weights(w, A.m).copy()
        self.w.setflags(write=False)
        self.epsilon = float(epsilon)
        # Noise magnitude is the estimator's accuracy contract.
        self.noise = noise.with_epsilon(epsilon) if noise.enabled else DISABLED
        self.ledger = ledger
        self.tag = tag
        self.sigma, self.u, self.rank = leverage_and_quadform(A, self.w)
        # Nominal build cost: ~sqrt(mn)/eps row queries and weight reads.
        k = math.ceil(math.sqrt(A.m * A.n) / self.epsilon)
        charge(ledger, "matrix-row", k)
        charge(ledger, "matrix-element", k * A.r)
        charge(ledger, "weight-eval", k)
        self._factor = noisy_factors(self.noise, tag, np.arange(A.m))

    @property
    def m(self) -> int:
        return self.A.m

    def _charge(self, idx):
        idx = np.atleast_1d(idx)
        charge(self.ledger, "matrix-row", idx.size)
        charge(self.ledger, "matrix-element", int(self.A.row_counts[idx].sum()))
        charge(self.ledger, "weight-eval", idx.size)

    def query(self, i: int) -> float:
        if not 0 <= i < self.m:
            raise IndexError(f"row {i} out of range")
        self._charge(np.array([i]))
        return float(self._factor[i] * self.sigma[i])

    def query_all(self) -> np.ndarray:
        """All m noisy scores (charged as m per-index queries)."""
        self._charge(np.arange(self.m))
        return self._factor * self.sigma

    def query_ratio_all(self) -> np.ndarray:
        """Noisy sigma_i / w_i for every row, i.e. the factor times a_i^T M^+ a_i."""
        self._charge(np.arange(self.m))
        return self._factor * self.u


def mod_lev_approx(A: RowMatrix, w, epsilon: float, noise: NoiseConfig = DISABLED,
                   ledger: QueryLedger | None = None, tag: str = "lev") -> LeverageEstimator:
    return LeverageEstimator(A, w, epsilon, noise, ledger, tag)


def spectral_check(A, weights, tol: float) -> dict:
    """Generalized eigenvalues of (A^T W~ A, A^T A); pass iff all lie in [1 - tol, 1 + tol]."""
    a = _dense(A)
    wt = np.asarray(weights, dtype=np.float64)
    if wt.shape != (a.shape[0],):
        raise ValueError("weights must have one entry per row")
    gram = a.T @ a
    if np.linalg.matrix_rank(a) < a.shape[1]:
        raise RankDeficiencyError("spectral_check needs A with full column rank")
    sub = a.T @ (wt[:, None] * a)
    ev = sla.eigh(sub, gram, eigvals_only=True)
    lo, hi = float(ev.min()), float(ev.max())
    return {"passed": bool(lo >= 1.0 - tol and hi <= 1.0 + tol), "min_ratio": lo,
            "max_ratio": hi, "tol": tol}
