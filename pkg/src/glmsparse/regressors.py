"""Regression problems as GLM objectives: embeddings, sparsified solves, references."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .losses import ProperLossFamily, _gamma
from .matrix_io import RowMatrix, as_response, augment_bias
from .oracles import QueryLedger
from .sparsifier import SparsifyConfig, Sparsifier, qglm_sparsify

log = logging.getLogger(__name__)

KINDS = ("linear", "multiple", "ridge", "lasso", "ell_p", "gamma_p")
RESIDUAL_FLOOR = 1e-10
REF_TOL = 1e-10
REF_MAX_ITER = 10_000
LASSO_TOL = 1e-8


class ConvergenceError(RuntimeError):
    pass


@dataclass
class RegressionProblem:
    kind: str
    A: RowMatrix
    b: np.ndarray
    lam: float = 0.0
    p: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if not self.lam >= 0:
            raise ValueError(f"regularization must be nonnegative, got {self.lam}")
        b = np.asarray(self.b, dtype=np.float64)
        if self.kind == "multiple":
            if b.ndim == 1:
                b = b[:, None]
            if b.ndim != 2 or b.shape[0] != self.A.m or not np.all(np.isfinite(b)):
                raise ValueError("response matrix must be finite with one row per data row")
        else:
            b = as_response(b, self.A.m)
        self.b = b
        if self.kind in ("ell_p", "gamma_p"):
            if self.p is None or not 0 < self.p <= 2:
                raise ValueError(f"exponent p must lie in (0, 2], got {self.p}")
        elif self.kind == "linear":
            self.p = 2.0

    @property
    def n(self) -> int:
        return self.A.n

    @property
    def N(self) -> int:
        return self.b.shape[1] if self.kind == "multiple" else 1

    def residual(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return self.A.to_scipy() @ x - self.b

    def objective(self, x) -> float:
        """The original objective, computed directly from its definition."""
        r = self.residual(x)
        if self.kind in ("linear", "multiple"):
            return float(np.sum(r * r))
        if self.kind == "ridge":
            return float(r @ r + self.lam * np.dot(x, x))
        if self.kind == "lasso":
            return float(r @ r + self.lam * np.abs(x).sum())
        if self.kind == "ell_p":
            return float(np.sum(np.abs(r) ** self.p))
        return float(np.sum(_gamma(r, self.p)))


@dataclass
class Embedding:
    """A GLM instance sum_i f_i(<e_i, x'>) equal to a regression objective.

    When ``augmented`` the last column of ``matrix`` carries the response and
    x' = (x, -1); otherwise x' = x.
    """

    matrix: RowMatrix
    family: ProperLossFamily
    s_min: float
    s_max: float
    augmented: bool
    n: int

    def lift(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).ravel(order="F")
        return np.append(x, -1.0) if self.augmented else x

    def objective(self, x, weights=None) -> float:
        return self.family.total(self.matrix.matvec(self.lift(x)), weights)

    def design(self):
        """(D, y) with <e_i, x'> = D_i x - y_i, D as a dense array."""
        E = self.matrix.dense
        if self.augmented:
            return E[:, :-1], E[:, -1]
        return E, np.zeros(E.shape[0])


def _warm_start(A_dense, b, seed: int = 0) -> np.ndarray:
    """Least squares on a small uniform row subsample."""
    m, n = A_dense.shape
    k = min(m, max(4 * n, 200))
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(m, size=k, replace=False))
    return sla.lstsq(A_dense[idx], b[idx], lapack_driver="gelsy")[0]


def _range(F0: float, Fls: float, m: int, epsilon: float) -> tuple[float, float]:
    s_max = min(F0, 10.0 * Fls) if F0 > 0 and Fls > 0 else max(F0, Fls)
    if not s_max > 0:
        s_max = 1.0
    s_min = epsilon * (Fls if Fls > 0 else s_max) / m**4
    if not s_min < s_max:
        s_min = s_max * epsilon / m**4
    return float(s_min), float(s_max)


def _problem_family(problem: RegressionProblem, m: int) -> ProperLossFamily:
    if problem.kind in ("linear", "ridge", "multiple"):
        return ProperLossFamily.quadratic(m)
    if problem.kind == "ell_p":
        return ProperLossFamily.ell_p(m, problem.p)
    return ProperLossFamily.gamma_p(m, problem.p)


def embed(problem: RegressionProblem, epsilon: float = 0.1, s_min: float | None = None,
          s_max: float | None = None, seed: int = 0) -> Embedding:
    """Rewrite ``problem`` as a GLM instance with a proper loss family and range hint."""
    A, b, lam, n = problem.A, problem.b, problem.lam, problem.n
    kind = problem.kind
    if kind == "multiple":
        N = problem.N
        big = sp.kron(sp.identity(N, format="csr"), A.to_scipy(), format="csr")
        E = augment_bias(RowMatrix.from_scipy(big), b.ravel(order="F"))
        fam = ProperLossFamily.quadratic(E.m)
    elif kind == "ridge":
        block = sp.vstack([A.to_scipy(), math.sqrt(lam) * sp.identity(n, format="csr")], format="csr")
        base = RowMatrix.from_scipy(block)
        E = augment_bias(base, np.concatenate([b, np.zeros(n)])) if np.any(b) else base
        fam = ProperLossFamily.quadratic(E.m)
    elif kind == "lasso":
        block = sp.vstack([A.to_scipy(), sp.identity(n, format="csr")], format="csr")
        base = RowMatrix.from_scipy(block)
        E = augment_bias(base, np.concatenate([b, np.zeros(n)])) if np.any(b) else base
        if lam > 0:
            fam = ProperLossFamily.concat([ProperLossFamily.quadratic(A.m),
                                           ProperLossFamily.absolute(n, lam)])
        else:
            # No penalty: the identity rows are dropped from the objective.
            E = RowMatrix.from_scipy(E.to_scipy()[: A.m])
            fam = ProperLossFamily.quadratic(A.m)
    else:
        E = augment_bias(A, b) if np.any(b) else A
        fam = _problem_family(problem, A.m)
    emb = Embedding(E, fam, 0.0, 0.0, E.n > n * problem.N, n)
    if s_min is None or s_max is None:
        F0 = problem.objective(np.zeros((n, problem.N)) if kind == "multiple" else np.zeros(n))
        Fls = problem.objective(_warm_start(A.dense, b, seed))
        lo, hi = _range(F0, Fls, E.m, epsilon)
        s_min = lo if s_min is None else s_min
        s_max = hi if s_max is None else s_max
    emb.s_min, emb.s_max = float(s_min), float(s_max)
    return emb


# -- inner solvers -------------------------------------------------------------

def weighted_lstsq(D, y, w) -> np.ndarray:
    """argmin_x sum_i w_i (D_i x - y_i)^2 by pivoted QR."""
    sw = np.sqrt(w)
    return sla.lstsq(sw[:, None] * D, sw * y, lapack_driver="gelsy")[0]


def _irls_weight(r, p, gamma):
    """f'(r) / (2 r) with the residual floored away from zero."""
    a = np.maximum(np.abs(r), RESIDUAL_FLOOR)
    tail = 0.5 * p * a ** (p - 2.0)
    return np.where(a <= 1.0, 0.5 * p, tail) if gamma else tail


def irls(D, y, w, p: float, gamma: bool = False, tol: float = 1e-8,
         max_iter: int = REF_MAX_ITER, x0=None) -> tuple[np.ndarray, int, list[float]]:
    """Damped IRLS for sum_i w_i f(D_i x - y_i), f = |.|^p or gamma_p.

    Each step solves the reweighted least squares problem and halves the step
    until the objective does not increase, so the returned history is
    nonincreasing.  Returns (x, iterations, history).
    """
    def obj(x):
        r = D @ x - y
        vals = _gamma(r, p) if gamma else np.abs(r) ** p
        return float(np.dot(w, vals))

    x = weighted_lstsq(D, y, w) if x0 is None else np.asarray(x0, dtype=np.float64)
    cur = obj(x)
    hist = [cur]
    if p == 2.0 and not gamma:
        return x, 0, hist
    for it in range(1, max_iter + 1):
        c = _irls_weight(D @ x - y, p, gamma)
        cand = weighted_lstsq(D, y, w * c)
        step = 1.0
        new = obj(cand)
        while new > cur and step > 1e-12:
            step *= 0.5
            cand = x + step * (cand - x)
            new = obj(cand)
        if new > cur:
            return x, it, hist
        gain = cur - new
        x, cur = cand, new
        hist.append(cur)
        if gain <= tol * max(cur, 1e-300) or cur == 0.0:
            return x, it, hist
    raise ConvergenceError(f"IRLS did not reach tolerance {tol} in {max_iter} iterations")


def lasso_cd(D, y, w_data, pen, tol: float = LASSO_TOL,
             max_sweeps: int = REF_MAX_ITER) -> tuple[np.ndarray, int]:
    """Coordinate descent on sum_i w_i (D_i x - y_i)^2 + sum_j pen_j |x_j|.

    Stops when the worst subgradient optimality violation, relative to
    max(1, |grad at 0|_inf), drops below ``tol``.
    """
    Q = D.T @ (w_data[:, None] * D)
    g = D.T @ (w_data * y)
    n = Q.shape[0]
    x = np.zeros(n)
    diag = np.diag(Q).copy()
    scale = max(1.0, 2.0 * np.abs(g).max(initial=0.0))

    def violation(x):
        grad = 2.0 * (Q @ x - g)
        nz = x != 0
        v = np.where(nz, np.abs(grad + pen * np.sign(x)), np.maximum(np.abs(grad) - pen, 0.0))
        return float(v.max(initial=0.0)) / scale

    for sweep in range(1, max_sweeps + 1):
        for j in range(n):
            if diag[j] <= 0:
                x[j] = 0.0
                continue
            cj = g[j] - Q[j] @ x + diag[j] * x[j]
            x[j] = np.sign(cj) * max(abs(cj) - 0.5 * pen[j], 0.0) / diag[j]
        if violation(x) <= tol:
            return x, sweep
    raise ConvergenceError(f"coordinate descent did not reach tolerance {tol}")


def _solve_weighted(problem: RegressionProblem, emb: Embedding, w, tol: float):
    """Minimize the embedded objective with row weights ``w`` (zeros allowed)."""
    kind = problem.kind
    D, y = emb.design()
    keep = w > 0
    if kind == "multiple":
        Ab = np.column_stack([problem.A.dense, problem.b])
        X = np.empty((problem.n, problem.N))
        sw = np.sqrt(w[keep])[:, None]
        for k in range(problem.N):
            X[:, k] = sla.lstsq(sw * Ab[keep, : problem.n], sw[:, 0] * problem.b[keep, k],
                                lapack_driver="gelsy")[0]
        return X, 0
    if kind == "lasso" and problem.lam > 0:
        m = problem.A.m
        pen = problem.lam * w[m:]
        return lasso_cd(D[:m], y[:m], w[:m], pen, tol=min(tol, LASSO_TOL))
    if kind in ("linear", "ridge", "lasso") or (kind == "ell_p" and problem.p == 2.0):
        return weighted_lstsq(D[keep], y[keep], w[keep]), 0
    x, it, _ = irls(D[keep], y[keep], w[keep], problem.p, gamma=kind == "gamma_p", tol=tol)
    return x, it


# -- drivers -------------------------------------------------------------------

@dataclass
class SolveReport:
    kind: str
    x: np.ndarray
    objective_full: float
    objective_sparse: float
    reference_objective: float | None
    ratio: float | None
    iterations: int
    seed: int
    epsilon: float
    sparsifier_nnz: int
    sample_count: int
    s_min: float
    s_max: float
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "x": np.asarray(self.x).tolist(),
            "objective_full": self.objective_full,
            "objective_sparse": self.objective_sparse,
            "reference_objective": self.reference_objective,
            "ratio": self.ratio,
            "iterations": self.iterations,
            "seed": self.seed,
            "epsilon": self.epsilon,
            "sparsifier_nnz": self.sparsifier_nnz,
            "sample_count": self.sample_count,
            "s_min": self.s_min,
            "s_max": self.s_max,
        }


def sparsify_problem(problem: RegressionProblem, epsilon: float, cfg: SparsifyConfig | None = None,
                     ledger: QueryLedger | None = None, s_min: float | None = None,
                     s_max: float | None = None) -> tuple[Embedding, Sparsifier]:
    cfg = cfg or SparsifyConfig()
    emb = embed(problem, epsilon, s_min, s_max, cfg.seed)
    if problem.kind == "multiple":
        # One sparsifier of [A, B] serves every column.
        target = RowMatrix.from_scipy(sp.hstack([problem.A.to_scipy(), sp.csr_matrix(problem.b)],
                                                format="csr"))
        fam = ProperLossFamily.quadratic(problem.A.m)
    else:
        target, fam = emb.matrix, emb.family
    spr = qglm_sparsify(target, fam, epsilon, emb.s_min, emb.s_max, cfg, ledger)
    return emb, spr


def solve(problem: RegressionProblem, epsilon: float, cfg: SparsifyConfig | None = None,
          ledger: QueryLedger | None = None, s_min: float | None = None,
          s_max: float | None = None, reference: bool = True, tol: float = 1e-8) -> SolveReport:
    """Sparsify, minimize the sparsified objective, and score on the full data."""
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    cfg = cfg or SparsifyConfig()
    emb, spr = sparsify_problem(problem, epsilon, cfg, ledger, s_min, s_max)
    w = spr.dense_weights()
    x, iters = _solve_weighted(problem, emb, w, tol)
    full = problem.objective(x)
    if problem.kind == "multiple":
        r = problem.residual(x)
        sparse_obj = float(np.dot(w, np.sum(r * r, axis=1)))
    else:
        sparse_obj = emb.objective(x, w)
    ref_obj = ratio = None
    if reference:
        ref_obj = reference_solve(problem)[1]
        ratio = full / ref_obj if ref_obj > 0 else (1.0 if full == 0 else math.inf)
    return SolveReport(problem.kind, x, full, sparse_obj, ref_obj, ratio, iters, cfg.seed,
                       epsilon, spr.nnz, spr.M, emb.s_min, emb.s_max,
                       {"sparsifier": spr})


def reference_solve(problem: RegressionProblem) -> tuple[np.ndarray, float]:
    """High-accuracy full-data solution and its objective."""
    if problem.A.m > 100_000 or problem.n > 100:
        raise ValueError("reference_solve is limited to m <= 1e5 and n <= 100")
    A, b, kind = problem.A.dense, problem.b, problem.kind
    if kind == "multiple" or kind == "linear" or (kind == "ell_p" and problem.p == 2.0):
        x = sla.lstsq(A, b, lapack_driver="gelsd")[0]
    elif kind == "ridge":
        x = sla.solve(A.T @ A + problem.lam * np.eye(problem.n), A.T @ b, assume_a="sym") \
            if problem.lam > 0 else sla.lstsq(A, b)[0]
    elif kind == "lasso":
        pen = np.full(problem.n, problem.lam)
        x = lasso_cd(A, b, np.ones(A.shape[0]), pen, tol=LASSO_TOL)[0]
    else:
        x = irls(A, b, np.ones(A.shape[0]), problem.p, gamma=kind == "gamma_p",
                 tol=REF_TOL, max_iter=REF_MAX_ITER)[0]
    return x, problem.objective(x)
