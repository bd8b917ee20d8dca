"""Proper loss families, a sampled properness falsifier, and the anchor search.

Every family member has the form

    f_i(t) = coef_i * base_i(t) + bump_i * t**2

where ``base_i`` is either |t|^p (``ell_p``) or the gamma_p loss, which is
quadratic near the origin and |t|^p - (1 - p/2) in the tail (p = 1 gives the
Huber loss).  ``bump_i`` is nonzero only for the modified family produced by
:func:`make_modified`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .oracles import QueryLedger, charge

ELL_P = 0
GAMMA_P = 1

KIND_NAMES = {"ell_p", "gamma_p", "quadratic", "absolute"}


class AnchorSearchError(RuntimeError):
    """Raised when the anchor search exceeds its evaluation budget."""


def _gamma(t, p):
    a = np.abs(t)
    return np.where(a <= 1.0, 0.5 * p * a * a, a**p - (1.0 - 0.5 * p))


@dataclass(frozen=True, eq=False)
class ProperLossFamily:
    """m scalar losses with certified (L, theta, c) properness constants."""

    kinds: np.ndarray
    p: np.ndarray
    coef: np.ndarray
    bump: np.ndarray
    L: float
    theta: float
    c: float
    labels: tuple = field(default=())

    def __post_init__(self):
        kinds = np.asarray(self.kinds, dtype=np.int8)
        m = kinds.size
        arrs = {}
        for name in ("p", "coef", "bump"):
            a = np.broadcast_to(np.asarray(getattr(self, name), dtype=np.float64), (m,)).copy()
            a.setflags(write=False)
            arrs[name] = a
        kinds.setflags(write=False)
        if np.any((arrs["p"] <= 0) | (arrs["p"] > 2)):
            raise ValueError("exponent p must lie in (0, 2]")
        if np.any(arrs["coef"] <= 0):
            raise ValueError("coefficients must be positive")
        if np.any(arrs["bump"] < 0):
            raise ValueError("bump coefficients must be nonnegative")
        if not (self.L > 0 and self.c > 0 and 0 < self.theta < 4):
            raise ValueError(f"invalid properness constants L={self.L}, theta={self.theta}, c={self.c}")
        object.__setattr__(self, "kinds", kinds)
        for name, a in arrs.items():
            object.__setattr__(self, name, a)
        if not self.labels:
            object.__setattr__(self, "labels", tuple(_label(k, q) for k, q in zip(kinds, arrs["p"])))

    # -- constructors -----------------------------------------------------
    @classmethod
    def ell_p(cls, m: int, p: float, coef=1.0) -> "ProperLossFamily":
        return cls(np.full(m, ELL_P), p, coef, 0.0, 1.0, p / 2.0, 1.0)

    @classmethod
    def gamma_p(cls, m: int, p: float, coef=1.0) -> "ProperLossFamily":
        return cls(np.full(m, GAMMA_P), p, coef, 0.0, 1.0, p / 2.0, 1.0)

    @classmethod
    def quadratic(cls, m: int, coef=1.0) -> "ProperLossFamily":
        return cls.ell_p(m, 2.0, coef)

    @classmethod
    def absolute(cls, m: int, coef=1.0) -> "ProperLossFamily":
        return cls.ell_p(m, 1.0, coef)

    @classmethod
    def from_spec(cls, m: int, kind: str, p: float | None = None, coef=1.0) -> "ProperLossFamily":
        if kind == "quadratic":
            return cls.quadratic(m, coef)
        if kind == "absolute":
            return cls.absolute(m, coef)
        if p is None:
            raise ValueError(f"family {kind!r} needs an exponent p")
        if kind == "ell_p":
            return cls.ell_p(m, p, coef)
        if kind == "gamma_p":
            return cls.gamma_p(m, p, coef)
        raise ValueError(f"unknown family kind {kind!r}")

    @classmethod
    def concat(cls, parts) -> "ProperLossFamily":
        """Stack families row-wise.  Constants combine as (max L, min theta, min c)."""
        parts = list(parts)
        return cls(
            np.concatenate([f.kinds for f in parts]),
            np.concatenate([f.p for f in parts]),
            np.concatenate([f.coef for f in parts]),
            np.concatenate([f.bump for f in parts]),
            max(f.L for f in parts),
            min(f.theta for f in parts),
            min(f.c for f in parts),
            sum((f.labels for f in parts), ()),
        )

    def with_params(self, L=None, theta=None, c=None) -> "ProperLossFamily":
        return replace(self, L=self.L if L is None else L,
                       theta=self.theta if theta is None else theta,
                       c=self.c if c is None else c)

    # -- basic properties -------------------------------------------------
    @property
    def m(self) -> int:
        return int(self.kinds.size)

    @property
    def params(self) -> tuple[float, float, float]:
        return (self.L, self.theta, self.c)

    @property
    def homogeneous_degree(self) -> float | None:
        """p if every f_i satisfies f_i(lam t) = |lam|^p f_i(t), else None."""
        if np.any(self.kinds != ELL_P) or np.any(self.bump != 0.0):
            return None
        ps = np.unique(self.p)
        return float(ps[0]) if ps.size == 1 else None

    def signatures(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique (kind, p, coef, bump) rows and the inverse map to indices."""
        table = np.column_stack([self.kinds.astype(np.float64), self.p, self.coef, self.bump])
        return np.unique(table, axis=0, return_inverse=True)

    def describe(self) -> dict:
        kinds = sorted(set(self.labels))
        return {"kinds": kinds, "m": self.m, "L": self.L, "theta": self.theta, "c": self.c,
                "homogeneous_degree": self.homogeneous_degree,
                "bumped": bool(np.any(self.bump > 0))}

    # -- evaluation -------------------------------------------------------
    def _check_index(self, i):
        if not 0 <= i < self.m:
            raise IndexError(f"loss index {i} out of range [0, {self.m})")

    def _values(self, idx, t):
        kinds, p = self.kinds[idx], self.p[idx]
        base = np.where(kinds == GAMMA_P, _gamma(t, p), np.abs(t) ** p)
        return self.coef[idx] * base + self.bump[idx] * (t * t)

    def eval(self, i: int, x: float, ledger: QueryLedger | None = None) -> float:
        """f_i(x) for a single index."""
        self._check_index(i)
        charge(ledger, "loss-eval")
        return float(self._values(np.array([i]), np.array([float(x)]))[0])

    def evaluate(self, t, idx=None, ledger: QueryLedger | None = None) -> np.ndarray:
        """Vectorized f_i(t_i).  ``idx`` defaults to all m indices."""
        t = np.asarray(t, dtype=np.float64)
        idx = np.arange(self.m) if idx is None else np.asarray(idx, dtype=np.int64)
        t, idx = np.broadcast_arrays(t, idx)
        charge(ledger, "loss-eval", t.size)
        return self._values(idx, t)

    def h(self, i: int, x: float, ledger: QueryLedger | None = None) -> float:
        return math.sqrt(self.eval(i, x, ledger))

    def total(self, t, weights=None, ledger: QueryLedger | None = None) -> float:
        """Sum_i w_i f_i(t_i) over all rows (w defaults to ones)."""
        vals = self.evaluate(t, ledger=ledger)
        return float(vals.sum() if weights is None else np.dot(weights, vals))

    def ratio(self, u, idx=None, ledger: QueryLedger | None = None) -> np.ndarray:
        """f_i(sqrt(u_i)) / u_i in closed form, for u > 0.

        The closed form keeps the quadratic case exact: for f(t) = t^2 the
        ratio is exactly 1 with no rounding from the square root.
        """
        u = np.asarray(u, dtype=np.float64)
        idx = np.arange(self.m) if idx is None else np.asarray(idx, dtype=np.int64)
        u, idx = np.broadcast_arrays(u, idx)
        charge(ledger, "loss-eval", u.size)
        kinds, p = self.kinds[idx], self.p[idx]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            ellp = u ** (0.5 * p - 1.0)
            tail = (u ** (0.5 * p) - (1.0 - 0.5 * p)) / u
            gamma = np.where(u <= 1.0, 0.5 * p, tail)
        return self.coef[idx] * np.where(kinds == GAMMA_P, gamma, ellp) + self.bump[idx]

    def ratio_limit_at_zero(self, idx=None) -> np.ndarray:
        """lim_{u -> 0+} f_i(sqrt(u)) / u (inf where it diverges)."""
        idx = np.arange(self.m) if idx is None else np.asarray(idx, dtype=np.int64)
        kinds, p = self.kinds[idx], self.p[idx]
        ellp = np.where(p == 2.0, 1.0, np.inf)
        base = np.where(kinds == GAMMA_P, 0.5 * p, ellp)
        return self.coef[idx] * base + self.bump[idx]


def _label(kind, p):
    if kind == GAMMA_P:
        return "huber" if p == 1.0 else f"gamma_{p:g}"
    return {2.0: "quadratic", 1.0: "absolute"}.get(float(p), f"ell_{p:g}")


def make_modified(family: ProperLossFamily, s_max: float, w0) -> ProperLossFamily:
    """Add the quadratic bump s_max * w0_i * t^2 to every member.

    The result is (max{1, L}, theta, c)-proper.
    """
    w0 = np.asarray(w0, dtype=np.float64)
    if w0.shape != (family.m,):
        raise ValueError(f"w0 must have length {family.m}")
    if np.any(w0 < 0) or not np.all(np.isfinite(w0)):
        raise ValueError("w0 must be finite and nonnegative")
    return replace(family, bump=family.bump + s_max * w0, L=max(1.0, family.L))


# -- properness falsifier -------------------------------------------------

@dataclass
class PropernessReport:
    passed: bool
    checks: int
    violations: list

    def __bool__(self):
        return self.passed


def verify_properness(family: ProperLossFamily, grid_size: int = 25, lambda_max: float = 1e3,
                      max_signatures: int = 32, slack: float = 1e-9) -> PropernessReport:
    """Sampled search for violations of the declared (L, theta, c).

    Passing is necessary, not sufficient, for properness.
    """
    if grid_size < 10:
        raise ValueError("grid_size must be at least 10")
    mags = np.logspace(-math.log10(lambda_max), math.log10(lambda_max), grid_size)
    xs = np.concatenate([-mags[::-1], [0.0], mags])
    lams = np.logspace(0.0, math.log10(lambda_max), grid_size)
    sigs, inverse = family.signatures()
    inverse = np.asarray(inverse).ravel()
    chosen = range(len(sigs))
    if len(sigs) > max_signatures:
        chosen = np.linspace(0, len(sigs) - 1, max_signatures).astype(int)
    L, theta, c = family.params
    violations = []
    checks = 0
    X, Xp = np.meshgrid(xs, xs, indexing="ij")
    Lam, Xh = np.meshgrid(lams, xs, indexing="ij")
    for s in chosen:
        i = int(np.flatnonzero(inverse == s)[0])

        def h(t):
            return np.sqrt(family.evaluate(t, np.full(np.shape(t), i)))

        lhs = np.abs(h(X) - h(Xp))
        rhs = L * h(X - Xp)
        bad = lhs > rhs + slack * np.maximum(1.0, rhs)
        checks += lhs.size
        for a, b in zip(*np.nonzero(bad)):
            violations.append({"index": i, "property": "auto-lipschitz", "x": float(X[a, b]),
                               "x_prime": float(Xp[a, b]), "lhs": float(lhs[a, b]),
                               "rhs": float(rhs[a, b])})
        lhs = h(Lam * Xh)
        rhs = c * Lam**theta * h(Xh)
        bad = lhs < rhs - slack * np.maximum(1.0, rhs)
        checks += lhs.size
        for a, b in zip(*np.nonzero(bad)):
            violations.append({"index": i, "property": "lower-homogeneity", "x": float(Xh[a, b]),
                               "lambda": float(Lam[a, b]), "lhs": float(lhs[a, b]),
                               "rhs": float(rhs[a, b])})
    return PropernessReport(not violations, checks, violations)


# -- anchor search --------------------------------------------------------

ANCHOR_BUDGET_K = 64


def anchor_budget(f1: float, s_min: float, s_max: float, K: int = ANCHOR_BUDGET_K) -> int:
    log_f1 = abs(math.log2(f1)) if f1 > 0 else 1074.0
    return int(math.ceil(K * (1.0 + math.log2(s_max / s_min) + log_f1)))


def find_anchor(family: ProperLossFamily, i: int, s_min: float, s_max: float,
                ledger: QueryLedger | None = None, K: int = ANCHOR_BUDGET_K,
                return_evals: bool = False):
    """Find x > 0 with s_min <= f_i(x) <= s_max.

    Exponential search from x = 1 brackets the target band by factor-2
    steps; bisection on the bracket then lands inside it.  Raises
    :class:`AnchorSearchError` after ``K * (1 + log2(s_max/s_min) + |log2 f_i(1)|)``
    evaluations.
    """
    if not 0.0 < s_min < s_max:
        raise ValueError(f"need 0 < s_min < s_max, got [{s_min}, {s_max}]")
    family._check_index(i)
    evals = 0

    def f(x):
        nonlocal evals
        evals += 1
        return family.eval(i, x, ledger)

    f1 = f(1.0)
    budget = anchor_budget(f1, s_min, s_max, K)

    def done(x):
        return (x, evals) if return_evals else x

    if s_min <= f1 <= s_max:
        return done(1.0)
    x = 1.0
    if f1 < s_min:
        while True:
            lo, x = x, 2.0 * x
            fx = f(x)
            if s_min <= fx <= s_max:
                return done(x)
            if fx > s_max:
                hi = x
                break
            if evals >= budget:
                raise AnchorSearchError(f"index {i}: exponential search exceeded {budget} evaluations")
    else:
        while True:
            hi, x = x, 0.5 * x
            fx = f(x)
            if s_min <= fx <= s_max:
                return done(x)
            if fx < s_min:
                lo = x
                break
            if evals >= budget:
                raise AnchorSearchError(f"index {i}: exponential search exceeded {budget} evaluations")
    # Invariant: f(lo) < s_min and f(hi) > s_max.
    while evals < budget:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if s_min <= fm <= s_max:
            return done(mid)
        if fm < s_min:
            lo = mid
        else:
            hi = mid
    raise AnchorSearchError(f"index {i}: bisection exceeded {budget} evaluations")


def find_anchors(family: ProperLossFamily, s_min: float, s_max: float,
                 ledger: QueryLedger | None = None, K: int = ANCHOR_BUDGET_K) -> np.ndarray:
    """Anchors for every index.  Indices sharing a loss signature share one search."""
    sigs, inverse = family.signatures()
    inverse = np.asarray(inverse).ravel()
    out = np.empty(family.m)
    for s in range(len(sigs)):
        members = np.flatnonzero(inverse == s)
        out[members] = find_anchor(family, int(members[0]), s_min, s_max, ledger, K)
    return out
