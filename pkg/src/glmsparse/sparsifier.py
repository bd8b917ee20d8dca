"""Importance-sampling sparsifier: sampling, sum estimation, reweighting, validation."""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .losses import ProperLossFamily
from .matrix_io import RowMatrix
from .mlso import (QMLSO_EPSILON, OverestimateVector, qmlso, scale_range,
                   weight_initialize)
from .oracles import DISABLED, NoiseConfig, QueryLedger, charge, noisy_factor

log = logging.getLogger(__name__)

SUM_EPSILON = 0.1
REWEIGHT_SLACK = 1.1


class RangeError(RuntimeError):
    """No test point could be placed inside the requested objective range."""


@dataclass
class SparsifyConfig:
    """Constants the sparsifier commits to.  Every field is echoed into reports."""

    seed: int = 0
    noise: bool = True
    c_m: float = 8.0
    qmlso_epsilon: float = QMLSO_EPSILON
    init_epsilon: float = 0.5
    sum_epsilon: float = SUM_EPSILON
    beta_safety: float = 2.0

    def __post_init__(self):
        if self.c_m <= 0:
            raise ValueError("c_m must be positive")
        for name in ("qmlso_epsilon", "init_epsilon", "sum_epsilon"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")

    def noise_config(self) -> NoiseConfig:
        return NoiseConfig(0.0, self.seed, self.noise)

    def constants(self) -> dict:
        return {
            **asdict(self),
            "M_formula": "ceil(c_m * nu_tilde * ln(max(m, 3)) / (eps/2)^2)",
            "delta_init_formula": "(eps/2) * s_min / (8 * m^3 * s_max)",
            "T_clamp": [1, 200],
            "reweight": "nu_tilde / (1.1 * M * z_i)",
        }


@dataclass
class Sparsifier:
    indices: np.ndarray
    weights: np.ndarray
    m: int
    M: int
    nu_tilde: float
    epsilon: float
    s_min: float
    s_max: float
    seed: int
    family: dict | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.indices.shape != self.weights.shape:
            raise ValueError("indices and weights differ in length")
        if np.any(self.weights <= 0):
            raise ValueError("sparsifier weights must be positive")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= self.m):
            raise ValueError("sparsifier index out of range")
        if np.unique(self.indices).size != self.indices.size:
            raise ValueError("duplicate sparsifier index")

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def dense_weights(self) -> np.ndarray:
        w = np.zeros(self.m)
        w[self.indices] = self.weights
        return w

    @classmethod
    def from_dense(cls, w, **kw) -> "Sparsifier":
        w = np.asarray(w, dtype=np.float64)
        idx = np.flatnonzero(w)
        kw.setdefault("M", int(idx.size))
        kw.setdefault("nu_tilde", float("nan"))
        kw.setdefault("seed", 0)
        return cls(idx, w[idx], w.size, **kw)

    # -- serialization ----------------------------------------------------
    def to_json(self) -> dict:
        out = {
            "indices": self.indices.tolist(),
            "weights": self.weights.tolist(),
            "m": self.m,
            "M": self.M,
            "nu_tilde": self.nu_tilde,
            "epsilon": self.epsilon,
            "s_min": self.s_min,
            "s_max": self.s_max,
            "seed": self.seed,
        }
        if self.family is not None:
            out["family"] = self.family
        return out

    @classmethod
    def from_json(cls, d: dict) -> "Sparsifier":
        m = d.get("m")
        if m is None:
            m = max(d["indices"], default=-1) + 1
        return cls(np.array(d["indices"], dtype=np.int64), np.array(d["weights"], dtype=np.float64),
                   int(m), int(d["M"]), float(d["nu_tilde"]), float(d["epsilon"]),
                   float(d["s_min"]), float(d["s_max"]), int(d["seed"]), d.get("family"))

    def save(self, path) -> None:
        path = Path(path)
        if path.suffix == ".txt":
            path.write_text("".join(f"{i} {w!r}\n" for i, w in zip(self.indices.tolist(),
                                                                   self.weights.tolist())))
        else:
            path.write_text(json.dumps(self.to_json(), sort_keys=True))

    @classmethod
    def load(cls, path, m: int | None = None, **meta) -> "Sparsifier":
        path = Path(path)
        if path.suffix == ".txt":
            pairs = [ln.split() for ln in path.read_text().splitlines() if ln.strip()]
            idx = np.array([int(p[0]) for p in pairs], dtype=np.int64)
            wts = np.array([float(p[1]) for p in pairs])
            if m is None:
                m = int(idx.max()) + 1 if idx.size else 0
            meta.setdefault("M", idx.size)
            meta.setdefault("nu_tilde", float("nan"))
            meta.setdefault("epsilon", float("nan"))
            meta.setdefault("s_min", float("nan"))
            meta.setdefault("s_max", float("nan"))
            meta.setdefault("seed", 0)
            return cls(idx, wts, m, **meta)
        return cls.from_json(json.loads(path.read_text()))


# -- primitives ---------------------------------------------------------------

def _z_array(z) -> np.ndarray:
    return np.asarray(z.z if isinstance(z, OverestimateVector) else z, dtype=np.float64)


def multi_sample(z, M: int, seed: int, ledger: QueryLedger | None = None) -> np.ndarray:
    """M independent indices, each drawn with probability z_i / ||z||_1."""
    z = _z_array(z)
    if M < 1:
        raise ValueError("M must be at least 1")
    if np.any(z < 0) or not np.all(np.isfinite(z)):
        raise ValueError("z must be finite and nonnegative")
    total = z.sum()
    if not total > 0:
        raise ValueError("z has no positive entry")
    charge(ledger, "overestimate-eval", z.size + M)
    rng = np.random.default_rng(seed)
    return rng.choice(z.size, size=M, p=z / total)


def sum_estimate(z, epsilon_sum: float = SUM_EPSILON, noise: NoiseConfig = DISABLED,
                 seed: int = 0, ledger: QueryLedger | None = None) -> float:
    """||z||_1 up to a deterministic factor in [1 - eps_sum, 1 + eps_sum]."""
    if not 0.0 < epsilon_sum < 1.0:
        raise ValueError("epsilon_sum must lie in (0, 1)")
    z = _z_array(z)
    charge(ledger, "overestimate-eval", math.ceil(math.sqrt(max(z.size, 1)) / epsilon_sum))
    total = float(z.sum())
    if not noise.enabled:
        return total
    return total * noisy_factor(noise.with_epsilon(epsilon_sum), "sum-estimate", seed)


def reweight(z, samples, nu_tilde: float, M: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Accumulate nu_tilde / (1.1 M z_i) per draw; returns (indices, weights)."""
    z = _z_array(z)
    samples = np.asarray(samples, dtype=np.int64)
    M = samples.size if M is None else M
    idx, counts = np.unique(samples, return_counts=True)
    return idx, counts * (nu_tilde / (REWEIGHT_SLACK * M * z[idx]))


def sample_count(nu: float, m: int, epsilon: float, c_m: float) -> int:
    return int(math.ceil(c_m * nu * math.log(max(m, 3)) / epsilon**2))


# -- pipeline -----------------------------------------------------------------

def qglm_sparsify(A: RowMatrix, family: ProperLossFamily, epsilon: float, s_min: float,
                  s_max: float, cfg: SparsifyConfig | None = None,
                  ledger: QueryLedger | None = None) -> Sparsifier:
    """Weight initialization, overestimates, sampling and reweighting.

    The pipeline internally targets eps/2 so that the bump introduced by the
    initialization costs at most another eps/2.  For p-homogeneous families
    the scale range collapses to the single top scale.
    """
    cfg = cfg or SparsifyConfig()
    ledger = ledger if ledger is not None else QueryLedger()
    if not 0.0 < s_min < s_max:
        raise ValueError(f"need 0 < s_min < s_max, got [{s_min}, {s_max}]")
    if not 0.0 < epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    if family.m != A.m:
        raise ValueError("family and matrix sizes differ")
    if A.r and epsilon > 1.0 / A.r:
        warnings.warn(f"epsilon={epsilon} exceeds 1/r={1.0 / A.r:.3g}; outside the analysed regime",
                      RuntimeWarning, stacklevel=2)
    m = A.m
    eps = epsilon / 2.0
    noise = cfg.noise_config()
    homogeneous = family.homogeneous_degree is not None
    if homogeneous:
        j_max = math.ceil(math.log2(s_max))
        j_min = j_max
        lo = s_max / 2.0
    else:
        j_min, j_max = scale_range(s_min, s_max, m)
        lo = s_min
    delta = eps * lo / (8.0 * m**3 * s_max)
    bundle = weight_initialize(A, family, 2.0**j_max, delta, noise, ledger,
                               epsilon=cfg.init_epsilon, beta_safety=cfg.beta_safety)
    scheme, over = qmlso(A, bundle.family, bundle.weights, j_min, j_max, bundle.beta,
                         cfg.qmlso_epsilon, noise, ledger)
    nu_tilde = sum_estimate(over, cfg.sum_epsilon, noise, cfg.seed, ledger)
    M = sample_count(nu_tilde, m, eps, cfg.c_m)
    draws = multi_sample(over, M, cfg.seed, ledger)
    charge(ledger, "overestimate-eval", M)
    idx, wts = reweight(over, draws, nu_tilde, M)
    info = {
        "j_min": j_min, "j_max": j_max, "scales": j_max - j_min + 1,
        "homogeneous": homogeneous, "delta_init": delta, "beta": bundle.beta,
        "beta_doublings": bundle.beta_doublings, "c_init": bundle.c_init,
        "alpha": scheme.alpha, "rounds": scheme.rounds, "rounds_clamped": scheme.rounds_clamped,
        "z_norm1": over.norm1, "tau": over.tau,
        "flagged_rows": int(len(scheme.flagged) + len(bundle.flagged)),
        "scheme": scheme, "overestimate": over, "init": bundle,
    }
    return Sparsifier(idx, wts, m, M, nu_tilde, epsilon, s_min, s_max, cfg.seed,
                      family.describe(), info)


# -- validation ---------------------------------------------------------------

def objective(A: RowMatrix, family: ProperLossFamily, x, weights=None) -> float:
    return family.total(A.matvec(x), weights)


def _place_in_range(A, family, direction, target, s_min, s_max, degree):
    """Find lam > 0 with s_min <= F(lam * direction) <= s_max, aiming at ``target``."""
    t = A.matvec(direction)

    def F(lam):
        return family.total(lam * t)

    f1 = F(1.0)
    if not f1 > 0:
        return None
    if degree is not None:
        lam = (target / f1) ** (1.0 / degree)
        return lam if s_min <= F(lam) <= s_max else None
    lo, hi = 1.0, 1.0
    if f1 < target:
        while F(hi) < target:
            lo, hi = hi, 2.0 * hi
            if hi > 1e300:
                return None
    else:
        while F(lo) > target:
            lo, hi = 0.5 * lo, lo
            if lo < 1e-300:
                return None
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = F(mid)
        if s_min <= fm <= s_max and abs(math.log(fm / target)) < 1e-3:
            return mid
        if fm < target:
            lo = mid
        else:
            hi = mid
    mid = 0.5 * (lo + hi)
    return mid if s_min <= F(mid) <= s_max else None


def in_range_points(A: RowMatrix, family: ProperLossFamily, s_min: float, s_max: float,
                    num_points: int, seed: int, retries: int = 100) -> np.ndarray:
    """Random points x with F(x) in [s_min, s_max] (targets log-uniform in the range)."""
    rng = np.random.default_rng(seed)
    degree = family.homogeneous_degree
    pts = []
    attempts = 0
    while len(pts) < num_points:
        if attempts >= retries * num_points:
            raise RangeError(f"could not place points in [{s_min}, {s_max}]")
        attempts += 1
        d = rng.standard_normal(A.n)
        target = math.exp(rng.uniform(math.log(s_min), math.log(s_max)))
        lam = _place_in_range(A, family, d, target, s_min, s_max, degree)
        if lam is not None:
            pts.append(lam * d)
    return np.array(pts)


def validate_sparsifier(A: RowMatrix, family: ProperLossFamily, sp, num_points: int = 200,
                        seed: int = 0, epsilon: float | None = None) -> dict:
    """Relative error of F~ against F at random in-range points (full summation)."""
    if num_points < 1:
        raise ValueError("num_points must be at least 1")
    eps = sp.epsilon if epsilon is None else epsilon
    pts = in_range_points(A, family, sp.s_min, sp.s_max, num_points, seed)
    w = sp.dense_weights()
    rel = np.empty(num_points)
    for k, x in enumerate(pts):
        t = A.matvec(x)
        vals = family.evaluate(t)
        # Same summation order on both sides, so exact weight factors stay exact.
        full = np.dot(np.ones_like(vals), vals)
        rel[k] = abs(np.dot(w, vals) - full) / full
    bad = rel > eps
    return {
        "num_points": num_points,
        "epsilon": eps,
        "max_relative_error": float(rel.max()),
        "mean_relative_error": float(rel.mean()),
        "violations": int(bad.sum()),
        "violation_fraction": float(bad.mean()),
    }
