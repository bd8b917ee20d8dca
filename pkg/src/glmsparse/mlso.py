"""Approximate weights, weight schemes and multiscale leverage-score overestimates.

The update map

    phi_s(w)_i = (1/s) * f_i(sqrt(u_i)) / u_i,   u_i = sigma_i(W^{1/2} A) / w_i

is a contraction (up to an additive constant) in the metric
d(u, w) = max_i |log(u_i / w_i)|.  A weight w is alpha-approximate at scale
s exactly when d(w, phi_s(w)) <= log(alpha).  :func:`qmlso` iterates the
noisy map at the top scale until the iterate is well conditioned, then
recurses down one dyadic scale at a time and sums the per-scale leverage
estimates into an overestimate vector z.

All logarithms in this module are natural logs.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .leverage import ZERO_LEVERAGE, LeverageEstimator, leverage_and_quadform, _dense
from .losses import ProperLossFamily, find_anchors, make_modified
from .matrix_io import RowMatrix
from .oracles import DISABLED, NoiseConfig, QueryLedger

log = logging.getLogger(__name__)

# Value assigned to weights whose update has no finite limit at a zero row.
CLAMP_WEIGHT = 1e-300
T_CLAMP = (1, 200)
# Relative slack used when comparing against the approximate-weight sandwich bounds.
SANDWICH_RTOL = 1e-12
QMLSO_EPSILON = 0.1
INIT_EPSILON = 0.5


def metric_d(u, w) -> float:
    """max_i |log(u_i / w_i)| for strictly positive vectors."""
    u = np.asarray(u, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if u.shape != w.shape:
        raise ValueError("vectors must have equal length")
    if np.any(u <= 0) or np.any(w <= 0):
        raise ValueError("metric_d needs strictly positive vectors")
    if u.size == 0:
        return 0.0
    return float(np.max(np.abs(np.log(u) - np.log(w))))


def contraction_constants(family: ProperLossFamily) -> tuple[float, float]:
    """(delta, C) = (max{1/2, |theta - 2| / 2}, max{2L/c, 1/c})."""
    L, theta, c = family.params
    return max(0.5, abs(theta - 2.0) / 2.0), max(2.0 * L / c, 1.0 / c)


def _apply_phi(family, w, ratio_u, sigma, s):
    """phi from precomputed u_i = sigma_i / w_i (possibly noisy).  Returns (w', flagged)."""
    zero = sigma <= ZERO_LEVERAGE
    out = np.empty_like(w)
    live = ~zero
    out[live] = family.ratio(ratio_u[live], np.flatnonzero(live)) / s
    flagged = np.zeros(w.size, dtype=bool)
    if np.any(zero):
        idx = np.flatnonzero(zero)
        lim = family.ratio_limit_at_zero(idx) / s
        finite = np.isfinite(lim)
        out[idx[finite]] = lim[finite]
        out[idx[~finite]] = CLAMP_WEIGHT
        flagged[idx[~finite]] = True
    bad = ~(out > 0)
    if np.any(bad):
        out[bad] = CLAMP_WEIGHT
        flagged |= bad
    return out, flagged


def update_phi(A, family: ProperLossFamily, w, s: float,
               estimator: LeverageEstimator | None = None) -> np.ndarray:
    """One application of phi_s (exact scores) or its noisy variant (estimator given).

    Rows with zero leverage take the limit of f_i(sqrt(t))/t as t -> 0 when
    finite (1/s for the quadratic loss); otherwise they are clamped to
    ``CLAMP_WEIGHT``.
    """
    w = np.asarray(w, dtype=np.float64)
    if np.any(w <= 0):
        raise ValueError("update_phi needs strictly positive weights")
    if s <= 0:
        raise ValueError("scale s must be positive")
    if estimator is None:
        sigma, u, _ = leverage_and_quadform(A, w)
    else:
        if not np.array_equal(estimator.w, w):
            raise ValueError("estimator was built for different weights")
        sigma = estimator.sigma
        u = estimator.query_ratio_all()
    return _apply_phi(family, w, u, sigma, s)[0]


def approx_weight_report(A, family: ProperLossFamily, w, s: float, alpha: float) -> dict:
    """Check the alpha-approximate-weight sandwich by two independent routes.

    ``definition``: s/alpha <= f_i(||M^{-1/2} a_i||) / (w_i ||M^{-1/2} a_i||^2) <= alpha s
    with M = sum_i w_i a_i a_i^T, via an eigendecomposition of M.
    ``fixed_point``: d(w, phi_s(w)) <= log(alpha), via the SVD leverage path.
    Zero-leverage rows are excluded from both (their ratio is 0/0).
    """
    a = _dense(A)
    w = np.asarray(w, dtype=np.float64)
    if np.any(w <= 0):
        raise ValueError("weights must be strictly positive")
    gram = a.T @ (w[:, None] * a)
    lam, q = np.linalg.eigh(gram)
    keep = lam > 1e-12 * max(lam.max(), 0.0) if lam.size else lam > 0
    half = q[:, keep] / np.sqrt(lam[keep])
    v = np.linalg.norm(a @ half, axis=1)
    sigma = w * v * v
    live = sigma > ZERO_LEVERAGE
    idx = np.flatnonzero(live)
    ratio = family.evaluate(v[idx], idx) / (w[idx] * v[idx] ** 2)
    lo = s / alpha * (1.0 - SANDWICH_RTOL)
    hi = alpha * s * (1.0 + SANDWICH_RTOL)
    by_definition = bool(np.all((ratio >= lo) & (ratio <= hi)))

    phi = update_phi(a, family, w, s)
    dist = metric_d(w[idx], phi[idx]) if idx.size else 0.0
    by_fixed_point = dist <= math.log(alpha) + SANDWICH_RTOL
    worst = float(np.max(np.abs(np.log(ratio / s)))) if idx.size else 0.0
    return {"definition": by_definition, "fixed_point": bool(by_fixed_point),
            "distance": dist, "definition_log_deviation": worst, "log_alpha": math.log(alpha)}


def is_approx_weight(A, family: ProperLossFamily, w, s: float, alpha: float) -> bool:
    rep = approx_weight_report(A, family, w, s, alpha)
    if rep["definition"] != rep["fixed_point"]:
        # Only possible within rounding of the boundary.
        log.warning("approximate-weight routes disagree: %s", rep)
    return rep["definition"] and rep["fixed_point"]


# -- initialization ---------------------------------------------------------

@dataclass
class InitBundle:
    family: ProperLossFamily
    weights: np.ndarray
    beta: float
    anchors: np.ndarray
    c_init: float
    delta: float
    s_max: float
    beta_doublings: int = 0
    flagged: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def beta_formula(family: ProperLossFamily, m: int, delta: float) -> float:
    L, theta, c = family.params
    return 1.5 * (2.0 * L / c) ** (4.0 / theta) * m / delta


def weight_initialize(A: RowMatrix, family: ProperLossFamily, s_max: float, delta_init: float,
                      noise: NoiseConfig = DISABLED, ledger: QueryLedger | None = None,
                      epsilon: float = INIT_EPSILON, beta_safety: float = 2.0,
                      max_doublings: int = 10) -> InitBundle:
    """Initial weight w0 at scale s_max together with the bumped family f0.

    Anchors t_i satisfy s_max/2 <= f_i(t_i) <= s_max.  Leverage scores of
    H^{1/2} A with H = diag(t^-2) are estimated to within a factor 1 +/- eps and
    w0_i = delta / (sigma~_i t_i^2), i.e. delta / sigma~_i expressed in the
    coordinates of the rescaled rows a_i / t_i.  f0_i(t) = f_i(t) + s_max w0_i t^2.
    beta is recorded from the closed form, multiplied by ``beta_safety`` and
    doubled until the definition check passes.
    """
    if delta_init <= 0:
        raise ValueError("delta_init must be positive")
    if family.m != A.m:
        raise ValueError("family and matrix sizes differ")
    anchors = find_anchors(family, 0.5 * s_max, s_max, ledger)
    h = anchors**-2.0
    est = LeverageEstimator(A, h, epsilon, noise, ledger, tag="init")
    sig = est.query_all()
    flagged = np.flatnonzero(sig <= ZERO_LEVERAGE)
    safe = np.where(sig > ZERO_LEVERAGE, sig, 1.0)
    w0 = delta_init / (safe * anchors**2)
    if flagged.size:
        log.warning("weight_initialize: %d zero-leverage rows clamped", flagged.size)
    fam0 = make_modified(family, s_max, w0)
    beta = beta_safety * beta_formula(family, A.m, delta_init)
    doublings = 0
    while not is_approx_weight(A, fam0, w0, s_max, beta):
        if doublings >= max_doublings:
            raise RuntimeError(f"initial weight not {beta:.3g}-approximate after {doublings} doublings")
        beta *= 2.0
        doublings += 1
    L, theta, c = family.params
    c_init = 2.0 * (2.0 * L / c) ** (2.0 / theta)
    return InitBundle(fam0, w0, beta, anchors, c_init, delta_init, s_max, doublings, flagged)


# -- weight schemes and QMLSO ----------------------------------------------

@dataclass
class WeightScheme:
    j_min: int
    j_max: int
    weights: dict
    alpha: float
    rounds: int = 0
    rounds_raw: float = float("nan")
    rounds_clamped: bool = False
    trace: list = field(default_factory=list)
    flagged: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def scales(self) -> list[int]:
        return list(range(self.j_min, self.j_max + 1))

    def check(self, A, family: ProperLossFamily, alpha: float | None = None) -> dict:
        """Both scheme conditions, evaluated with exact leverage scores."""
        alpha = self.alpha if alpha is None else alpha
        la = math.log(alpha)
        fixed = {}
        for j in self.scales:
            w = self.weights[j]
            sigma = leverage_and_quadform(A, w)[0]
            live = sigma > ZERO_LEVERAGE
            phi = update_phi(A, family, w, 2.0**j)
            fixed[j] = metric_d(w[live], phi[live]) if live.any() else 0.0
        consecutive = {j: metric_d(self.weights[j + 1], self.weights[j])
                       for j in self.scales[:-1]}
        ok = all(v <= la for v in fixed.values()) and all(v <= la for v in consecutive.values())
        return {"passed": ok, "log_alpha": la, "fixed_point": fixed, "consecutive": consecutive}


@dataclass
class OverestimateVector:
    z: np.ndarray
    tau: float
    epsilon: float

    @property
    def norm1(self) -> float:
        return float(self.z.sum())

    def __len__(self):
        return self.z.size


def contraction_rounds(family: ProperLossFamily, beta: float, epsilon: float = QMLSO_EPSILON):
    """(T, raw value, clamped) for the contraction phase."""
    delta, C = contraction_constants(family)
    target = (1.0 - epsilon) / (1.0 + epsilon) ** 2 * C
    try:
        raw = (math.log(math.log(target)) - math.log(math.log(beta))) / math.log(delta)
    except ValueError:
        raw = float("nan")
    if not math.isfinite(raw):
        return T_CLAMP[0], raw, True
    t = math.ceil(raw)
    clamped = min(max(t, T_CLAMP[0]), T_CLAMP[1])
    return clamped, raw, clamped != t


def certified_alpha(family: ProperLossFamily) -> float:
    """4 alpha^2 with alpha = C^{3/(1-delta)}."""
    delta, C = contraction_constants(family)
    return 4.0 * C ** (6.0 / (1.0 - delta))


def qmlso(A: RowMatrix, family: ProperLossFamily, w0, j_min: int, j_max: int, beta: float,
          epsilon: float = QMLSO_EPSILON, noise: NoiseConfig = DISABLED,
          ledger: QueryLedger | None = None) -> tuple[WeightScheme, OverestimateVector]:
    """Multiscale leverage-score overestimates from a beta-approximate top-scale weight.

    ``w0`` must be beta-approximate at scale 2**j_max.  ``j_min == j_max`` is
    accepted and yields a single-scale scheme.
    """
    w = np.asarray(w0, dtype=np.float64).copy()
    if np.any(w <= 0):
        raise ValueError("w0 must be strictly positive")
    if j_min > j_max:
        raise ValueError("need j_min <= j_max")
    T, raw, clamped = contraction_rounds(family, beta, epsilon)
    if clamped:
        log.warning("qmlso: round count %s clamped to %d", raw, T)
    s_top = 2.0**j_max
    flagged = np.zeros(w.size, dtype=bool)
    trace = []
    for t in range(T):
        est = LeverageEstimator(A, w, epsilon, noise, ledger, tag=f"qmlso/itr/{t}")
        nxt, fl = _apply_phi(family, w, est.query_ratio_all(), est.sigma, s_top)
        trace.append(metric_d(w, nxt))
        flagged |= fl
        w = nxt
    weights = {j_max: w}
    estimators = {}
    for j in range(j_max - 1, j_min - 1, -1):
        est = LeverageEstimator(A, weights[j + 1], epsilon, noise, ledger, tag=f"qmlso/scale/{j + 1}")
        estimators[j + 1] = est
        weights[j], fl = _apply_phi(family, weights[j + 1], est.query_ratio_all(), est.sigma, 2.0**j)
        flagged |= fl
    estimators[j_min] = LeverageEstimator(A, weights[j_min], epsilon, noise, ledger,
                                          tag=f"qmlso/scale/{j_min}")
    total = np.zeros(A.m)
    exact_max = np.zeros(A.m)
    rank = 0
    for j in range(j_min, j_max + 1):
        est = estimators[j]
        total += est.query_all()
        exact_max = np.maximum(exact_max, est.sigma)
        rank = max(rank, est.rank)
    z = total / (1.0 - epsilon)
    n_scales = j_max - j_min + 1
    tau = (1.0 + epsilon) / (1.0 - epsilon) * n_scales * A.n
    if np.any(z < exact_max * (1.0 - 1e-12)):
        raise AssertionError("overestimate fails to dominate the multiscale leverage scores")
    if z.sum() > (1.0 + epsilon) / (1.0 - epsilon) * n_scales * rank * (1.0 + 1e-9):
        raise AssertionError("overestimate exceeds its l1 budget")
    scheme = WeightScheme(j_min, j_max, weights, certified_alpha(family), T, raw, clamped,
                          trace, np.flatnonzero(flagged))
    return scheme, OverestimateVector(z, tau, epsilon)


def scale_range(s_min: float, s_max: float, m: int) -> tuple[int, int]:
    """(floor(log2 s_min - 4 log2 m), ceil(log2 s_max))."""
    return (math.floor(math.log2(s_min) - 4.0 * math.log2(m)), math.ceil(math.log2(s_max)))
