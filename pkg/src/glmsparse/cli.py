"""Command-line front end.  Every subcommand writes one JSON report."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .losses import ProperLossFamily
from .matrix_io import MatrixIOError, RowMatrix, augment_bias, load_matrix, load_response
from .oracles import QueryLedger, quantum_budget
from .regressors import KINDS, RegressionProblem, solve
from .sparsifier import RangeError, SparsifyConfig, Sparsifier, qglm_sparsify, validate_sparsifier

SEED_ENV = "GLMSPARSE_SEED"
FAMILIES = ("ell_p", "gamma_p", "quadratic", "absolute")


class ConfigError(ValueError):
    """A numeric or combinational flag check failed before execution."""


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _int_like(s: str) -> int:
    v = float(s)
    if not v.is_integer():
        raise argparse.ArgumentTypeError(f"expected an integer, got {s!r}")
    return int(v)


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer") from None


# -- argument parsing ---------------------------------------------------------

def _add_common(p, family=True):
    p.add_argument("--matrix", required=True, help="Matrix Market (.mtx) or CSV file")
    p.add_argument("--format", choices=("matrix-market", "csv"), default=None)
    p.add_argument("--response", help="response vector file; rows are bias-augmented")
    if family:
        p.add_argument("--family", choices=FAMILIES, default=None)
        p.add_argument("--p", type=float, default=None)
    p.add_argument("--seed", type=int, default=None, help=f"defaults to ${SEED_ENV} or 0")


def _add_sparsify_opts(p):
    p.add_argument("--eps", type=float, default=0.3)
    p.add_argument("--s-min", type=float, default=None)
    p.add_argument("--s-max", type=float, default=None)
    p.add_argument("--no-noise", action="store_true", help="exact leverage and sum oracles")
    p.add_argument("--c-m", type=float, default=8.0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="glmsparse", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    for name in ("sparsify", "solve", "validate", "bench", "budget"):
        p = sub.add_parser(name)
        p.add_argument("--report", help="write the JSON report here (default: stdout)")
        p.add_argument("--pretty", action="store_true", help="print a readable table instead")
        if name == "sparsify":
            _add_common(p)
            _add_sparsify_opts(p)
            p.add_argument("--output", help="save the sparsifier (.json or two-column .txt)")
        elif name == "solve":
            _add_common(p, family=False)
            _add_sparsify_opts(p)
            p.add_argument("--kind", choices=KINDS, required=True)
            p.add_argument("--lam", type=float, default=0.0)
            p.add_argument("--p", type=float, default=None)
            p.add_argument("--no-reference", action="store_true")
        elif name == "validate":
            _add_common(p)
            p.add_argument("--sparsifier", required=True)
            p.add_argument("--points", type=int, default=200)
            p.add_argument("--eps", type=float, default=None, help="override the stored epsilon")
            p.add_argument("--max-violation", type=float, default=0.05)
        elif name == "bench":
            _add_common(p)
            _add_sparsify_opts(p)
            p.add_argument("--trials", type=int, default=5)
            p.add_argument("--points", type=int, default=200)
            p.add_argument("--csv", help="also export per-trial rows as CSV")
        else:
            p.add_argument("--m", type=_int_like, required=True)
            p.add_argument("--n", type=_int_like, required=True)
            p.add_argument("--r", type=_int_like, required=True)
            p.add_argument("--eps", type=float, required=True)
            p.add_argument("--scale-ratio", type=float, default=1.0)
    return ap


# -- config resolution ----------------------------------------------------------

def _resolve(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("report", "pretty")}
    if "seed" in cfg and cfg["seed"] is None:
        cfg["seed"] = _default_seed()
    eps = cfg.get("eps")
    if eps is not None and not 0 < eps <= 1:
        raise ConfigError(f"--eps must lie in (0, 1], got {eps}")
    if args.command == "solve" and not eps < 1:
        raise ConfigError("solve needs --eps < 1")
    for lo, hi in (("s_min", "s_max"),):
        if cfg.get(lo) is not None and not cfg[lo] > 0:
            raise ConfigError("--s-min must be positive")
        if cfg.get(lo) is not None and cfg.get(hi) is not None and not cfg[lo] < cfg[hi]:
            raise ConfigError("need --s-min < --s-max")
    if cfg.get("c_m") is not None and not cfg["c_m"] > 0:
        raise ConfigError("--c-m must be positive")
    for key in ("points", "trials"):
        if cfg.get(key) is not None and cfg[key] < 1:
            raise ConfigError(f"--{key} must be at least 1")
    if cfg.get("max_violation") is not None and not 0 <= cfg["max_violation"] <= 1:
        raise ConfigError("--max-violation must lie in [0, 1]")
    if cfg.get("lam") is not None and not cfg["lam"] >= 0:
        raise ConfigError("--lam must be nonnegative")
    fam = cfg.get("family")
    if args.command in ("sparsify", "bench") and fam is None:
        cfg["family"] = fam = "quadratic"
    if fam in ("ell_p", "gamma_p") or (args.command == "solve" and cfg["kind"] in ("ell_p", "gamma_p")):
        if cfg.get("p") is None or not 0 < cfg["p"] <= 2:
            raise ConfigError("--p in (0, 2] is required for this family")
    return cfg


def _load_inputs(cfg) -> tuple[RowMatrix, dict]:
    A = load_matrix(cfg["matrix"], cfg.get("format"))
    hashes = {"matrix": _sha256(cfg["matrix"])}
    if cfg.get("response"):
        b = load_response(cfg["response"])
        hashes["response"] = _sha256(cfg["response"])
        A = augment_bias(A, b)
    return A, hashes


def _family(cfg, m) -> ProperLossFamily:
    return ProperLossFamily.from_spec(m, cfg["family"], cfg.get("p"))


def _default_range(cfg, A) -> tuple[float, float]:
    s_max = cfg["s_max"] if cfg.get("s_max") is not None else float(A.m)
    s_min = cfg["s_min"] if cfg.get("s_min") is not None else min(1.0, s_max / 2)
    if not 0 < s_min < s_max:
        raise ConfigError(f"resolved range [{s_min}, {s_max}] is empty")
    return s_min, s_max


def _sparsify_config(cfg, seed=None) -> SparsifyConfig:
    return SparsifyConfig(seed=cfg["seed"] if seed is None else seed,
                          noise=not cfg["no_noise"], c_m=cfg["c_m"])


def _sparsifier_summary(spr: Sparsifier) -> dict:
    info = spr.info
    return {
        "nnz": spr.nnz, "M": spr.M, "nu_tilde": spr.nu_tilde, "epsilon": spr.epsilon,
        "s_min": spr.s_min, "s_max": spr.s_max, "seed": spr.seed,
        "weight_sum": float(spr.weights.sum()),
        "digest": hashlib.sha256(json.dumps(spr.to_json(), sort_keys=True).encode()).hexdigest(),
        **{k: info[k] for k in ("j_min", "j_max", "scales", "homogeneous", "delta_init", "beta",
                                "beta_doublings", "alpha", "rounds", "rounds_clamped", "z_norm1",
                                "tau", "flagged_rows") if k in info},
    }


# -- subcommands ----------------------------------------------------------------

def cmd_sparsify(cfg, ledger):
    A, hashes = _load_inputs(cfg)
    s_min, s_max = _default_range(cfg, A)
    cfg["s_min"], cfg["s_max"] = s_min, s_max
    fam = _family(cfg, A.m)
    sc = _sparsify_config(cfg)
    spr = qglm_sparsify(A, fam, cfg["eps"], s_min, s_max, sc, ledger)
    spr.family = {"kind": cfg["family"], "p": cfg.get("p")}
    if cfg.get("output"):
        spr.save(cfg["output"])
    return hashes, sc.constants(), _sparsifier_summary(spr), 0


def cmd_solve(cfg, ledger):
    A = load_matrix(cfg["matrix"], cfg.get("format"))
    hashes = {"matrix": _sha256(cfg["matrix"])}
    if not cfg.get("response"):
        raise ConfigError("solve needs --response")
    path = cfg["response"]
    hashes["response"] = _sha256(path)
    if cfg["kind"] == "multiple":
        b = load_matrix(path, "csv").to_dense() if str(path).endswith(".csv") else load_response(path)
    else:
        b = load_response(path)
    problem = RegressionProblem(cfg["kind"], A, b, cfg["lam"], cfg.get("p"))
    sc = _sparsify_config(cfg)
    rep = solve(problem, cfg["eps"], sc, ledger, cfg.get("s_min"), cfg.get("s_max"),
                reference=not cfg["no_reference"])
    cfg["s_min"], cfg["s_max"] = rep.s_min, rep.s_max
    out = rep.to_json()
    out["sparsifier"] = _sparsifier_summary(rep.extra["sparsifier"])
    return hashes, sc.constants(), out, 0


def cmd_validate(cfg, ledger):
    A, hashes = _load_inputs(cfg)
    hashes["sparsifier"] = _sha256(cfg["sparsifier"])
    spr = Sparsifier.load(cfg["sparsifier"], m=A.m)
    if spr.m != A.m:
        raise MatrixIOError(f"sparsifier is for m={spr.m}, matrix has m={A.m}")
    if cfg.get("family") is None:
        if not spr.family:
            raise ConfigError("no --family given and the sparsifier does not record one")
        cfg["family"], cfg["p"] = spr.family["kind"], spr.family.get("p")
    fam = _family(cfg, A.m)
    rep = validate_sparsifier(A, fam, spr, cfg["points"], cfg["seed"], cfg.get("eps"))
    rep["max_violation"] = cfg["max_violation"]
    rep["passed"] = rep["violation_fraction"] <= cfg["max_violation"]
    return hashes, {}, rep, 0 if rep["passed"] else 2


def cmd_bench(cfg, ledger):
    A, hashes = _load_inputs(cfg)
    s_min, s_max = _default_range(cfg, A)
    cfg["s_min"], cfg["s_max"] = s_min, s_max
    fam = _family(cfg, A.m)
    rows = []
    for t in range(cfg["trials"]):
        seed = cfg["seed"] + t
        sc = _sparsify_config(cfg, seed)
        t0 = time.perf_counter()
        spr = qglm_sparsify(A, fam, cfg["eps"], s_min, s_max, sc, ledger)
        elapsed = time.perf_counter() - t0
        val = validate_sparsifier(A, fam, spr, cfg["points"], seed)
        rows.append({"trial": t, "seed": seed, "nnz": spr.nnz, "M": spr.M,
                     "nu_tilde": spr.nu_tilde, "max_relative_error": val["max_relative_error"],
                     "violation_fraction": val["violation_fraction"],
                     "within_support_bound": spr.nnz <= spr.M, "_seconds": elapsed})
    if cfg.get("csv"):
        with open(cfg["csv"], "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=[k for k in rows[0] if not k.startswith("_")],
                                extrasaction="ignore")
            wr.writeheader()
            wr.writerows(rows)
    timings = [r.pop("_seconds") for r in rows]
    result = {"trials": rows,
              "pass_fraction": float(np.mean([r["violation_fraction"] <= 0.05 for r in rows]))}
    return hashes, _sparsify_config(cfg).constants(), result, 0, {"seconds": timings}


def cmd_budget(cfg, ledger):
    rec = quantum_budget(cfg["m"], cfg["n"], cfg["r"], cfg["eps"], cfg["scale_ratio"])
    return {}, {}, rec, 0


COMMANDS = {"sparsify": cmd_sparsify, "solve": cmd_solve, "validate": cmd_validate,
            "bench": cmd_bench, "budget": cmd_budget}


def _pretty(report: dict) -> str:
    lines = []

    def walk(prefix, obj):
        if isinstance(obj, dict):
            for k in obj:
                walk(f"{prefix}.{k}" if prefix else k, obj[k])
        elif isinstance(obj, list) and len(obj) > 8:
            lines.append((prefix, f"[{len(obj)} items]"))
        else:
            lines.append((prefix, json.dumps(obj)))

    walk("", report)
    width = max(len(k) for k, _ in lines)
    return "\n".join(f"{k.ljust(width)}  {v}" for k, v in lines)


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    ledger = QueryLedger()
    meta = {"timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "hostname": platform.node(),
            "version": __version__, "python": platform.python_version()}
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            out = COMMANDS[args.command](cfg, ledger)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, MatrixIOError, RangeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    hashes, constants, result, code = out[:4]
    if len(out) > 4:
        meta.update(out[4])
    meta["warnings"] = sorted({str(w.message) for w in caught})
    report = {"meta": meta, "config": cfg, "inputs": hashes, "constants": constants,
              "ledger": ledger.counts, "result": result}
    text = json.dumps(report, sort_keys=True, indent=2, default=_json_default)
    if args.report:
        Path(args.report).write_text(text + "\n")
    if args.pretty:
        print(_pretty(json.loads(text)))
    elif not args.report:
        print(text)
    return code


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
