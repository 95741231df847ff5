"""Command-line driver: single-dataset tests, confidence intervals, and
simulation studies.

Reports are JSON for single runs and CSV for study tables.  Every report
embeds the tool version, the seed and the effective configuration, which
is sufficient to reproduce it exactly.  Exit codes: 0 success, 2 input or
configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .bootstrap import bootstrap_pvalue, invert_ci
from .errors import AdjustmentError, CoxhoaError, DataError
from .fit import (
    HypothesisSpec,
    first_order_pvalues,
    fit_constrained,
    fit_unconstrained,
    signed_root,
    wald_se,
)
from .hoa import estimate_covariances, fixed_riskset_rstar, skovgaard_rstar
from .partial_lik import PartialLikelihood
from .study import METHODS, StudyConfig, run_study
from .survdata import load_dataset, rank_reduce

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _emit(report: dict, out: str | None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _load_rank(path: str):
    with open(path, "rb") as fh:
        sample = load_dataset(fh)
    return sample, rank_reduce(sample)


def _resolve_psi(psi: str, sample) -> int:
    names = list(sample.covariate_names)
    if psi in names:
        return names.index(psi)
    try:
        idx = int(psi)
    except ValueError:
        raise DataError(f"--psi {psi!r} is neither a covariate name {names} nor an index") from None
    if not 0 <= idx < len(names):
        raise DataError(f"--psi index {idx} out of range for p={len(names)}")
    return idx


def cmd_test(args) -> dict:
    sample, rank = _load_rank(args.data)
    idx = _resolve_psi(args.psi, sample)
    spec = HypothesisSpec.coordinate(idx, args.psi0, rank.p)
    methods = args.method
    pl = PartialLikelihood(rank)
    fit_hat = fit_unconstrained(rank, pl=pl)
    fit_psi = fit_constrained(rank, spec=spec, pl=pl)
    r = signed_root(fit_hat, fit_psi, spec)
    se = wald_se(fit_hat, spec) if fit_hat.converged else None

    out_methods = {}
    for method in methods:
        if method == "first-order":
            p_lo, p_up, p2 = first_order_pvalues(r)
            out_methods[method] = {
                "r": r, "p_lower": p_lo, "p_upper": p_up, "p_two_sided": p2
            }
        elif method == "bootstrap":
            res = bootstrap_pvalue(
                rank, spec=spec, B=args.B, seed=args.seed, n_jobs=args.jobs,
                fit_hat=fit_hat, fit_psi=fit_psi,
            )
            out_methods[method] = res.as_dict()
        elif method == "rstar":
            cov = estimate_covariances(
                rank, theta_hat=fit_hat.theta, theta_psi=fit_psi.theta,
                R=args.R, seed=(args.seed, 1),
            )
            try:
                hoa = skovgaard_rstar(fit_hat, fit_psi, cov, spec)
                entry = hoa.as_dict()
                entry["fallback_first_order"] = False
            except AdjustmentError as e:
                p_lo, p_up, p2 = first_order_pvalues(r)
                entry = {
                    "r": r, "p_lower": p_lo, "p_upper": p_up,
                    "fallback_first_order": True, "diagnostics": e.diagnostics,
                }
            entry["R"] = args.R
            out_methods[method] = entry
        elif method == "fixed-riskset":
            try:
                hoa = fixed_riskset_rstar(fit_hat, fit_psi, spec)
                entry = hoa.as_dict()
                entry["fallback_first_order"] = False
            except AdjustmentError as e:
                p_lo, p_up, p2 = first_order_pvalues(r)
                entry = {
                    "r": r, "p_lower": p_lo, "p_upper": p_up,
                    "fallback_first_order": True, "diagnostics": e.diagnostics,
                }
            out_methods[method] = entry
        else:
            raise DataError(f"unknown method {method!r}; choose from {METHODS}")

    return {
        "schema_version": SCHEMA_VERSION,
        "tool": {"name": "coxhoa", "version": __version__},
        "command": "test",
        "config": {
            "data": args.data, "psi": args.psi, "psi0": args.psi0,
            "methods": list(methods), "B": args.B, "R": args.R, "seed": args.seed,
        },
        "data": {
            "n": rank.n, "p": rank.p, "n_failures": rank.n_failures,
            "censoring_config": [list(map(int, c)) for c in rank.censoring_configs()],
        },
        "estimate": {
            "theta_hat": fit_hat.theta.tolist(),
            "psi_hat": spec.psi_of(fit_hat.theta),
            "se": se,
            "status": fit_hat.status,
            "iterations": fit_hat.iterations,
            "constrained_status": fit_psi.status,
        },
        "methods": out_methods,
    }


def cmd_ci(args) -> dict:
    sample, rank = _load_rank(args.data)
    idx = _resolve_psi(args.psi, sample)
    spec = HypothesisSpec.coordinate(idx, 0.0, rank.p)
    res = invert_ci(
        rank, spec=spec, direction=args.direction, alpha=args.alpha,
        B=args.B, seed=args.seed, n_jobs=args.jobs,
    )
    recheck = {}
    for side, value, which in (
        ("lower", res.lower, "p_upper"),
        ("upper", res.upper, "p_lower"),
    ):
        if np.isfinite(value):
            check = bootstrap_pvalue(
                rank, spec=spec.with_psi0(value), B=args.B,
                seed=(args.seed, 7919), n_jobs=args.jobs,
            )
            recheck[side] = {"psi0": value, which: getattr(check, which)}
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": {"name": "coxhoa", "version": __version__},
        "command": "ci",
        "config": {
            "data": args.data, "psi": args.psi, "alpha": args.alpha,
            "direction": args.direction, "B": args.B, "seed": args.seed,
        },
        "interval": res.as_dict(),
        "recheck": recheck,
    }


def cmd_simstudy(args) -> dict:
    with open(args.config) as fh:
        cfg = StudyConfig.from_dict(json.load(fh))
    out_prefix = args.out or "simstudy"
    table, records = run_study(
        cfg, out_prefix=out_prefix, jobs=args.jobs, resume=args.resume,
        progress=(lambda d, n: print(f"# {d}/{n} datasets", file=sys.stderr))
        if args.verbose else None,
    )
    table_path = f"{out_prefix}.table.csv"
    table.to_csv(table_path)
    summary = {
        "schema_version": SCHEMA_VERSION,
        "tool": {"name": "coxhoa", "version": __version__},
        "command": "simstudy",
        "config": cfg.to_dict(),
        "outputs": {
            "table": table_path,
            "records": f"{out_prefix}.records.csv",
        },
        "datasets": cfg.n_datasets,
        "excluded_datasets": table.excluded,
        "fallbacks": table.fallbacks,
        "table": {m: table.row(m) for m in table.methods},
    }
    with open(f"{out_prefix}.summary.json", "w") as fh:
        fh.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="coxhoa",
        description="Cox partial-likelihood inference beyond first order",
    )
    ap.add_argument("--version", action="version", version=f"coxhoa {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    test = sub.add_parser("test", help="P-values for a scalar hypothesis on one dataset")
    test.add_argument("--data", required=True, help="CSV: time,status,<covs...>[,stratum]")
    test.add_argument("--psi", required=True, help="interest covariate (name or index)")
    test.add_argument("--psi0", type=float, default=0.0, help="hypothesized value")
    test.add_argument(
        "--method", default="first-order,bootstrap",
        type=lambda s: tuple(x.strip() for x in s.split(",") if x.strip()),
        help="comma list from: first-order,bootstrap,rstar,fixed-riskset",
    )
    test.add_argument("--B", type=int, default=10_000, help="bootstrap trials")
    test.add_argument("--R", type=int, default=2_000, help="covariance-simulation trials")
    test.add_argument("--seed", type=int, default=0)
    test.add_argument("--jobs", type=int, default=1, help="worker processes")
    test.add_argument("--out", default=None, help="write JSON report here")
    test.set_defaults(func=cmd_test)

    ci = sub.add_parser("ci", help="confidence bounds by bootstrap test inversion")
    ci.add_argument("--data", required=True)
    ci.add_argument("--psi", required=True)
    ci.add_argument("--alpha", type=float, default=0.05, help="one-sided level per bound")
    ci.add_argument("--direction", choices=("both", "lower", "upper"), default="both")
    ci.add_argument("--B", type=int, default=10_000)
    ci.add_argument("--seed", type=int, default=0)
    ci.add_argument("--jobs", type=int, default=1)
    ci.add_argument("--out", default=None)
    ci.set_defaults(func=cmd_ci)

    study = sub.add_parser("simstudy", help="operating-characteristic study from a config")
    study.add_argument("--config", required=True, help="JSON StudyConfig")
    study.add_argument("--out", default=None, help="output prefix (default: simstudy)")
    study.add_argument("--jobs", type=int, default=1)
    study.add_argument("--resume", action="store_true", help="continue a checkpointed run")
    study.add_argument("--verbose", action="store_true")
    study.set_defaults(func=cmd_simstudy)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        report = args.func(args)
    except DataError as e:
        _emit({"schema_version": SCHEMA_VERSION, "error": {"type": "validation", "message": str(e)}}, None)
        return EXIT_VALIDATION
    except CoxhoaError as e:
        _emit({"schema_version": SCHEMA_VERSION, "error": {"type": "numerical", "message": str(e)}}, None)
        return EXIT_NUMERICAL
    except OSError as e:
        _emit({"schema_version": SCHEMA_VERSION, "error": {"type": "validation", "message": str(e)}}, None)
        return EXIT_VALIDATION
    _emit(report, getattr(args, "out", None) if args.command != "simstudy" else None)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
