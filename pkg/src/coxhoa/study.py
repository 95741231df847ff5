"""Simulation-study harness: operating characteristics over many datasets.

For each dataset index the harness generates a scenario draw, forms the
hypothesis (fixed value or the Wald-limit protocol), applies the requested
methods and appends tidy per-dataset records.  Tail tables summarize the
null P-value distribution at the conventional nominal cut points.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bootstrap import bootstrap_pvalue
from .errors import AdjustmentError, CoxhoaError, DataError, FitError, SimulationError
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
from .refcensor import scenario_generate, substream
from .survdata import rank_reduce

__all__ = ["StudyConfig", "TailTable", "run_study", "analyze_dataset", "records_to_table"]

METHODS = ("first-order", "bootstrap", "rstar", "fixed-riskset")
LOWER_CUTS = (0.01, 0.025, 0.05, 0.10)
CUT_LABELS = ("lt_1", "lt_2.5", "lt_5", "lt_10", "gt_10", "gt_5", "gt_2.5", "gt_1")

RECORD_FIELDS = (
    "dataset", "method", "excluded", "reason", "psi_hat", "se", "psi0",
    "n_failures", "r", "r_star", "np_adj", "inf_adj", "p_lower", "p_upper",
    "completed", "failed", "fallback",
)

CHECKPOINT_EVERY = 100


@dataclass(frozen=True)
class StudyConfig:
    scenario: str
    n: int
    n_datasets: int
    psi_true: float = 0.0
    n_nuisance: int | None = None
    protocol: str = "fixed"  # fixed | wald-limit
    psi0: float = 0.0
    wald_z: float = 1.645
    B: int = 10_000
    R: int = 2_000
    seed: int = 0
    methods: tuple[str, ...] = ("first-order",)

    def __post_init__(self):
        if self.n < 2 or self.n_datasets < 1:
            raise DataError("n and n_datasets must be positive")
        if self.protocol not in ("fixed", "wald-limit"):
            raise DataError("protocol must be 'fixed' or 'wald-limit'")
        if self.B < 1 or self.R < 100:
            raise DataError("B must be >= 1 and R >= 100")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise DataError(f"unknown methods {bad}; choose from {METHODS}")
        object.__setattr__(self, "methods", tuple(self.methods))

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise DataError(f"unknown config keys: {sorted(extra)}")
        if "methods" in d:
            d = dict(d)
            d["methods"] = tuple(d["methods"])
        try:
            return cls(**d)
        except TypeError as e:
            raise DataError(f"invalid study config: {e}") from None

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "n": self.n,
            "n_datasets": self.n_datasets,
            "psi_true": self.psi_true,
            "n_nuisance": self.n_nuisance,
            "protocol": self.protocol,
            "psi0": self.psi0,
            "wald_z": self.wald_z,
            "B": self.B,
            "R": self.R,
            "seed": self.seed,
            "methods": list(self.methods),
        }

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:16]


def _blank_record(dataset: int, method: str) -> dict:
    rec = {f: "" for f in RECORD_FIELDS}
    rec["dataset"] = dataset
    rec["method"] = method
    rec["excluded"] = 0
    rec["fallback"] = 0
    return rec


def analyze_dataset(config: StudyConfig, dataset: int) -> list[dict]:
    """Records for one simulated dataset (one row per requested method)."""
    rng = substream(config.seed, dataset)
    sample = scenario_generate(
        config.scenario, config.n, config.psi_true, rng, n_nuisance=config.n_nuisance
    )
    try:
        rank = rank_reduce(sample)
        pl = PartialLikelihood(rank)
        fit_hat = fit_unconstrained(rank, pl=pl)
    except CoxhoaError as e:
        rec = _blank_record(dataset, "all")
        rec["excluded"], rec["reason"] = 1, type(e).__name__
        return [rec]
    if not fit_hat.converged:
        rec = _blank_record(dataset, "all")
        rec["excluded"], rec["reason"] = 1, fit_hat.status
        return [rec]

    spec0 = HypothesisSpec.coordinate(0, 0.0, rank.p)
    psi_hat = spec0.psi_of(fit_hat.theta)
    se = wald_se(fit_hat, spec0)
    if config.protocol == "wald-limit":
        psi0 = psi_hat - config.wald_z * se
    else:
        psi0 = config.psi0
    spec = spec0.with_psi0(psi0)
    try:
        fit_psi = fit_constrained(rank, spec=spec, pl=pl)
        if not fit_psi.converged:
            raise FitError(fit_psi.status)
        r = signed_root(fit_hat, fit_psi, spec)
    except CoxhoaError as e:
        rec = _blank_record(dataset, "all")
        rec["excluded"], rec["reason"] = 1, f"constrained:{type(e).__name__}"
        return [rec]

    records = []
    cov = None
    for method in config.methods:
        rec = _blank_record(dataset, method)
        rec.update(
            psi_hat=psi_hat, se=se, psi0=psi0, n_failures=rank.n_failures, r=r
        )
        try:
            if method == "first-order":
                p_lo, p_up, _ = first_order_pvalues(r)
                rec.update(p_lower=p_lo, p_upper=p_up)
            elif method == "bootstrap":
                res = bootstrap_pvalue(
                    rank, spec=spec, B=config.B, seed=(config.seed, dataset, 0),
                    fit_hat=fit_hat, fit_psi=fit_psi,
                )
                rec.update(
                    p_lower=res.p_lower, p_upper=res.p_upper,
                    completed=res.completed, failed=res.failed,
                )
            elif method == "rstar":
                if cov is None:
                    cov = estimate_covariances(
                        rank, theta_hat=fit_hat.theta, theta_psi=fit_psi.theta,
                        R=config.R, seed=(config.seed, dataset, 1),
                    )
                try:
                    hoa = skovgaard_rstar(fit_hat, fit_psi, cov, spec)
                    rec.update(
                        r_star=hoa.r_star, np_adj=hoa.NP, inf_adj=hoa.INF,
                        p_lower=hoa.p_lower, p_upper=hoa.p_upper,
                    )
                except AdjustmentError:
                    p_lo, p_up, _ = first_order_pvalues(r)
                    rec.update(p_lower=p_lo, p_upper=p_up, fallback=1)
            elif method == "fixed-riskset":
                try:
                    hoa = fixed_riskset_rstar(fit_hat, fit_psi, spec)
                    rec.update(
                        r_star=hoa.r_star, np_adj=hoa.NP, inf_adj=hoa.INF,
                        p_lower=hoa.p_lower, p_upper=hoa.p_upper,
                    )
                except AdjustmentError:
                    p_lo, p_up, _ = first_order_pvalues(r)
                    rec.update(p_lower=p_lo, p_upper=p_up, fallback=1)
        except (FitError, SimulationError) as e:
            rec["excluded"], rec["reason"] = 1, f"{method}:{type(e).__name__}"
        records.append(rec)
    return records


def _analyze_block(args):
    config, lo, hi = args
    out = []
    for d in range(lo, hi):
        out.extend(analyze_dataset(config, d))
    return lo, out


@dataclass
class TailTable:
    """Empirical tail frequencies (percent) of p_lower per method."""

    methods: tuple[str, ...]
    counts: dict[str, int]
    percents: dict[str, list[float]]
    std_errors: dict[str, list[float]]
    excluded: int = 0
    fallbacks: dict[str, int] = field(default_factory=dict)

    def row(self, method: str) -> dict:
        out = {"method": method, "count": self.counts[method]}
        out.update(zip(CUT_LABELS, self.percents[method]))
        out.update({f"se_{lab}": v for lab, v in zip(CUT_LABELS, self.std_errors[method])})
        return out

    def entry(self, method: str, label: str) -> float:
        return self.percents[method][CUT_LABELS.index(label)]

    def to_csv(self, path: str) -> None:
        cols = ["method", *CUT_LABELS, *[f"se_{lab}" for lab in CUT_LABELS], "count"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for m in self.methods:
                w.writerow({k: _csvfmt(v) for k, v in self.row(m).items()})


def _csvfmt(v):
    if isinstance(v, float):
        return format(v, ".6g")
    return v


def records_to_table(records: list[dict], methods: tuple[str, ...]) -> TailTable:
    counts, percents, ses = {}, {}, {}
    excluded = len({r["dataset"] for r in records if int(r["excluded"] or 0) == 1})
    fallbacks = {}
    for m in methods:
        ps = np.array(
            [
                float(r["p_lower"])
                for r in records
                if r["method"] == m and int(r["excluded"] or 0) == 0 and r["p_lower"] != ""
            ]
        )
        fallbacks[m] = sum(
            int(r["fallback"] or 0) for r in records if r["method"] == m
        )
        N = ps.shape[0]
        counts[m] = N
        pct, se = [], []
        for c in LOWER_CUTS:
            frac = float((ps < c).mean()) if N else np.nan
            pct.append(100 * frac)
            se.append(100 * np.sqrt(frac * (1 - frac) / N) if N else np.nan)
        for c in reversed(LOWER_CUTS):
            frac = float((ps > 1 - c).mean()) if N else np.nan
            pct.append(100 * frac)
            se.append(100 * np.sqrt(frac * (1 - frac) / N) if N else np.nan)
        percents[m] = pct
        ses[m] = se
    return TailTable(
        methods=tuple(methods), counts=counts, percents=percents,
        std_errors=ses, excluded=excluded, fallbacks=fallbacks,
    )


def run_study(
    config: StudyConfig,
    out_prefix: str | None = None,
    jobs: int = 1,
    resume: bool = False,
    progress=None,
) -> tuple[TailTable, list[dict]]:
    """Run the full study; returns (tail table, per-dataset records).

    With ``out_prefix``, records stream to ``<prefix>.records.csv`` with a
    checkpoint state file every CHECKPOINT_EVERY datasets, so interrupted
    runs restart from the last checkpoint when ``resume`` is set.
    """
    records: list[dict] = []
    start = 0
    state_path = f"{out_prefix}.state.json" if out_prefix else None
    records_path = f"{out_prefix}.records.csv" if out_prefix else None
    if out_prefix and resume and os.path.exists(state_path) and os.path.exists(records_path):
        with open(state_path) as fh:
            state = json.load(fh)
        if state.get("digest") != config.digest():
            raise DataError("existing checkpoint belongs to a different config")
        start = int(state["next_dataset"])
        with open(records_path, newline="") as fh:
            records = [dict(row) for row in csv.DictReader(fh)]
        records = [r for r in records if int(r["dataset"]) < start]
    elif out_prefix and not resume:
        for path in (state_path, records_path):
            if os.path.exists(path):
                raise DataError(f"{path} exists; pass resume=True to continue it")

    if records_path and start == 0:
        with open(records_path, "w", newline="") as fh:
            csv.DictWriter(fh, fieldnames=RECORD_FIELDS).writeheader()

    def checkpoint(done_through: int, new_rows: list[dict]) -> None:
        if not records_path:
            return
        with open(records_path, "a", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=RECORD_FIELDS)
            for rec in new_rows:
                w.writerow(rec)
        with open(state_path, "w") as fh:
            json.dump({"digest": config.digest(), "next_dataset": done_through}, fh)

    pending: list[dict] = []
    done = start
    blocks = [
        (config, lo, min(lo + CHECKPOINT_EVERY, config.n_datasets))
        for lo in range(start, config.n_datasets, CHECKPOINT_EVERY)
    ]
    if jobs > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            for blk, (_, rows) in zip(blocks, ex.map(_analyze_block, blocks)):
                records.extend(rows)
                done = blk[2]
                checkpoint(done, rows)
                if progress:
                    progress(done, config.n_datasets)
    else:
        for blk in blocks:
            _, rows = _analyze_block(blk)
            records.extend(rows)
            done = blk[2]
            checkpoint(done, rows)
            if progress:
                progress(done, config.n_datasets)

    table = records_to_table(records, config.methods)
    return table, records
