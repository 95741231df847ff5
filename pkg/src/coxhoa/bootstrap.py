"""Parametric-bootstrap P-values under the reference censoring model and
confidence intervals by test inversion.

Each trial is generated at the constrained estimate with the analysis
dataset's censoring plan, refit both unconstrained and constrained, and
its signed root compared against the observed one.  Add-one smoothing
(count+1)/(completed+1) avoids exact-zero P-values; ties count toward
both tails.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _engine
from .errors import FitError, SimulationError
from .fit import (
    FitResult,
    HypothesisSpec,
    fit_constrained,
    fit_unconstrained,
    signed_root,
    wald_se,
)
from .partial_lik import LoglinearRisk, PartialLikelihood, RelativeRiskModel
from .refcensor import ReferenceCensoringPlan, TrialSimulator, substream
from .survdata import RankData

__all__ = ["BootstrapResult", "bootstrap_pvalue", "invert_ci", "CiResult"]

DEFAULT_B = 10_000
MIN_COMPLETED_FRACTION = 0.5
_CHUNK = 500


@dataclass(frozen=True)
class BootstrapResult:
    B: int
    completed: int
    failed: int
    r_obs: float
    count_le: int
    count_ge: int
    p_lower: float
    p_upper: float
    p_two_sided: float
    seed: object

    def as_dict(self) -> dict:
        return {
            "B": self.B,
            "completed": self.completed,
            "failed": self.failed,
            "r_obs": self.r_obs,
            "count_le": self.count_le,
            "count_ge": self.count_ge,
            "p_lower": self.p_lower,
            "p_upper": self.p_upper,
            "p_two_sided": self.p_two_sided,
            "seed": list(self.seed) if isinstance(self.seed, tuple) else self.seed,
        }


def _seed_path(seed) -> tuple[int, ...]:
    if isinstance(seed, (tuple, list)):
        return tuple(int(s) for s in seed)
    return (int(seed),)


def trial_signed_roots(
    rank: RankData,
    theta_gen: np.ndarray,
    spec: HypothesisSpec,
    seed,
    indices: range,
    model: RelativeRiskModel | None = None,
) -> np.ndarray:
    """Signed roots r_b for reference trials at theta_gen (NaN = failed).

    Fits both models per trial; divergence-flagged fits still contribute
    through their plateau loglik, failures are NaN.
    """
    model = model if model is not None else LoglinearRisk()
    sim = TrialSimulator(
        theta_gen, rank.covariates,
        ReferenceCensoringPlan.from_rank(rank),
        model=model,
        stratum_subjects=tuple(s.subjects for s in rank.strata),
        stratum_labels=rank.stratum_labels,
    )
    path = _seed_path(seed)
    out = np.empty(len(indices))
    fast = _engine.HAVE_NUMBA and isinstance(model, LoglinearRisk)
    p = rank.p
    eye = np.eye(p)
    zero = np.zeros(p)
    base = spec.psi0 * spec.b
    Tmap = np.ascontiguousarray(spec.basis.T)
    for k, b in enumerate(indices):
        rng = substream(*path, b)
        try:
            if fast:
                A = sim.trial_arrays(rng)
                out[k] = _kernel_trial_root(A, spec, base, Tmap, zero, eye)
            else:
                rank_b = sim.trial_rankdata(rng)
                pl_b = PartialLikelihood(rank_b, model)
                hat_b = fit_unconstrained(rank_b, pl=pl_b)
                psi_b = fit_constrained(rank_b, spec=spec, pl=pl_b)
                if not (hat_b.usable and psi_b.usable):
                    out[k] = np.nan
                    continue
                out[k] = signed_root(hat_b, psi_b, spec)
        except (FitError, SimulationError):
            out[k] = np.nan
    return out


def _kernel_trial_root(A, spec, base, Tmap, zero, eye):
    """r for one trial through the compiled Newton path (NaN = failed)."""
    _, th_hat, ll_hat, _, _, st_hat, _ = _engine.newton_loglin(
        A.Z, A.sptr, A.rs, A.rsptr, A.fp, zero, eye
    )
    if st_hat not in (_engine.STATUS_CONVERGED, _engine.STATUS_DIVERGENT):
        return np.nan
    if spec.p == 1:
        U = np.empty(1)
        J = np.empty((1, 1))
        ll_psi = _engine.eval_loglin(A.Z, A.sptr, A.rs, A.rsptr, A.fp, base, 0, U, J)
        if not np.isfinite(ll_psi):
            return np.nan
    else:
        _, _, ll_psi, _, _, st_psi, _ = _engine.newton_loglin(
            A.Z, A.sptr, A.rs, A.rsptr, A.fp, base, Tmap
        )
        if st_psi not in (_engine.STATUS_CONVERGED, _engine.STATUS_DIVERGENT):
            return np.nan
    drop = ll_hat - ll_psi
    if drop < 0:
        if drop < -1e-10:
            return np.nan
        drop = 0.0
    return float(np.sign(spec.a @ th_hat - spec.psi0) * np.sqrt(2.0 * drop))


def _trial_block(args):
    rank, theta_gen, spec, seed, lo, hi = args
    return lo, trial_signed_roots(rank, theta_gen, spec, seed, range(lo, hi))


def bootstrap_pvalue(
    rank: RankData,
    model: RelativeRiskModel | None = None,
    spec: HypothesisSpec | None = None,
    B: int = DEFAULT_B,
    seed: int | tuple[int, ...] = 0,
    n_jobs: int = 1,
    fit_hat: FitResult | None = None,
    fit_psi: FitResult | None = None,
) -> BootstrapResult:
    """Bootstrap P-values for psi(theta) = psi0 on the analysis data.

    Trials use per-index substreams of ``seed`` and reduce to counts in
    index order, so results are identical for any ``n_jobs``.  Trials
    whose fits fail are discarded and counted; more than half failing
    aborts with a diagnostic.
    """
    if spec is None:
        raise FitError("a HypothesisSpec is required")
    if B < 1:
        raise SimulationError("B must be >= 1")
    model = model if model is not None else LoglinearRisk()
    pl = PartialLikelihood(rank, model)
    if fit_hat is None:
        fit_hat = fit_unconstrained(rank, pl=pl)
    if fit_psi is None:
        fit_psi = fit_constrained(rank, spec=spec, pl=pl)
    if not fit_psi.converged:
        raise FitError(f"constrained fit on analysis data did not converge ({fit_psi.status})")
    if not fit_hat.usable:
        raise FitError(f"unconstrained fit on analysis data failed ({fit_hat.status})")
    r_obs = signed_root(fit_hat, fit_psi, spec)

    blocks = [
        (rank, fit_psi.theta, spec, seed, lo, min(lo + _CHUNK, B))
        for lo in range(0, B, _CHUNK)
    ]
    roots = np.empty(B)
    if n_jobs > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            for lo, block in ex.map(_trial_block, blocks):
                roots[lo : lo + block.shape[0]] = block
    else:
        for blk in blocks:
            lo, block = _trial_block(blk)
            roots[lo : lo + block.shape[0]] = block

    ok = np.isfinite(roots)
    completed = int(ok.sum())
    failed = B - completed
    if completed < MIN_COMPLETED_FRACTION * B:
        raise SimulationError(
            f"only {completed}/{B} bootstrap trials completed; data too unstable"
        )
    r_ok = roots[ok]
    count_le = int((r_ok <= r_obs).sum())
    count_ge = int((r_ok >= r_obs).sum())
    p_lower = (1 + count_le) / (completed + 1)
    p_upper = (1 + count_ge) / (completed + 1)
    return BootstrapResult(
        B=B,
        completed=completed,
        failed=failed,
        r_obs=r_obs,
        count_le=count_le,
        count_ge=count_ge,
        p_lower=p_lower,
        p_upper=p_upper,
        p_two_sided=min(1.0, 2.0 * min(p_lower, p_upper)),
        seed=seed if isinstance(seed, int) else tuple(seed),
    )


@dataclass(frozen=True)
class CiResult:
    lower: float
    upper: float
    alpha: float
    psi_hat: float
    se: float
    trace: tuple[dict, ...]

    def as_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "alpha": self.alpha,
            "psi_hat": self.psi_hat,
            "se": self.se,
            "trace": list(self.trace),
        }


def invert_ci(
    rank: RankData,
    model: RelativeRiskModel | None = None,
    spec: HypothesisSpec | None = None,
    direction: str = "both",
    alpha: float = 0.05,
    B: int = DEFAULT_B,
    seed: int | tuple[int, ...] = 0,
    n_jobs: int = 1,
) -> CiResult:
    """Confidence bounds as hypothesis values not rejected at level alpha.

    The lower bound solves p_upper(psi0) = alpha, the upper bound solves
    p_lower(psi0) = alpha, each by bisection over psi_hat +/- 5 Wald SE
    under common random numbers (the same seed and trial indices at every
    candidate psi0, making the p-function piecewise monotone).  One-sided
    requests return an infinite bound on the open side.
    """
    if direction not in ("both", "lower", "upper"):
        raise SimulationError(f"direction must be both|lower|upper, got {direction!r}")
    if not 0 < alpha < 1:
        raise SimulationError("alpha must be in (0, 1)")
    if 1.0 / (B + 1) >= alpha:
        raise SimulationError(f"B={B} too small to resolve alpha={alpha}")
    model = model if model is not None else LoglinearRisk()
    pl = PartialLikelihood(rank, model)
    fit_hat = fit_unconstrained(rank, pl=pl)
    if not fit_hat.converged:
        raise FitError(f"unconstrained fit did not converge ({fit_hat.status})")
    psi_hat = spec.psi_of(fit_hat.theta)
    se = wald_se(fit_hat, spec)

    trace: list[dict] = []

    def pvals(psi0: float):
        res = bootstrap_pvalue(
            rank, model, spec.with_psi0(psi0), B=B, seed=seed, n_jobs=n_jobs,
            fit_hat=fit_hat,
        )
        trace.append({"psi0": psi0, "p_lower": res.p_lower, "p_upper": res.p_upper})
        return res

    lower = -np.inf
    upper = np.inf
    if direction in ("both", "lower"):
        lower = _solve_endpoint(pvals, "p_upper", psi_hat - 5 * se, psi_hat, alpha, se)
    if direction in ("both", "upper"):
        upper = _solve_endpoint(pvals, "p_lower", psi_hat + 5 * se, psi_hat, alpha, se)
    return CiResult(
        lower=lower, upper=upper, alpha=alpha, psi_hat=psi_hat, se=se,
        trace=tuple(trace),
    )


def _solve_endpoint(pvals, which, far, near, alpha, se, max_steps=40):
    """Bisect p(psi0) = alpha between a far bracket end and psi_hat.

    Under common random numbers p is monotone along the bracket; when the
    bisection observes a sign-pattern violation it falls back to a
    101-point grid scan and returns the outermost crossing.
    """
    g_far = getattr(pvals(far), which) - alpha
    g_near = getattr(pvals(near), which) - alpha
    if g_near < 0 or g_far > 0:
        raise SimulationError(
            f"no sign change on bracket: p({far:.6g})-alpha={g_far:.4g}, "
            f"p({near:.6g})-alpha={g_near:.4g}"
        )
    lo, hi = far, near  # p(lo) <= alpha <= p(hi); psi values, not ordered
    g_lo, g_hi = g_far, g_near
    for _ in range(max_steps):
        if abs(hi - lo) < 1e-3 * se:
            break
        mid = 0.5 * (lo + hi)
        g_mid = getattr(pvals(mid), which) - alpha
        if g_mid < min(g_lo, g_hi) - 1e-12 or g_mid > max(g_lo, g_hi) + 1e-12:
            return _grid_fallback(pvals, which, far, near, alpha)
        if g_mid >= 0:
            hi, g_hi = mid, g_mid
        else:
            lo, g_lo = mid, g_mid
    return 0.5 * (lo + hi)


def _grid_fallback(pvals, which, far, near, alpha):
    grid = np.linspace(far, near, 101)
    gs = [getattr(pvals(x), which) - alpha for x in grid]
    for k in range(len(grid) - 1):
        if gs[k] < 0 <= gs[k + 1]:
            return 0.5 * (grid[k] + grid[k + 1])
    raise SimulationError("no crossing found on fallback grid")
