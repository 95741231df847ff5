"""Second-order adjustments to the signed likelihood root.

Two routes are provided.  The simulation route estimates likelihood
covariances between the unconstrained and constrained estimates under the
reference censoring model (no model fitting involved) and assembles the
adjusted root via sample-space derivative approximations, split into a
nuisance-parameter part NP and an information part INF.  The fixed-risk-set
route treats all risk sets as fixed, a product-multinomial exponential
family whose adjustments come straight from the observed information.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from . import _engine
from .errors import AdjustmentError, FitError, SimulationError
from .fit import FitResult, HypothesisSpec, signed_root
from .partial_lik import LoglinearRisk, PartialLikelihood, RelativeRiskModel
from .refcensor import ReferenceCensoringPlan, TrialSimulator, substream
from .survdata import RankData

__all__ = [
    "CovarianceEstimates",
    "HoaResult",
    "estimate_covariances",
    "skovgaard_rstar",
    "fixed_riskset_rstar",
    "np_inf_diagnostics",
]

DEFAULT_R = 2_000
R_CONTINUITY_EPS = 1e-4


@dataclass(frozen=True)
class CovarianceEstimates:
    """Simulated likelihood covariances between two parameter points.

    s1[j, k] ~ cov{U_j(theta_hat), U_k(theta_psi)};
    s2[j]    ~ cov{U_j(theta_hat), l(theta_psi) - l(theta_hat)};
    i_hat    ~ var{U(theta_hat)}, the expected information, taken from the
    same trials as the other covariances (required for the leading terms
    of the approximations to cancel exactly).
    """

    s1: np.ndarray
    s2: np.ndarray
    i_hat: np.ndarray
    trials: int
    s1_se: np.ndarray
    s2_se: np.ndarray
    i_hat_se: np.ndarray

    def __post_init__(self):
        for name in ("s1", "s2", "i_hat", "s1_se", "s2_se", "i_hat_se"):
            a = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(a)):
                raise SimulationError(f"non-finite entries in {name}")
            object.__setattr__(self, name, a)


@dataclass(frozen=True)
class HoaResult:
    r: float
    u: float
    C: float
    NP: float
    INF: float
    r_star: float
    p_lower: float
    p_upper: float
    method: str

    def as_dict(self) -> dict:
        return {
            "r": self.r,
            "u": self.u,
            "C": self.C,
            "NP": self.NP,
            "INF": self.INF,
            "r_star": self.r_star,
            "p_lower": self.p_lower,
            "p_upper": self.p_upper,
            "method": self.method,
        }


def estimate_covariances(
    rank: RankData,
    model: RelativeRiskModel | None = None,
    theta_hat: np.ndarray | None = None,
    theta_psi: np.ndarray | None = None,
    R: int = DEFAULT_R,
    seed: int | tuple[int, ...] = 0,
) -> CovarianceEstimates:
    """Likelihood covariances from R reference-censoring trials at theta_hat.

    Each trial keeps only U(theta_hat), U(theta_psi) and the loglik
    difference; per-trial values are stored by index and reduced once, so
    results do not depend on execution order.
    """
    if R < 100:
        raise SimulationError("R must be >= 100 for usable covariance estimates")
    model = model if model is not None else LoglinearRisk()
    theta_hat = np.asarray(theta_hat, dtype=float)
    theta_psi = np.asarray(theta_psi, dtype=float)
    if not (np.all(np.isfinite(theta_hat)) and np.all(np.isfinite(theta_psi))):
        raise SimulationError("both parameter points must be finite")
    sim = TrialSimulator(
        theta_hat, rank.covariates,
        ReferenceCensoringPlan.from_rank(rank),
        model=model,
        stratum_subjects=tuple(s.subjects for s in rank.strata),
        stratum_labels=rank.stratum_labels,
    )
    p = rank.p
    same_point = bool(np.array_equal(theta_hat, theta_psi))
    fast = _engine.HAVE_NUMBA and isinstance(model, LoglinearRisk)

    U1 = np.empty((R, p))
    U2 = np.empty((R, p))
    D = np.empty(R)
    path = (seed,) if isinstance(seed, int) else tuple(seed)
    u1 = np.empty(p)
    u2 = np.empty(p)
    jbuf = np.empty((0, 0))
    for b in range(R):
        rng = substream(*path, b)
        if fast:
            A = sim.trial_arrays(rng)
            ll1 = _engine.eval_loglin(A.Z, A.sptr, A.rs, A.rsptr, A.fp, theta_hat, 1, u1, jbuf)
            if same_point:
                ll2 = ll1
                u2[:] = u1
            else:
                ll2 = _engine.eval_loglin(A.Z, A.sptr, A.rs, A.rsptr, A.fp, theta_psi, 1, u2, jbuf)
            if not (np.isfinite(ll1) and np.isfinite(ll2)):
                raise SimulationError("likelihood evaluation failed in a covariance trial")
        else:
            rank_b = sim.trial_rankdata(rng)
            pl_b = PartialLikelihood(rank_b, model)
            ll1, u1 = pl_b.value_grad(theta_hat)
            if same_point:
                ll2, u2 = ll1, u1
            else:
                ll2, u2 = pl_b.value_grad(theta_psi)
        U1[b] = u1
        U2[b] = u2
        D[b] = ll2 - ll1

    U1c = U1 - U1.mean(axis=0)
    U2c = U2 - U2.mean(axis=0)
    Dc = D - D.mean()
    denom = R - 1
    s1 = U1c.T @ U2c / denom
    s2 = U1c.T @ Dc / denom
    i_hat = U1c.T @ U1c / denom

    def cross_se(A, Bm):
        prods = A[:, :, None] * Bm[:, None, :]
        return prods.std(axis=0, ddof=1) / np.sqrt(R)

    s1_se = cross_se(U1c, U2c)
    i_hat_se = cross_se(U1c, U1c)
    s2_se = (U1c * Dc[:, None]).std(axis=0, ddof=1) / np.sqrt(R)

    try:
        np.linalg.cholesky(i_hat)
    except np.linalg.LinAlgError:
        raise SimulationError(
            f"simulated expected information not positive definite after {R} trials"
        ) from None
    return CovarianceEstimates(
        s1=s1, s2=s2, i_hat=i_hat, trials=R,
        s1_se=s1_se, s2_se=s2_se, i_hat_se=i_hat_se,
    )


def _logdet_pd(M: np.ndarray, what: str, diagnostics: dict) -> float:
    if M.shape[0] == 0:
        return 0.0  # empty determinant convention |.| = 1
    sign, logdet = np.linalg.slogdet(M)
    if sign <= 0:
        diagnostics[what] = sign
        raise AdjustmentError(f"{what} has non-positive determinant", diagnostics)
    return float(logdet)


def _adjusted_information(j: np.ndarray, spec: HypothesisSpec) -> float:
    """j_{psi psi | nu} in the (psi, nu) coordinates of the spec."""
    v = float(spec.a @ np.linalg.solve(j, spec.a))
    if v <= 0:
        raise AdjustmentError("adjusted information not positive", {"a_jinv_a": v})
    return 1.0 / v


def skovgaard_rstar(
    fit_hat: FitResult,
    fit_psi: FitResult,
    cov: CovarianceEstimates,
    spec: HypothesisSpec,
) -> HoaResult:
    """Adjusted root r* = r + NP + INF with simulated covariances replacing
    the sample-space derivatives.

    The mixed derivative matrix is approximated by D = S1' i_hat^-1 j_hat
    (parameter rows, sample-space columns) and the first-derivative
    difference by phi = -S2' i_hat^-1 j_hat; the profile sample-space
    derivative combines phi with the nu-rows of D through the nu-nu block,
    C is the nu-block determinant ratio, NP = log(C)/r and
    INF = log(u/r)/r.
    """
    r = signed_root(fit_hat, fit_psi, spec)
    if abs(r) <= R_CONTINUITY_EPS:
        return HoaResult(
            r=r, u=0.0, C=1.0, NP=0.0, INF=0.0, r_star=0.0,
            p_lower=0.5, p_upper=0.5, method="skovgaard",
        )
    j_hat = fit_hat.observed_info
    j_psi = fit_psi.observed_info
    Bc = spec.basis
    bvec = spec.b

    iinv_j = np.linalg.solve(cov.i_hat, j_hat)
    Dmat = cov.s1.T @ iinv_j  # rows: parameter index, cols: sample-space index
    phi = -(cov.s2 @ iinv_j)  # l_{;theta_hat}(theta_hat) - l_{;theta_hat}(theta_psi)

    diagnostics = {"r": r}
    if spec.p == 1:
        bracket = float(phi @ bvec)
        logC = 0.0
    else:
        Dnu = Bc @ Dmat
        Dnn = Dnu @ Bc.T  # nu rows x nu-hat cols
        Dnp = Dnu @ bvec
        phi_psi = float(phi @ bvec)
        phi_nu = phi @ Bc.T
        try:
            corr = float(phi_nu @ np.linalg.solve(Dnn, Dnp))
        except np.linalg.LinAlgError:
            raise AdjustmentError(
                "singular nuisance block in sample-space derivative", diagnostics
            ) from None
        bracket = phi_psi - corr
        logC = (
            _logdet_pd(Dnn, "D_nu_nu", diagnostics)
            - 0.5 * _logdet_pd(Bc @ j_hat @ Bc.T, "j_nu_nu(theta_hat)", diagnostics)
            - 0.5 * _logdet_pd(Bc @ j_psi @ Bc.T, "j_nu_nu(theta_psi)", diagnostics)
        )
    u = bracket / np.sqrt(_adjusted_information(j_hat, spec))
    diagnostics.update({"u": u, "logC": logC})
    if u / r <= 0:
        raise AdjustmentError(
            f"u/r = {u / r:.4g} not positive; INF adjustment undefined", diagnostics
        )
    C = float(np.exp(logC))
    NP = logC / r
    INF = float(np.log(u / r)) / r
    r_star = r + NP + INF
    return HoaResult(
        r=r, u=float(u), C=C, NP=float(NP), INF=INF, r_star=float(r_star),
        p_lower=float(norm.cdf(r_star)), p_upper=float(norm.sf(r_star)),
        method="skovgaard",
    )


def fixed_riskset_rstar(
    fit_hat: FitResult,
    fit_psi: FitResult,
    spec: HypothesisSpec,
    model: RelativeRiskModel | None = None,
) -> HoaResult:
    """Adjusted root in the fixed-risk-set (product multinomial) frame.

    Here theta is canonical, so INF uses the Wald statistic
    w = (psi_hat - psi0) * j_{psi psi | nu}^{1/2} and NP the determinant
    ratio of nuisance information blocks; no simulation is involved.
    """
    if model is not None and not isinstance(model, LoglinearRisk):
        raise AdjustmentError(
            "fixed-risk-set adjustment requires the loglinear (canonical) model", {}
        )
    r = signed_root(fit_hat, fit_psi, spec)
    if abs(r) <= R_CONTINUITY_EPS:
        return HoaResult(
            r=r, u=0.0, C=1.0, NP=0.0, INF=0.0, r_star=0.0,
            p_lower=0.5, p_upper=0.5, method="fixed-riskset",
        )
    diagnostics = {"r": r}
    Bc = spec.basis
    psi_hat = spec.psi_of(fit_hat.theta)
    w = (psi_hat - spec.psi0) * np.sqrt(_adjusted_information(fit_hat.observed_info, spec))
    if w / r <= 0:
        raise AdjustmentError(f"w/r = {w / r:.4g} not positive", diagnostics)
    log_rho = _logdet_pd(
        Bc @ fit_hat.observed_info @ Bc.T, "j_nu_nu(theta_hat)", diagnostics
    ) - _logdet_pd(Bc @ fit_psi.observed_info @ Bc.T, "j_nu_nu(theta_psi)", diagnostics)
    INF = float(np.log(w / r)) / r
    NP = 0.5 * log_rho / r
    r_star = r + NP + INF
    return HoaResult(
        r=r, u=float(w), C=float(np.exp(0.5 * log_rho)), NP=float(NP), INF=INF,
        r_star=float(r_star),
        p_lower=float(norm.cdf(r_star)), p_upper=float(norm.sf(r_star)),
        method="fixed-riskset",
    )


def np_inf_diagnostics(results: list[HoaResult]) -> dict:
    """Summaries of the adjustment components across many analyses:
    means, mean magnitudes, and the least-squares slope of NP on INF."""
    if len(results) < 2:
        raise AdjustmentError("need at least two results", {"count": len(results)})
    np_vals = np.array([h.NP for h in results])
    inf_vals = np.array([h.INF for h in results])
    v = inf_vals.var()
    if v <= 0:
        raise AdjustmentError("INF values are degenerate (zero variance)", {})
    slope = float(np.cov(inf_vals, np_vals, bias=True)[0, 1] / v)
    return {
        "count": len(results),
        "slope_np_on_inf": slope,
        "mean_np": float(np_vals.mean()),
        "mean_inf": float(inf_vals.mean()),
        "mean_abs_np": float(np.abs(np_vals).mean()),
        "mean_abs_inf": float(np.abs(inf_vals).mean()),
    }
