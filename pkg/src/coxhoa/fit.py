"""Unconstrained and hypothesis-constrained maximization of the partial
likelihood, the signed likelihood root, and first-order P-values."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, qr
from scipy.stats import norm

from . import _engine
from .errors import FitError
from .partial_lik import LoglinearRisk, PartialLikelihood, RelativeRiskModel
from .survdata import RankData

__all__ = [
    "HypothesisSpec",
    "FitResult",
    "fit_unconstrained",
    "fit_constrained",
    "signed_root",
    "first_order_pvalues",
    "wald_se",
]

GRAD_TOL = 1e-8
MAX_ITER = 50
MAX_HALVINGS = 30
DIVERGENCE_BOUND = 50.0
PLATEAU_GAIN = 1e-10
# a gradient-converged fit this far out is a monotone-likelihood plateau,
# not an interior maximum (the score decays to zero along the recession
# direction long before the hard bound is reached)
MONOTONE_THETA_BOUND = 10.0

CONVERGED = "converged"
DIVERGENT = "monotone-likelihood-divergent"
FAILED = "failed"


@dataclass(frozen=True)
class HypothesisSpec:
    """Scalar linear hypothesis psi(theta) = a . theta = psi0.

    ``basis`` holds an orthonormal completion of ``a`` (rows span the
    complement), fixing the nuisance coordinates nu = basis @ theta; it is
    constructed deterministically via QR so determinant-based quantities
    downstream are reproducible.  Only linear functionals are supported.
    """

    a: np.ndarray
    psi0: float
    basis: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if callable(self.a):
            raise FitError("nonlinear interest functions are not supported; pass a vector a")
        a = np.atleast_1d(np.array(self.a, dtype=float))
        if a.ndim != 1 or not np.all(np.isfinite(a)) or np.allclose(a, 0):
            raise FitError("hypothesis vector a must be a finite nonzero vector")
        basis = self.basis
        if basis is None:
            basis = _orthonormal_complement(a)
        else:
            basis = np.array(basis, dtype=float)
            p = a.shape[0]
            if basis.shape != (p - 1, p):
                raise FitError("completion basis must be (p-1) x p")
            if abs(np.linalg.det(np.vstack([a, basis]))) < 1e-12:
                raise FitError("completion basis must complete a to an invertible matrix")
        a.flags.writeable = False
        basis.flags.writeable = False
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "psi0", float(self.psi0))

    @classmethod
    def coordinate(cls, index: int, psi0: float, p: int) -> "HypothesisSpec":
        a = np.zeros(p)
        a[index] = 1.0
        return cls(a=a, psi0=psi0)

    @property
    def p(self) -> int:
        return self.a.shape[0]

    @property
    def b(self) -> np.ndarray:
        """Right inverse of a (a . b = 1) consistent with the basis."""
        return self.a / float(self.a @ self.a)

    def psi_of(self, theta: np.ndarray) -> float:
        return float(self.a @ theta)

    def theta_of(self, psi: float, nu: np.ndarray) -> np.ndarray:
        return psi * self.b + self.basis.T @ nu

    def with_psi0(self, psi0: float) -> "HypothesisSpec":
        return HypothesisSpec(a=self.a.copy(), psi0=psi0, basis=self.basis.copy())


def _orthonormal_complement(a: np.ndarray) -> np.ndarray:
    p = a.shape[0]
    if p == 1:
        return np.zeros((0, 1))
    Q, _ = qr(np.column_stack([a, np.eye(p)]), mode="economic")
    if Q[:, 0] @ a < 0:
        Q = -Q
    return np.ascontiguousarray(Q[:, 1:p].T)


@dataclass(frozen=True)
class FitResult:
    """Maximizer (full or constrained), its likelihood quantities and
    convergence diagnostics.  ``observed_info`` is the full p x p observed
    information at ``theta``; (psi, nu) blocks are derived downstream."""

    theta: np.ndarray
    loglik: float
    score_norm: float
    observed_info: np.ndarray
    status: str
    iterations: int

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    @property
    def usable(self) -> bool:
        """Divergence-flagged fits still carry a valid plateau loglik."""
        return self.status in (CONVERGED, DIVERGENT)


def _solve_step(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Newton direction H^-1 g with escalating ridge regularization."""
    if H.shape[0] == 0:
        return np.zeros(0)
    scale = max(float(np.trace(H)) / H.shape[0], 1e-8)
    ridge = 0.0
    for _ in range(8):
        try:
            c = cho_factor(H + ridge * np.eye(H.shape[0]), lower=True)
            return cho_solve(c, g)
        except np.linalg.LinAlgError:
            ridge = scale * 1e-8 if ridge == 0.0 else ridge * 100.0
    raise FitError("singular information matrix; regularization failed")


def _newton(value_grad_hess, x0: np.ndarray):
    """Maximize a concave objective by Newton steps with step halving.

    Returns (x, loglik, grad, hess, status, iterations).  Detects monotone
    likelihood: iterates walking past DIVERGENCE_BOUND with per-step gain
    below PLATEAU_GAIN, or gradient convergence far outside
    MONOTONE_THETA_BOUND (the plateau of a divergent likelihood).
    """
    x = np.asarray(x0, dtype=float).copy()
    ll, g, H = value_grad_hess(x)
    status = FAILED
    it = 0
    for it in range(1, MAX_ITER + 1):
        if x.shape[0] == 0 or np.max(np.abs(g)) < GRAD_TOL:
            status = CONVERGED
            it -= 1
            break
        step = _solve_step(H, g)
        gain = None
        for _ in range(MAX_HALVINGS + 1):
            try:
                ll_new, g_new, H_new = value_grad_hess(x + step)
            except FitError:
                ll_new = -np.inf
            if np.isfinite(ll_new) and ll_new >= ll:
                gain = ll_new - ll
                x = x + step
                ll, g, H = ll_new, g_new, H_new
                break
            step = step / 2.0
        if gain is None:
            # no uphill step found at this iterate
            status = FAILED
            break
        if np.max(np.abs(x)) > DIVERGENCE_BOUND and gain < PLATEAU_GAIN:
            status = DIVERGENT
            break
    else:
        it = MAX_ITER
    if status == FAILED and it >= MAX_ITER and np.max(np.abs(g)) < GRAD_TOL:
        status = CONVERGED
    if status == CONVERGED and x.shape[0] > 0 and np.max(np.abs(x)) > MONOTONE_THETA_BOUND:
        status = DIVERGENT
    return x, ll, g, H, status, it


_STATUS_NAMES = {
    _engine.STATUS_CONVERGED: CONVERGED,
    _engine.STATUS_DIVERGENT: DIVERGENT,
    _engine.STATUS_FAILED: FAILED,
}


def _kernel_fit(arrays, base: np.ndarray, Tmap: np.ndarray) -> FitResult:
    x, theta, ll, gnorm, Jfull, status, it = _engine.newton_loglin(
        arrays.Z, arrays.sptr, arrays.rs, arrays.rsptr, arrays.fp, base, Tmap
    )
    if status == _engine.STATUS_SINGULAR:
        raise FitError("singular information matrix; regularization failed")
    if not np.isfinite(ll):
        raise FitError("likelihood not finite at the starting point")
    return FitResult(
        theta=theta,
        loglik=float(ll),
        score_norm=float(gnorm) if Tmap.shape[1] else 0.0,
        observed_info=Jfull,
        status=_STATUS_NAMES[status],
        iterations=int(it),
    )


def fit_unconstrained(
    rank: RankData,
    model: RelativeRiskModel | None = None,
    pl: PartialLikelihood | None = None,
) -> FitResult:
    """Maximize the partial likelihood by Newton iteration from theta = 0."""
    pl = pl if pl is not None else PartialLikelihood(rank, model or LoglinearRisk())
    if pl._arrays is not None:
        return _kernel_fit(pl._arrays, np.zeros(pl.p), np.eye(pl.p))
    theta, ll, g, H, status, it = _newton(pl.value_grad_hess, np.zeros(pl.p))
    return FitResult(
        theta=theta,
        loglik=ll,
        score_norm=float(np.max(np.abs(g))) if g.size else 0.0,
        observed_info=H,
        status=status,
        iterations=it,
    )


def fit_constrained(
    rank: RankData,
    model: RelativeRiskModel | None = None,
    spec: HypothesisSpec | None = None,
    pl: PartialLikelihood | None = None,
) -> FitResult:
    """Maximize over the nuisance coordinates with psi fixed at spec.psi0.

    theta is reparametrized as psi0 * b + basis^T nu and Newton runs in nu
    from 0; with p = 1 this is a single evaluation at theta = psi0 / a.
    """
    if spec is None:
        raise FitError("a HypothesisSpec is required")
    pl = pl if pl is not None else PartialLikelihood(rank, model or LoglinearRisk())
    if spec.p != pl.p:
        raise FitError(f"hypothesis dimension {spec.p} != model dimension {pl.p}")
    Bc = spec.basis
    base = spec.psi0 * spec.b
    if spec.p == 1:
        ll, _, J = pl.value_grad_hess(base)
        return FitResult(
            theta=base.copy(), loglik=ll, score_norm=0.0, observed_info=J,
            status=CONVERGED, iterations=0,
        )
    if pl._arrays is not None:
        return _kernel_fit(pl._arrays, base, np.ascontiguousarray(Bc.T))
    full = {}  # nu bytes -> full-space information, to report without re-evaluating

    def vgh(nu):
        ll, U, J = pl.value_grad_hess(base + Bc.T @ nu)
        full[nu.tobytes()] = J
        return ll, Bc @ U, Bc @ J @ Bc.T

    nu, ll, g, _, status, it = _newton(vgh, np.zeros(spec.p - 1))
    theta = base + Bc.T @ nu
    return FitResult(
        theta=theta,
        loglik=ll,
        score_norm=float(np.max(np.abs(g))) if g.size else 0.0,
        observed_info=full[nu.tobytes()],
        status=status,
        iterations=it,
    )


def signed_root(fit_hat: FitResult, fit_psi: FitResult, spec: HypothesisSpec) -> float:
    """r = sign(psi_hat - psi0) * sqrt(2 * (l_hat - l_psi)).

    The likelihood drop is clamped to zero when negative by less than
    1e-10 (solver noise); larger negative drops mean inconsistent fits.
    """
    drop = fit_hat.loglik - fit_psi.loglik
    if drop < 0:
        if drop < -1e-10:
            raise FitError(
                f"constrained loglik exceeds unconstrained by {-drop:.3e}; inconsistent fits"
            )
        drop = 0.0
    psi_hat = spec.psi_of(fit_hat.theta)
    return float(np.sign(psi_hat - spec.psi0) * np.sqrt(2.0 * drop))


def first_order_pvalues(r: float) -> tuple[float, float, float]:
    """(p_lower, p_upper, p_two_sided) from the standard normal law of r."""
    if not np.isfinite(r):
        raise FitError("signed root must be finite")
    p_lower = float(norm.cdf(r))
    p_upper = 1.0 - p_lower
    return p_lower, p_upper, min(1.0, 2.0 * min(p_lower, p_upper))


def wald_se(fit_hat: FitResult, spec: HypothesisSpec) -> float:
    """Standard error of psi_hat from the observed information."""
    cov = np.linalg.inv(fit_hat.observed_info)
    v = float(spec.a @ cov @ spec.a)
    if v <= 0:
        raise FitError("observed information not positive definite at the estimate")
    return float(np.sqrt(v))
