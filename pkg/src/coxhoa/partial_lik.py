"""Log partial likelihood, score and observed information on rank data.

Evaluation is O(n p^2) per stratum: subjects are already stored in removal
order, so risk-set sums are reversed cumulative sums with a shared
max-shift for log-sum-exp stability.
"""

from __future__ import annotations

import numpy as np

from . import _engine
from .errors import FitError
from .survdata import RankData

__all__ = [
    "RelativeRiskModel",
    "LoglinearRisk",
    "PartialLikelihood",
    "log_partial_likelihood",
    "score",
    "observed_information",
]


class RelativeRiskModel:
    """Relative-risk evaluation contract: RR(z, theta) > 0 with two
    derivatives in theta.

    Implementations supply the log relative risk and its theta-gradient
    and Hessian per subject; ``hess_log_rr`` may return None when
    identically zero (the loglinear case).
    """

    def log_rr(self, Z: np.ndarray, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad_log_rr(self, Z: np.ndarray, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hess_log_rr(self, Z: np.ndarray, theta: np.ndarray) -> np.ndarray | None:
        raise NotImplementedError


class LoglinearRisk(RelativeRiskModel):
    """RR(z, theta) = exp(z . theta)."""

    def log_rr(self, Z, theta):
        return Z @ theta

    def grad_log_rr(self, Z, theta):
        return Z

    def hess_log_rr(self, Z, theta):
        return None


def _suffix_cumsum(a: np.ndarray) -> np.ndarray:
    return np.cumsum(a[::-1], axis=0)[::-1]


_EMPTY_VEC = np.empty(0)
_EMPTY_MAT = np.empty((0, 0))


class PartialLikelihood:
    """Evaluator bound to one RankData and one relative-risk model.

    Caches per-stratum covariate gathers (and, for the loglinear model,
    the z z^T outer products) so repeated evaluations in Newton iterations
    and bootstrap trials avoid re-indexing.
    """

    def __init__(self, rank: RankData, model: RelativeRiskModel | None = None):
        self.rank = rank
        self.model = model if model is not None else LoglinearRisk()
        self.p = rank.p
        self._loglinear = isinstance(self.model, LoglinearRisk)
        self._arrays = None
        if self._loglinear and _engine.HAVE_NUMBA:
            self._arrays = _engine.RankArrays.from_rank(rank)
            return
        Z = rank.covariates
        self._strata = []
        for st in rank.strata:
            Zs = Z[st.subjects]
            pos = {int(s): k for k, s in enumerate(st.subjects)}
            fp = np.array([pos[int(f)] for f in st.failures], dtype=np.intp)
            entry = {
                "Zs": Zs,
                "rs": st.risk_start,
                "fp": fp,
                "zfail": Zs[fp].sum(axis=0),
            }
            if self._loglinear:
                entry["ZZ"] = Zs[:, :, None] * Zs[:, None, :]
            self._strata.append(entry)

    def value(self, theta: np.ndarray) -> float:
        return self._eval(theta, order=0)[0]

    def value_grad(self, theta: np.ndarray):
        ll, U, _ = self._eval(theta, order=1)
        return ll, U

    def value_grad_hess(self, theta: np.ndarray):
        return self._eval(theta, order=2)

    def _eval(self, theta, order):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.p,) or not np.all(np.isfinite(theta)):
            raise FitError(f"theta must be a finite vector of length {self.p}")
        p = self.p
        if self._arrays is not None:
            A = self._arrays
            U = np.empty(p) if order >= 1 else _EMPTY_VEC
            J = np.empty((p, p)) if order >= 2 else _EMPTY_MAT
            ll = _engine.eval_loglin(A.Z, A.sptr, A.rs, A.rsptr, A.fp, theta, order, U, J)
            if np.isnan(ll):
                raise FitError(f"relative risk overflow at theta={theta.tolist()}")
            return ll, (U if order >= 1 else None), (J if order >= 2 else None)
        ll = 0.0
        U = np.zeros(p) if order >= 1 else None
        J = np.zeros((p, p)) if order >= 2 else None
        for d in self._strata:
            Zs, rs, fp = d["Zs"], d["rs"], d["fp"]
            eta = self.model.log_rr(Zs, theta)
            if not np.all(np.isfinite(eta)):
                raise FitError(f"relative risk overflow at theta={theta.tolist()}")
            mx = eta.max()
            w = np.exp(eta - mx)
            s0 = _suffix_cumsum(w)[rs]
            with np.errstate(divide="ignore"):
                ll += float(eta[fp].sum() - fp.shape[0] * mx - np.log(s0).sum())
            if order == 0:
                continue
            G = Zs if self._loglinear else self.model.grad_log_rr(Zs, theta)
            means = _suffix_cumsum(w[:, None] * G)[rs] / s0[:, None]
            U += (d["zfail"] if self._loglinear else G[fp].sum(axis=0)) - means.sum(axis=0)
            if order == 1:
                continue
            if self._loglinear:
                GG = d["ZZ"]
                H = None
            else:
                GG = G[:, :, None] * G[:, None, :]
                H = self.model.hess_log_rr(Zs, theta)
                if H is not None:
                    GG = GG + H
            s2 = _suffix_cumsum(w[:, None, None] * GG)[rs]
            J += np.einsum("ijk,i->jk", s2, 1.0 / s0)
            J -= np.einsum("ij,ik->jk", means, means)
            if H is not None:
                J -= H[fp].sum(axis=0)
        if order == 0:
            return ll, None, None
        return ll, U, J


def log_partial_likelihood(rank: RankData, model: RelativeRiskModel, theta) -> float:
    """l(theta): per failure, log RR of the failing subject minus the
    log-sum of RR over its risk set, summed over strata."""
    return PartialLikelihood(rank, model).value(theta)


def score(rank: RankData, model: RelativeRiskModel, theta) -> np.ndarray:
    """Exact gradient of the log partial likelihood."""
    return PartialLikelihood(rank, model).value_grad(theta)[1]


def observed_information(rank: RankData, model: RelativeRiskModel, theta) -> np.ndarray:
    """j(theta) = -d^2 l / dtheta dtheta^T (symmetric by construction)."""
    return PartialLikelihood(rank, model).value_grad_hess(theta)[2]
