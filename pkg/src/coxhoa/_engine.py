"""Compiled kernels for the loglinear relative-risk model.

The partial-likelihood evaluation, the Newton maximizer and the
progressive censoring pass are the bootstrap's inner loops; at the n of
interest their numpy formulations are dominated by per-call overhead, so
the loglinear case runs through numba kernels.  The numpy implementations
in partial_lik/fit remain the reference path for general relative-risk
models; both paths implement the same algorithm step for step.

Rank data enter the kernels as flat arrays: covariate rows in stratum-major
removal order, stratum boundaries ``sptr``, global risk-set start rows
``rs`` with per-stratum boundaries ``rsptr``, and global failure rows
``fp`` aligned with ``rs``.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        def wrap(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return wrap

STATUS_CONVERGED = 0
STATUS_DIVERGENT = 1
STATUS_FAILED = 2
STATUS_SINGULAR = 3

GRAD_TOL = 1e-8
MAX_ITER = 50
MAX_HALVINGS = 30
DIVERGENCE_BOUND = 50.0
PLATEAU_GAIN = 1e-10
MONOTONE_THETA_BOUND = 10.0


@njit(cache=True)
def eval_loglin(Z, sptr, rs, rsptr, fp, theta, order, U, J):
    """Log partial likelihood; fills U (order>=1) and J (order>=2).

    Returns -inf when a risk-set sum underflows to zero, nan when the
    linear predictor is non-finite.
    """
    n, p = Z.shape
    ll = 0.0
    if order >= 1:
        for j in range(p):
            U[j] = 0.0
    if order >= 2:
        for j in range(p):
            for l in range(p):
                J[j, l] = 0.0
    eta = np.empty(n)
    S1 = np.empty(p)
    S2 = np.empty((p, p))
    mean = np.empty(p)
    for s in range(sptr.shape[0] - 1):
        lo, hi = sptr[s], sptr[s + 1]
        mx = -np.inf
        for k in range(lo, hi):
            e = 0.0
            for j in range(p):
                e += Z[k, j] * theta[j]
            eta[k] = e
            if e > mx:
                mx = e
        if not np.isfinite(mx):
            return np.nan
        S0 = 0.0
        for j in range(p):
            S1[j] = 0.0
            for l in range(p):
                S2[j, l] = 0.0
        k = hi - 1
        for i in range(rsptr[s + 1] - 1, rsptr[s] - 1, -1):
            start = rs[i]
            while k >= start:
                w = np.exp(eta[k] - mx)
                S0 += w
                if order >= 1:
                    for j in range(p):
                        wz = w * Z[k, j]
                        S1[j] += wz
                        if order >= 2:
                            for l in range(j, p):
                                S2[j, l] += wz * Z[k, l]
                k -= 1
            if S0 <= 0.0:
                return -np.inf
            f = fp[i]
            ll += eta[f] - mx - np.log(S0)
            if order >= 1:
                for j in range(p):
                    mean[j] = S1[j] / S0
                    U[j] += Z[f, j] - mean[j]
                if order >= 2:
                    for j in range(p):
                        for l in range(j, p):
                            J[j, l] += S2[j, l] / S0 - mean[j] * mean[l]
    if order >= 2:
        for j in range(p):
            for l in range(j + 1, p):
                J[l, j] = J[j, l]
    return ll


@njit(cache=True)
def _chol_solve(H, g, d):
    """Solve H d = g via Cholesky; returns False when H is not PD."""
    q = H.shape[0]
    L = np.empty((q, q))
    for j in range(q):
        acc = H[j, j]
        for k in range(j):
            acc -= L[j, k] * L[j, k]
        if acc <= 0.0 or not np.isfinite(acc):
            return False
        L[j, j] = np.sqrt(acc)
        for i in range(j + 1, q):
            acc = H[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            L[i, j] = acc / L[j, j]
    for i in range(q):
        acc = g[i]
        for k in range(i):
            acc -= L[i, k] * d[k]
        d[i] = acc / L[i, i]
    for i in range(q - 1, -1, -1):
        acc = d[i]
        for k in range(i + 1, q):
            acc -= L[k, i] * d[k]
        d[i] = acc / L[i, i]
    return True


@njit(cache=True)
def _ridge_solve(H, g, d):
    """Newton direction with escalating ridge, mirroring fit._solve_step."""
    q = H.shape[0]
    tr = 0.0
    for j in range(q):
        tr += H[j, j]
    scale = tr / q
    if scale < 1e-8:
        scale = 1e-8
    Hw = np.empty((q, q))
    ridge = 0.0
    for _ in range(8):
        for j in range(q):
            for l in range(q):
                Hw[j, l] = H[j, l]
            Hw[j, j] += ridge
        if _chol_solve(Hw, g, d):
            return True
        ridge = scale * 1e-8 if ridge == 0.0 else ridge * 100.0
    return False


@njit(cache=True)
def newton_loglin(Z, sptr, rs, rsptr, fp, base, Tmap):
    """Maximize over x with theta = base + Tmap @ x, Newton + step halving.

    Returns (x, theta, ll, score_norm, J_full, status, iterations); J_full
    is the full-space observed information at the final theta.
    """
    p = Z.shape[1]
    q = Tmap.shape[1]
    x = np.zeros(q)
    theta = base.copy()
    U = np.empty(p)
    Jfull = np.empty((p, p))
    ll = eval_loglin(Z, sptr, rs, rsptr, fp, theta, 2, U, Jfull)
    if not np.isfinite(ll):
        return x, theta, ll, np.inf, Jfull, STATUS_FAILED, 0
    g = Tmap.T @ U
    H = Tmap.T @ Jfull @ Tmap
    d = np.empty(q)
    Utmp = np.empty(p)
    Jtmp = np.empty((p, p))
    status = STATUS_FAILED
    it = 0
    gnorm = 0.0
    for j in range(q):
        if abs(g[j]) > gnorm:
            gnorm = abs(g[j])
    for it in range(1, MAX_ITER + 1):
        if q == 0 or gnorm < GRAD_TOL:
            status = STATUS_CONVERGED
            it -= 1
            break
        if not _ridge_solve(H, g, d):
            status = STATUS_SINGULAR
            break
        accepted = False
        gain = 0.0
        for _ in range(MAX_HALVINGS + 1):
            xn = x + d
            thetan = base + Tmap @ xn
            lln = eval_loglin(Z, sptr, rs, rsptr, fp, thetan, 0, Utmp, Jtmp)
            if np.isfinite(lln) and lln >= ll:
                lln = eval_loglin(Z, sptr, rs, rsptr, fp, thetan, 2, U, Jfull)
                gain = lln - ll
                x = xn
                theta = thetan
                ll = lln
                g = Tmap.T @ U
                H = Tmap.T @ Jfull @ Tmap
                accepted = True
                break
            for j in range(q):
                d[j] *= 0.5
        if not accepted:
            status = STATUS_FAILED
            break
        gnorm = 0.0
        for j in range(q):
            if abs(g[j]) > gnorm:
                gnorm = abs(g[j])
        xmax = 0.0
        for j in range(q):
            if abs(x[j]) > xmax:
                xmax = abs(x[j])
        if xmax > DIVERGENCE_BOUND and gain < PLATEAU_GAIN:
            status = STATUS_DIVERGENT
            break
    if status == STATUS_FAILED and it >= MAX_ITER and gnorm < GRAD_TOL:
        status = STATUS_CONVERGED
    if status == STATUS_CONVERGED and q > 0:
        xmax = 0.0
        for j in range(q):
            if abs(x[j]) > xmax:
                xmax = abs(x[j])
        if xmax > MONOTONE_THETA_BOUND:
            status = STATUS_DIVERGENT
    return x, theta, ll, gnorm, Jfull, status, it


@njit(cache=True)
def progressive_pass(order, config, sel, removal, risk_start):
    """Impose a censoring configuration on a failure ordering.

    ``order`` holds local positions by increasing failure time; ``sel``
    the pre-drawn uniform selector for each censoring (sel[j] in
    [0, pool size at that draw)).  Fills ``removal`` (all positions in
    removal order) and ``risk_start``; returns the stage that was
    infeasible, or -1 on success.
    """
    n = order.shape[0]
    m = config.shape[0] - 1
    pool = order.copy()
    slot = np.empty(n, dtype=np.intp)
    for j in range(n):
        slot[pool[j]] = j
    alive = np.ones(n, dtype=np.bool_)
    size = n
    out = 0
    next_fail = 0
    si = 0
    for i in range(m + 1):
        ci = config[i]
        if ci > size or (i < m and ci == size):
            return i
        for _ in range(ci):
            j = sel[si]
            si += 1
            k = pool[j]
            last = pool[size - 1]
            pool[j] = last
            pool[size - 1] = k
            slot[last] = j
            slot[k] = size - 1
            size -= 1
            alive[k] = False
            removal[out] = k
            out += 1
        if i == m:
            break
        while not alive[order[next_fail]]:
            next_fail += 1
        k = order[next_fail]
        j = slot[k]
        last = pool[size - 1]
        pool[j] = last
        pool[size - 1] = k
        slot[last] = j
        slot[k] = size - 1
        size -= 1
        alive[k] = False
        risk_start[i] = out
        removal[out] = k
        out += 1
    if out != n or size != 0:
        return m + 1
    return -1


def censor_draw_bounds(config: np.ndarray, n: int) -> np.ndarray:
    """Pool size before each censoring draw, in draw order (one entry per
    censored subject).  Used to vectorize the uniform selections."""
    highs = np.empty(int(config.sum()), dtype=np.int64)
    size = n
    k = 0
    for i, ci in enumerate(config):
        for _ in range(int(ci)):
            highs[k] = size
            size -= 1
            k += 1
        if i < config.shape[0] - 1:
            size -= 1  # the failure leaves the pool
    return highs


class RankArrays:
    """Flat kernel-ready view of a RankData (loglinear model only)."""

    __slots__ = ("Z", "sptr", "rs", "rsptr", "fp", "n", "p")

    def __init__(self, Z, sptr, rs, rsptr, fp):
        self.Z = Z
        self.sptr = sptr
        self.rs = rs
        self.rsptr = rsptr
        self.fp = fp
        self.n = Z.shape[0]
        self.p = Z.shape[1]

    @classmethod
    def from_rank(cls, rank) -> "RankArrays":
        Zfull = rank.covariates
        rows = []
        sptr = [0]
        rs_all = []
        rsptr = [0]
        fp_all = []
        off = 0
        for st in rank.strata:
            rows.append(Zfull[st.subjects])
            pos = {int(s): k for k, s in enumerate(st.subjects)}
            fails = np.array([pos[int(f)] for f in st.failures], dtype=np.intp)
            rs_all.append(st.risk_start + off)
            fp_all.append(fails + off)
            off += st.n
            sptr.append(off)
            rsptr.append(rsptr[-1] + st.m)
        return cls(
            Z=np.ascontiguousarray(np.vstack(rows)),
            sptr=np.asarray(sptr, dtype=np.intp),
            rs=np.ascontiguousarray(np.concatenate(rs_all).astype(np.intp)),
            rsptr=np.asarray(rsptr, dtype=np.intp),
            fp=np.ascontiguousarray(np.concatenate(fp_all).astype(np.intp)),
        )


def warmup():
    """Trigger kernel compilation on a toy problem (cached across runs)."""
    Z = np.array([[1.0], [0.0], [0.5]])
    sptr = np.array([0, 3], dtype=np.intp)
    rs = np.array([0, 1, 2], dtype=np.intp)
    rsptr = np.array([0, 3], dtype=np.intp)
    fp = rs
    U = np.empty(1)
    J = np.empty((1, 1))
    eval_loglin(Z, sptr, rs, rsptr, fp, np.zeros(1), 2, U, J)
    newton_loglin(Z, sptr, rs, rsptr, fp, np.zeros(1), np.eye(1))
    order = np.array([0, 1, 2], dtype=np.intp)
    removal = np.empty(3, dtype=np.intp)
    risk_start = np.empty(2, dtype=np.intp)
    progressive_pass(
        order,
        np.array([0, 1, 0], dtype=np.intp),
        np.array([1], dtype=np.intp),
        removal,
        risk_start,
    )
