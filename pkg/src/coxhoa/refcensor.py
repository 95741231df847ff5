"""Reference-censoring-model trial generation and scenario generators.

A trial is generated in two stages: draw an uncensored failure ordering
from the relative-risk model (constant baseline hazard, which the rank
reduction makes immaterial), then impose the analysis dataset's censoring
configuration progressively, removing the prescribed number of subjects
uniformly at random from each risk set.

Randomness convention, fixed for reproducibility: one uniform per subject
(in subject order) drives the failure times; then, per stratum, one
vectorized batch of integer draws selects the censored subjects (a partial
Fisher-Yates over the shrinking risk-set pool).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import _engine
from .errors import DataError, SimulationError
from .partial_lik import LoglinearRisk, RelativeRiskModel
from .survdata import RankData, StratumRanks, SurvivalSample

__all__ = [
    "RngStream",
    "substream",
    "ReferenceCensoringPlan",
    "generate_uncensored_ranks",
    "apply_progressive_type2",
    "simulate_reference_trial",
    "TrialSimulator",
    "scenario_generate",
    "clinical_trial_hazard",
]


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream addressed by (master seed, index path).

    Identical (seed, path) always produce the same sequence; distinct
    paths produce statistically independent streams (SeedSequence
    semantics).
    """

    seed: int
    path: tuple[int, ...] = ()

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence((int(self.seed),) + tuple(self.path))
        )

    def child(self, *indices: int) -> "RngStream":
        return RngStream(self.seed, self.path + tuple(int(i) for i in indices))


def substream(seed: int, *path: int) -> np.random.Generator:
    return RngStream(seed, tuple(path)).generator()


@dataclass(frozen=True)
class ReferenceCensoringPlan:
    """Per-stratum censoring configurations to reproduce in trials."""

    configs: tuple[np.ndarray, ...]

    def __post_init__(self):
        cfgs = tuple(np.asarray(c, dtype=np.intp) for c in self.configs)
        if not cfgs:
            raise DataError("plan needs at least one stratum")
        for c in cfgs:
            if c.ndim != 1 or c.shape[0] < 2 or np.any(c < 0):
                raise DataError("each configuration must be (c0,...,cm), m >= 1, entries >= 0")
            c.flags.writeable = False
        object.__setattr__(self, "configs", cfgs)

    @classmethod
    def from_rank(cls, rank: RankData) -> "ReferenceCensoringPlan":
        return cls(configs=tuple(s.censoring_config.copy() for s in rank.strata))

    def stratum_sizes(self) -> list[int]:
        return [int(c.sum()) + (c.shape[0] - 1) for c in self.configs]


def _validate_stage_sizes(config: np.ndarray, n: int) -> None:
    """Raise with the offending stage when a configuration cannot be
    imposed on a cohort of size n."""
    m = config.shape[0] - 1
    size = n
    for i in range(m + 1):
        ci = int(config[i])
        if ci > size:
            raise SimulationError(
                f"cannot censor {ci} subjects from a risk set of {size} (stage {i})"
            )
        if i < m and ci == size:
            raise SimulationError(f"no subject left to fail after censoring stage {i}")
        size -= ci + (1 if i < m else 0)
    if size != 0:
        raise SimulationError(
            f"configuration {config.tolist()} accounts for {n - size} of {n} subjects"
        )


def generate_uncensored_ranks(
    theta_gen: np.ndarray,
    covariates: np.ndarray,
    model: RelativeRiskModel,
    rng: np.random.Generator,
) -> np.ndarray:
    """Failure ordering of all subjects under RR(z, theta_gen).

    One uniform per subject in fixed subject order drives an inverse-CDF
    exponential draw with rate RR(z_i, theta_gen); ties (probability zero)
    break by subject index via the stable sort.
    """
    theta_gen = np.asarray(theta_gen, dtype=float)
    eta = model.log_rr(np.atleast_2d(covariates), theta_gen)
    if not np.all(np.isfinite(eta)):
        raise SimulationError(f"non-finite relative risk at theta={theta_gen.tolist()}")
    u = rng.random(eta.shape[0])
    t = -np.log1p(-u) * np.exp(-eta)
    return np.argsort(t, kind="stable")


def _progressive_arrays(ordering, config, highs, rng):
    """Kernel pass over one stratum; returns (removal, risk_start) local."""
    n = ordering.shape[0]
    m = config.shape[0] - 1
    sel = rng.integers(0, highs) if highs.shape[0] else np.empty(0, dtype=np.int64)
    removal = np.empty(n, dtype=np.intp)
    risk_start = np.empty(m, dtype=np.intp)
    bad = _engine.progressive_pass(
        np.ascontiguousarray(ordering, dtype=np.intp),
        np.ascontiguousarray(config, dtype=np.intp),
        sel.astype(np.intp),
        removal,
        risk_start,
    )
    if bad >= 0:  # pragma: no cover - caught by validation upfront
        raise SimulationError(f"infeasible configuration at stage {bad}")
    return removal, risk_start


def apply_progressive_type2(
    ordering: np.ndarray,
    config: np.ndarray,
    rng: np.random.Generator,
    subjects: np.ndarray | None = None,
) -> StratumRanks:
    """Impose a censoring configuration on an uncensored failure ordering.

    ``ordering`` holds positions into ``subjects`` (defaults to the
    identity) sorted by failure time.  c0 subjects are removed uniformly
    at random from the full cohort before the first failure; after each
    failure, the next c_i are removed uniformly from the remaining risk
    set, never to return.
    """
    ordering = np.asarray(ordering, dtype=np.intp)
    config = np.asarray(config, dtype=np.intp)
    n = ordering.shape[0]
    _validate_stage_sizes(config, n)
    if subjects is None:
        subjects = np.arange(n, dtype=np.intp)
    highs = _engine.censor_draw_bounds(config, n)
    removal, risk_start = _progressive_arrays(ordering, config, highs, rng)
    return StratumRanks(
        subjects=subjects[removal],
        failures=subjects[removal[risk_start]],
        risk_start=risk_start,
        censoring_config=config.copy(),
    )


class TrialSimulator:
    """Repeated reference-censoring trials for a fixed plan and generator.

    Precomputes everything that does not change across trials (per-subject
    rates, censoring draw bounds, stratum layout) so a trial costs one
    uniform vector, one integer batch per stratum and the kernel pass.
    """

    def __init__(
        self,
        theta_gen: np.ndarray,
        covariates: np.ndarray,
        plan: ReferenceCensoringPlan,
        model: RelativeRiskModel | None = None,
        stratum_subjects: tuple[np.ndarray, ...] | None = None,
        stratum_labels: tuple[int, ...] = (),
    ):
        self.model = model if model is not None else LoglinearRisk()
        self.covariates = np.atleast_2d(np.asarray(covariates, dtype=float))
        n = self.covariates.shape[0]
        if stratum_subjects is None:
            if len(plan.configs) != 1:
                raise SimulationError("stratum_subjects required for a multi-stratum plan")
            stratum_subjects = (np.arange(n, dtype=np.intp),)
        sizes = plan.stratum_sizes()
        if len(stratum_subjects) != len(plan.configs):
            raise SimulationError("one subject list per plan stratum required")
        for subj, want in zip(stratum_subjects, sizes):
            if subj.shape[0] != want:
                raise SimulationError(
                    f"plan expects stratum of size {want}, got {subj.shape[0]}"
                )
        if sum(sizes) != n:
            raise SimulationError("plan strata must cover every subject exactly once")
        self.plan = plan
        self.subjects = tuple(np.asarray(s, dtype=np.intp) for s in stratum_subjects)
        self.labels = stratum_labels or tuple(range(len(plan.configs)))

        theta_gen = np.asarray(theta_gen, dtype=float)
        eta = self.model.log_rr(self.covariates, theta_gen)
        if not np.all(np.isfinite(eta)):
            raise SimulationError(f"non-finite relative risk at theta={theta_gen.tolist()}")
        self.theta_gen = theta_gen
        self._scale = np.exp(-eta)  # exponential scale (1/rate) per subject
        self._highs = []
        for subj, config in zip(self.subjects, plan.configs):
            _validate_stage_sizes(config, subj.shape[0])
            self._highs.append(_engine.censor_draw_bounds(config, subj.shape[0]))
        # fixed layout of every trial's rank arrays (configs pin the shape)
        sptr = np.cumsum([0] + sizes)
        ms = [c.shape[0] - 1 for c in plan.configs]
        self._sptr = sptr.astype(np.intp)
        self._rsptr = np.cumsum([0] + ms).astype(np.intp)

    def trial_ranks(self, rng: np.random.Generator):
        """One trial as per-stratum (subjects in removal order, risk starts)."""
        u = rng.random(self.covariates.shape[0])
        t = -np.log1p(-u) * self._scale
        out = []
        for subj, config, highs in zip(self.subjects, self.plan.configs, self._highs):
            order = np.argsort(t[subj], kind="stable")
            removal, risk_start = _progressive_arrays(order, config, highs, rng)
            out.append((subj[removal], risk_start))
        return out

    def trial_rankdata(self, rng: np.random.Generator) -> RankData:
        strata = []
        for (subj_removal, risk_start), config in zip(self.trial_ranks(rng), self.plan.configs):
            strata.append(
                StratumRanks(
                    subjects=subj_removal,
                    failures=subj_removal[risk_start],
                    risk_start=risk_start,
                    censoring_config=config.copy(),
                )
            )
        return RankData(
            covariates=self.covariates, strata=tuple(strata), stratum_labels=self.labels
        )

    def trial_arrays(self, rng: np.random.Generator) -> "_engine.RankArrays":
        """One trial as kernel-ready flat arrays (loglinear fast path)."""
        parts = self.trial_ranks(rng)
        rows = np.concatenate([subj for subj, _ in parts])
        rs = np.concatenate(
            [risk_start + off for (_, risk_start), off in zip(parts, self._sptr[:-1])]
        ).astype(np.intp)
        return _engine.RankArrays(
            Z=np.ascontiguousarray(self.covariates[rows]),
            sptr=self._sptr,
            rs=rs,
            rsptr=self._rsptr,
            fp=rs,  # simulated trials are tie-free: failures sit at risk starts
        )


def simulate_reference_trial(
    theta_gen: np.ndarray,
    covariates: np.ndarray,
    plan: ReferenceCensoringPlan,
    rng: np.random.Generator,
    model: RelativeRiskModel | None = None,
    stratum_subjects: tuple[np.ndarray, ...] | None = None,
    stratum_labels: tuple[int, ...] = (),
) -> RankData:
    """One reference-censoring trial: generate ranks, impose the plan.

    Strata are processed in order, each against its own configuration.
    """
    sim = TrialSimulator(
        theta_gen, covariates, plan,
        model=model, stratum_subjects=stratum_subjects, stratum_labels=stratum_labels,
    )
    return sim.trial_rankdata(rng)


# --- scenario generators -------------------------------------------------

_CLINICAL_ENROLL = 2.0
_CLINICAL_END = 7.0
_CLINICAL_TARGET = 0.30
_clinical_hazard_cache: dict[tuple[float, float, float], float] = {}


def clinical_trial_hazard(
    enroll: float = _CLINICAL_ENROLL,
    end: float = _CLINICAL_END,
    target: float = _CLINICAL_TARGET,
) -> float:
    """Constant hazard giving the target expected censoring fraction when
    enrollment is Uniform[0, enroll] and follow-up stops at time ``end``.

    The censoring probability has closed form
    exp(-lam*end) * (exp(lam*enroll) - 1) / (lam*enroll); the root is
    found numerically once and cached.
    """
    key = (enroll, end, target)
    if key not in _clinical_hazard_cache:
        def frac(lam):
            return np.exp(-lam * end) * np.expm1(lam * enroll) / (lam * enroll) - target

        _clinical_hazard_cache[key] = float(brentq(frac, 1e-6, 10.0, xtol=1e-12))
    return _clinical_hazard_cache[key]


def scenario_generate(
    scenario: str,
    n: int,
    psi_true: float,
    rng: np.random.Generator,
    n_nuisance: int | None = None,
) -> SurvivalSample:
    """Generate one dataset from a named study scenario.

    binary-arm
        Unit-exponential failures; one binary covariate in 3:1 ratio.
        Half of the sample (all drawn from the larger arm) is exposed to
        Uniform[0, 4] censoring, giving ~12.5% expected censoring overall.
    gaussian-k
        k+1 independent standard normal covariates, the first carrying
        psi_true (nuisance coefficients zero); Uniform[0, 3.25] censoring
        on every subject, ~30% expected censoring.
    clinical-trial
        Same covariates as gaussian-k; staggered Uniform[0, 2] enrollment
        with follow-up ending at calendar time 7, constant hazard
        calibrated to 30% expected censoring.
    """
    name, k = _parse_scenario(scenario, n_nuisance)
    if n < 2:
        raise DataError("scenario needs n >= 2")

    if name == "binary-arm":
        n_large = int(round(0.75 * n))
        z = np.zeros((n, 1))
        z[:n_large, 0] = 1.0
        rate = np.exp(psi_true * z[:, 0])
        t_fail = -np.log1p(-rng.random(n)) / rate
        n_exposed = n // 2  # all within the larger arm
        c = np.full(n, np.inf)
        c[:n_exposed] = 4.0 * rng.random(n_exposed)
        names = ("arm",)
    elif name == "gaussian":
        z = rng.standard_normal((n, k + 1))
        rate = np.exp(psi_true * z[:, 0])
        t_fail = -np.log1p(-rng.random(n)) / rate
        c = 3.25 * rng.random(n)
        names = ("x1",) + tuple(f"nuis{j}" for j in range(1, k + 1))
    elif name == "clinical-trial":
        z = rng.standard_normal((n, k + 1))
        lam = clinical_trial_hazard()
        rate = lam * np.exp(psi_true * z[:, 0])
        enroll = _CLINICAL_ENROLL * rng.random(n)
        t_fail = -np.log1p(-rng.random(n)) / rate
        c = _CLINICAL_END - enroll
        names = ("x1",) + tuple(f"nuis{j}" for j in range(1, k + 1))
    else:  # pragma: no cover
        raise DataError(f"unknown scenario {scenario!r}")

    status = (t_fail <= c).astype(int)
    time = np.minimum(t_fail, c)
    return SurvivalSample(time=time, status=status, covariates=z, covariate_names=names)


def _parse_scenario(scenario: str, n_nuisance: int | None) -> tuple[str, int]:
    s = scenario.strip().lower()
    if s == "binary-arm":
        if n_nuisance not in (None, 0):
            raise DataError("binary-arm has no nuisance covariates")
        return "binary-arm", 0
    if s.startswith("gaussian"):
        k = n_nuisance
        if "-" in s:
            try:
                k_name = int(s.split("-", 1)[1])
            except ValueError:
                raise DataError(f"unknown scenario {scenario!r}") from None
            if k is not None and k != k_name:
                raise DataError(f"scenario {scenario!r} conflicts with n_nuisance={k}")
            k = k_name
        if k is None:
            raise DataError("gaussian scenario needs a nuisance count, e.g. gaussian-4")
        if k < 0:
            raise DataError("nuisance count must be nonnegative")
        return "gaussian", k
    if s == "clinical-trial":
        k = 4 if n_nuisance is None else int(n_nuisance)
        if k < 0:
            raise DataError("nuisance count must be nonnegative")
        return "clinical-trial", k
    raise DataError(f"unknown scenario {scenario!r}")
