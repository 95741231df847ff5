"""Subject-level survival data and its rank-based reduction.

The rank reduction keeps exactly what the partial likelihood needs: the
order of failures, the composition of every risk set, and the censoring
configuration c = (c0, ..., cm) counting censorings between successive
failure times.  Risk sets are stored implicitly: per stratum, subjects are
arranged in removal order and the risk set of the i-th failure is the
suffix starting at ``risk_start[i]``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

__all__ = ["SurvivalSample", "StratumRanks", "RankData", "load_dataset", "rank_reduce"]


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SurvivalSample:
    """Per-subject times, failure indicators, covariates and strata.

    ``status`` is 1 for an observed failure, 0 for right censoring.
    ``stratum`` defaults to a single stratum.  Arrays are frozen after
    validation so samples can be shared across concurrent tasks.
    """

    time: np.ndarray
    status: np.ndarray
    covariates: np.ndarray
    stratum: np.ndarray | None = None
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        time = np.array(self.time, dtype=float)
        status = np.array(self.status)
        cov = np.array(self.covariates, dtype=float)
        if cov.ndim == 1:
            cov = cov[:, None]
        n = time.shape[0]
        if status.shape[0] != n or cov.shape[0] != n:
            raise DataError("time, status and covariates must have equal length")
        if not np.all(np.isfinite(time)) or np.any(time <= 0):
            raise DataError("all times must be strictly positive and finite")
        if not np.all(np.isin(status, (0, 1))):
            raise DataError("status values must be exactly 0 or 1")
        if not np.all(np.isfinite(cov)):
            raise DataError("covariates must be finite")
        stratum = self.stratum
        if stratum is None:
            stratum = np.zeros(n, dtype=int)
        else:
            stratum = np.asarray(stratum, dtype=int)
            if stratum.shape[0] != n:
                raise DataError("stratum must have one label per subject")
        names = tuple(self.covariate_names) or tuple(
            f"cov{j + 1}" for j in range(cov.shape[1])
        )
        if len(names) != cov.shape[1]:
            raise DataError("covariate_names length must match covariate count")
        object.__setattr__(self, "time", _readonly(time))
        object.__setattr__(self, "status", _readonly(status.astype(int)))
        object.__setattr__(self, "covariates", _readonly(cov))
        object.__setattr__(self, "stratum", _readonly(stratum))
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.time.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]


@dataclass(frozen=True)
class StratumRanks:
    """Rank summary of one stratum.

    ``subjects`` lists the stratum's subject indices in removal order:
    the c0 subjects censored before the first failure, then the first
    failure, the c1 subjects censored before the second failure, and so
    on.  The risk set of failure ``i`` is ``subjects[risk_start[i]:]``;
    ``failures[i]`` is the subject failing at step ``i``.  With tied
    failure times, consecutive failures share a ``risk_start`` (each uses
    the full pre-tie risk set) so risk sets repeat within a tie group and
    are strictly nested otherwise.
    """

    subjects: np.ndarray
    failures: np.ndarray
    risk_start: np.ndarray
    censoring_config: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "subjects", _readonly(np.asarray(self.subjects, dtype=np.intp)))
        object.__setattr__(self, "failures", _readonly(np.asarray(self.failures, dtype=np.intp)))
        object.__setattr__(self, "risk_start", _readonly(np.asarray(self.risk_start, dtype=np.intp)))
        object.__setattr__(self, "censoring_config", _readonly(np.asarray(self.censoring_config, dtype=np.intp)))
        self._check()

    def _check(self):
        n = self.subjects.shape[0]
        m = self.failures.shape[0]
        c = self.censoring_config
        if m == 0:
            raise DataError("stratum with zero failures")
        if c.shape[0] != m + 1 or np.any(c < 0):
            raise DataError("censoring configuration must have m+1 nonnegative entries")
        if m + int(c.sum()) != n:
            raise DataError("m + sum(c) must equal the stratum size")
        if self.risk_start.shape[0] != m:
            raise DataError("one risk-set start per failure required")
        if np.any(np.diff(self.risk_start) < 0) or self.risk_start[0] < 0:
            raise DataError("risk-set starts must be nondecreasing and nonnegative")
        if self.risk_start[-1] >= n:
            raise DataError("risk sets must be nonempty")
        pos = {int(s): k for k, s in enumerate(self.subjects)}
        if len(pos) != n:
            raise DataError("subjects must be distinct")
        for i, f in enumerate(self.failures):
            if pos.get(int(f), -1) < self.risk_start[i]:
                raise DataError("each failing subject must belong to its own risk set")

    @property
    def m(self) -> int:
        return self.failures.shape[0]

    @property
    def n(self) -> int:
        return self.subjects.shape[0]

    def risk_set(self, i: int) -> np.ndarray:
        """Subject indices at risk just prior to the i-th failure."""
        return self.subjects[self.risk_start[i]:]

    @property
    def riskset_members(self) -> list[np.ndarray]:
        return [self.risk_set(i) for i in range(self.m)]

    def censored_groups(self) -> list[np.ndarray]:
        """Subjects censored in each inter-failure interval, c0 group first.

        Requires tie-free ranks (each failure sits at its own risk-set
        start, as in every simulated trial); the groups partition
        ``subjects`` minus ``failures``.
        """
        rs = self.risk_start
        if np.any(np.diff(rs) < 1) or np.any(self.subjects[rs] != self.failures):
            raise DataError("censored groups undefined for tied failure times")
        bounds = list(rs) + [self.n]
        groups = [self.subjects[: rs[0]]]
        groups += [self.subjects[bounds[i] + 1 : bounds[i + 1]] for i in range(self.m)]
        for g, c in zip(groups, self.censoring_config):
            if g.shape[0] != int(c):
                raise DataError("censored groups inconsistent with configuration")
        return groups


@dataclass(frozen=True)
class RankData:
    """Sufficient summary for partial likelihood: per-stratum ranks plus
    the (fixed) covariate matrix indexed by original subject."""

    covariates: np.ndarray
    strata: tuple[StratumRanks, ...]
    stratum_labels: tuple[int, ...] = ()

    def __post_init__(self):
        cov = np.asarray(self.covariates, dtype=float)
        if cov.ndim == 1:
            cov = cov[:, None]
        object.__setattr__(self, "covariates", _readonly(cov))
        object.__setattr__(self, "strata", tuple(self.strata))
        if not self.strata:
            raise DataError("at least one stratum required")
        labels = tuple(self.stratum_labels) or tuple(range(len(self.strata)))
        if len(labels) != len(self.strata):
            raise DataError("one label per stratum required")
        object.__setattr__(self, "stratum_labels", labels)

    @property
    def n(self) -> int:
        return sum(s.n for s in self.strata)

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_failures(self) -> int:
        return sum(s.m for s in self.strata)

    def censoring_configs(self) -> list[np.ndarray]:
        return [s.censoring_config for s in self.strata]


_TRUE_STATUS = {"0", "1", "0.0", "1.0"}


def load_dataset(source, fmt: str = "csv") -> SurvivalSample:
    """Parse a CSV byte/text stream into a validated SurvivalSample.

    Expected header: ``time,status,<cov1>,...,<covp>[,stratum]``.  Lines
    starting with ``#`` are ignored.  Errors name the offending file line.
    """
    if fmt != "csv":
        raise DataError(f"unknown format {fmt!r}")
    if isinstance(source, (bytes, bytearray)):
        text = io.StringIO(source.decode("utf-8"))
    elif isinstance(source, str):
        text = io.StringIO(source)
    elif hasattr(source, "read"):
        raw = source.read()
        text = io.StringIO(raw.decode("utf-8") if isinstance(raw, bytes) else raw)
    else:
        raise DataError("source must be bytes, text, or a readable stream")

    reader = csv.reader(line for line in text if not line.lstrip().startswith("#"))
    header = next(reader, None)
    if header is None:
        raise DataError("empty input")
    header = [h.strip() for h in header]
    if len(header) < 3 or header[0] != "time" or header[1] != "status":
        raise DataError("header must be time,status,<covariates...>[,stratum]")
    has_stratum = header[-1] == "stratum"
    cov_names = header[2 : -1 if has_stratum else len(header)]
    if not cov_names:
        raise DataError("at least one covariate column required")

    times, status, covs, strata = [], [], [], []
    for rownum, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"row {rownum}: expected {len(header)} fields, got {len(row)}")
        vals = [v.strip() for v in row]
        if any(v == "" for v in vals):
            raise DataError(f"row {rownum}: missing value")
        try:
            t = float(vals[0])
        except ValueError:
            raise DataError(f"row {rownum}: non-numeric time {vals[0]!r}") from None
        if not np.isfinite(t) or t <= 0:
            raise DataError(f"row {rownum}: time must be positive and finite, got {vals[0]}")
        if vals[1] not in _TRUE_STATUS:
            raise DataError(f"row {rownum}: status must be 0 or 1, got {vals[1]!r}")
        try:
            z = [float(v) for v in vals[2 : 2 + len(cov_names)]]
        except ValueError:
            raise DataError(f"row {rownum}: non-numeric covariate") from None
        if has_stratum:
            try:
                strata.append(int(float(vals[-1])))
            except ValueError:
                raise DataError(f"row {rownum}: non-numeric stratum") from None
        times.append(t)
        status.append(int(float(vals[1])))
        covs.append(z)
    if not times:
        raise DataError("no data rows")
    return SurvivalSample(
        time=np.array(times),
        status=np.array(status),
        covariates=np.array(covs),
        stratum=np.array(strata) if has_stratum else None,
        covariate_names=tuple(cov_names),
    )


def rank_reduce(sample: SurvivalSample) -> RankData:
    """Reduce a sample to ranks: failure order, risk sets, censoring config.

    Ties: at equal times failures precede censorings (a subject censored at
    a failure time stays in that failure's risk set); tied failures are
    ordered by input index, each keeping the full pre-tie risk set.
    """
    labels = np.unique(sample.stratum)
    strata = []
    for lab in labels:
        idx = np.flatnonzero(sample.stratum == lab)
        t = sample.time[idx]
        d = sample.status[idx]
        if not d.any():
            raise DataError(f"stratum {lab} has zero failures")
        # sort by (time, failures-first, input index); argsort is stable
        order = idx[np.lexsort((idx, -d, t))]
        st = sample.time[order]
        sd = sample.status[order]
        fail_mask = sd == 1
        fail_pos = np.flatnonzero(fail_mask)
        fail_times = st[fail_pos]
        # each failure's risk set starts at the first subject with its time
        risk_start = np.searchsorted(st, fail_times, side="left")
        # censorings counted in the interval of the last failure time <= u
        cens_times = st[~fail_mask]
        c = np.bincount(
            np.searchsorted(fail_times, cens_times, side="right"),
            minlength=fail_times.shape[0] + 1,
        )
        strata.append(
            StratumRanks(
                subjects=order,
                failures=order[fail_pos],
                risk_start=risk_start,
                censoring_config=c,
            )
        )
    return RankData(
        covariates=sample.covariates,
        strata=tuple(strata),
        stratum_labels=tuple(int(x) for x in labels),
    )
