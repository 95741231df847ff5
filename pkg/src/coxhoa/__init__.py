"""Cox partial-likelihood inference beyond first order.

Fits relative-risk models by partial likelihood and computes P-values and
confidence intervals past the first-order normal approximation, via a
parametric bootstrap under a progressive Type II reference censoring model
matched to the observed censoring pattern, and via second-order adjusted
signed roots with separate nuisance-parameter and information corrections.
"""

__version__ = "0.1.0"

from .bootstrap import BootstrapResult, CiResult, bootstrap_pvalue, invert_ci
from .errors import (
    AdjustmentError,
    CoxhoaError,
    DataError,
    FitError,
    SimulationError,
)
from .fit import (
    FitResult,
    HypothesisSpec,
    first_order_pvalues,
    fit_constrained,
    fit_unconstrained,
    signed_root,
    wald_se,
)
from .hoa import (
    CovarianceEstimates,
    HoaResult,
    estimate_covariances,
    fixed_riskset_rstar,
    np_inf_diagnostics,
    skovgaard_rstar,
)
from .partial_lik import (
    LoglinearRisk,
    PartialLikelihood,
    RelativeRiskModel,
    log_partial_likelihood,
    observed_information,
    score,
)
from .refcensor import (
    ReferenceCensoringPlan,
    RngStream,
    apply_progressive_type2,
    clinical_trial_hazard,
    generate_uncensored_ranks,
    scenario_generate,
    simulate_reference_trial,
    substream,
)
from .study import StudyConfig, TailTable, run_study
from .survdata import RankData, StratumRanks, SurvivalSample, load_dataset, rank_reduce

__all__ = [
    "__version__",
    "AdjustmentError",
    "BootstrapResult",
    "CiResult",
    "CovarianceEstimates",
    "CoxhoaError",
    "DataError",
    "FitError",
    "FitResult",
    "HoaResult",
    "HypothesisSpec",
    "LoglinearRisk",
    "PartialLikelihood",
    "RankData",
    "ReferenceCensoringPlan",
    "RelativeRiskModel",
    "RngStream",
    "SimulationError",
    "StratumRanks",
    "StudyConfig",
    "SurvivalSample",
    "TailTable",
    "apply_progressive_type2",
    "bootstrap_pvalue",
    "clinical_trial_hazard",
    "estimate_covariances",
    "first_order_pvalues",
    "fit_constrained",
    "fit_unconstrained",
    "fixed_riskset_rstar",
    "generate_uncensored_ranks",
    "invert_ci",
    "load_dataset",
    "log_partial_likelihood",
    "np_inf_diagnostics",
    "observed_information",
    "rank_reduce",
    "run_study",
    "scenario_generate",
    "score",
    "signed_root",
    "simulate_reference_trial",
    "skovgaard_rstar",
    "substream",
    "wald_se",
]
