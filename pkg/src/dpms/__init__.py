"""Differentially private model selection for bounded linear regression.

Fit every candidate model under an l1 constraint, score it, and release
only a noisy winner.  See the README for the bounds contract the caller
must uphold and for guidance on choosing the radius and penalty.
"""

from .data import (
    Dataset,
    ModelMask,
    SufficientStats,
    load_csv,
    restrict,
    standardize,
    sufficient_stats,
)
from .enumeration import CandidateSet, all_subsets, from_explicit
from .errors import ConfigError, DataError, DegenerateFitError, DpmsError
from .mechanisms import (
    PrivacyBudget,
    RngStream,
    ScoredCandidate,
    compose_eps_delta,
    exponential_mechanism,
    noisy_argmin,
    noisy_release,
    sample_laplace,
)
from .selection import (
    ModelEntry,
    SelectionConfig,
    SelectionReport,
    SensitivityBound,
    compute_g_of_d,
    ls_sensitivity,
    pcls_select,
    pcpl_select,
)
from .simulate import (
    BUILTIN_MODELS,
    SweepGrid,
    SweepResult,
    SweepRow,
    SyntheticSpec,
    default_phi_grid,
    generate,
    run_sweep,
)
from .solver import (
    FitResult,
    SolverConfig,
    fit_constrained_ls,
    fit_masks,
    profile_neg2_loglik,
    project_l1,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "BUILTIN_MODELS",
    "CandidateSet",
    "ConfigError",
    "DataError",
    "Dataset",
    "DegenerateFitError",
    "DpmsError",
    "FitResult",
    "ModelEntry",
    "ModelMask",
    "PrivacyBudget",
    "RngStream",
    "ScoredCandidate",
    "SelectionConfig",
    "SelectionReport",
    "SensitivityBound",
    "SolverConfig",
    "SufficientStats",
    "SweepGrid",
    "SweepResult",
    "SweepRow",
    "SyntheticSpec",
    "all_subsets",
    "compose_eps_delta",
    "compute_g_of_d",
    "default_phi_grid",
    "exponential_mechanism",
    "fit_constrained_ls",
    "fit_masks",
    "from_explicit",
    "generate",
    "load_csv",
    "ls_sensitivity",
    "noisy_argmin",
    "noisy_release",
    "pcls_select",
    "pcpl_select",
    "profile_neg2_loglik",
    "project_l1",
    "restrict",
    "run_sweep",
    "sample_laplace",
    "standardize",
    "sufficient_stats",
]
