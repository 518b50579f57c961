"""Private model selection over a candidate family.

Two release paths share one shape: fit every candidate on the caller's
data, score it, and let a mechanism pick a winner.

* :func:`pcls_select` scores by penalized constrained squared error and
  pays ``epsilon`` of pure differential privacy.  The score's sensitivity
  is the global bound ``(r + R)**2``, which no dataset can exceed.
* :func:`pcpl_select` scores by the penalized profile likelihood, whose
  global sensitivity is unbounded.  It spends half its budget measuring a
  data-dependent sensitivity proxy and the other half selecting with it,
  for a total cost of ``(2 * epsilon, delta)``.  When the measured proxy
  is degenerate the winner is drawn uniformly instead; the report says so.

Both paths draw every noise variate from a caller-supplied
:class:`~dpms.mechanisms.RngStream`, so a fixed (seed, stream) pair replays
the exact selection byte for byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .data import Dataset, ModelMask, sufficient_stats
from .enumeration import CandidateSet
from .errors import ConfigError, DataError, DegenerateFitError
from .mechanisms import (
    PrivacyBudget,
    RngStream,
    ScoredCandidate,
    _uniform_index,
    compose_eps_delta,
    exponential_mechanism,
    noisy_argmin,
    sample_laplace,
)
from .solver import SolverConfig, fit_masks, profile_neg2_loglik

__all__ = [
    "SelectionConfig",
    "SelectionReport",
    "ModelEntry",
    "SensitivityBound",
    "ls_sensitivity",
    "compute_g_of_d",
    "pcls_select",
    "pcpl_select",
]

_MECHANISMS = ("noisy_argmin", "exponential")

# Floor used when a profile score is evaluated on an interpolating fit:
# the average squared residual is clamped below at this value.
_PROFILE_FLOOR = 1e-12


@dataclass(frozen=True)
class SelectionConfig:
    """Tuning parameters shared by both selection paths.

    radius
        L1 bound R on every candidate fit.  Larger values admit least
        squares itself (see ``dpms validate`` for a data-driven hint) but
        inflate the score sensitivity quadratically.
    penalty
        Complexity charge phi_n added per selected covariate.  Zero means
        pure goodness of fit; values around ``n * log(n) / n`` mimic BIC.
    budget
        Privacy budget of ONE mechanism invocation.  ``pcls_select``
        spends exactly ``budget.epsilon`` and requires ``delta == 0``;
        ``pcpl_select`` spends ``(2 * epsilon, delta)`` total and requires
        ``0 < delta < 1``.
    mechanism
        ``"noisy_argmin"`` adds Laplace noise to every score and takes the
        minimum; ``"exponential"`` samples from the softmax over negated
        scores.  Both satisfy the same budget.
    response_bound
        Public bound r on |y|.  ``None`` falls back to the bound carried
        by the dataset, which may be data-dependent (and is flagged as
        such in the report).
    stage1_fraction
        Share of the total ``2 * epsilon`` budget that ``pcpl_select``
        spends on its sensitivity measurement.
    solver
        Accuracy knobs for the constrained fits.
    """

    radius: float
    penalty: float
    budget: PrivacyBudget
    mechanism: str = "noisy_argmin"
    response_bound: float | None = None
    stage1_fraction: float = 0.5
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self) -> None:
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise ConfigError(f"radius must be a positive finite float, got {self.radius}")
        if not (math.isfinite(self.penalty) and self.penalty >= 0):
            raise ConfigError(f"penalty must be a nonnegative finite float, got {self.penalty}")
        if self.mechanism not in _MECHANISMS:
            raise ConfigError(
                f"mechanism must be one of {_MECHANISMS}, got {self.mechanism!r}"
            )
        if self.response_bound is not None and not (
            math.isfinite(self.response_bound) and self.response_bound > 0
        ):
            raise ConfigError(
                f"response_bound must be positive and finite, got {self.response_bound}"
            )
        if not 0.0 < self.stage1_fraction < 1.0:
            raise ConfigError(
                f"stage1_fraction must lie strictly between 0 and 1, got {self.stage1_fraction}"
            )


@dataclass(frozen=True)
class ModelEntry:
    """Per-candidate record kept alongside the released winner.

    ``clean_score`` is NOT privatized.  It exists for debugging and for
    noiseless-agreement bookkeeping in simulations; serialization drops it
    unless explicitly told otherwise.
    """

    mask: ModelMask
    clean_score: float
    noisy_score: float | None


@dataclass(frozen=True)
class SensitivityBound:
    """A sensitivity value together with the kind of argument behind it."""

    kind: str
    value: float


def ls_sensitivity(response_bound: float, radius: float) -> SensitivityBound:
    """Worst-case change of the constrained squared error under one row swap.

    A single row contributes ``(y_i - x_i @ beta)**2`` to the loss, and with
    |y| <= r, |x| <= 1 (entrywise) and |beta|_1 <= R the residual magnitude
    is at most ``r + R``.  Replacing one row therefore moves the loss by at
    most ``(r + R)**2``, whatever the rest of the data looks like.
    """
    if not (math.isfinite(response_bound) and response_bound > 0):
        raise ConfigError(f"response_bound must be positive and finite, got {response_bound}")
    if not (math.isfinite(radius) and radius > 0):
        raise ConfigError(f"radius must be positive and finite, got {radius}")
    return SensitivityBound("global_loss", (response_bound + radius) ** 2)


def _profile_sensitivity_value(
    min_loss: float,
    n_obs: int,
    response_bound: float,
    radius: float,
    stage1_epsilon: float,
    delta: float,
    laplace_unit: float,
) -> float:
    """Noisy upper bound on the profile score's local sensitivity.

    Starts from the deterministic bound ``n * w / (min_loss - w)`` with
    ``w = (r + R)**2``, then perturbs the denominator with calibrated
    Laplace noise plus a ``log(1 / (2 * delta))`` safety margin so the
    released value is itself private and exceeds the true local
    sensitivity except with probability ``delta``.  A nonpositive
    denominator means the data fit too well for the bound to say anything;
    the sentinel ``math.inf`` signals that.
    """
    width = (response_bound + radius) ** 2
    shift = 0.0
    if math.isfinite(stage1_epsilon):
        shift = width * (laplace_unit - math.log(1.0 / (2.0 * delta))) / stage1_epsilon
    denominator = min_loss - width + shift
    if denominator <= 0.0:
        return math.inf
    return n_obs * width / denominator


@dataclass(frozen=True)
class SelectionReport:
    """Everything a run releases, plus replay metadata.

    ``g_of_d`` is ``None`` on the pure path, the released sensitivity
    proxy on the two-stage path, and ``math.inf`` when that proxy was
    degenerate (in which case ``fallback_uniform`` is True and the winner
    was drawn uniformly).
    """

    chosen: ModelMask
    epsilon_total: float
    delta: float
    radius: float
    penalty: float
    response_bound: float
    response_bound_data_dependent: bool
    rng: RngStream
    mechanism: str
    fallback_uniform: bool
    g_of_d: float | None
    entries: tuple[ModelEntry, ...]

    def to_json_dict(self, include_clean_scores: bool = False) -> dict:
        """Schema-stable dict.  Clean scores are redacted by default.

        ``g_of_d`` appears only for two-stage runs; a degenerate proxy
        serializes as JSON null.  ``seed`` is always the two-element pair
        ``[seed, stream_id]``.  A noiseless run's infinite budget has no
        JSON number, so it serializes as the string "inf".
        """
        out: dict = {
            "chosen": list(self.chosen.indices()),
            "epsilon_total": self.epsilon_total if math.isfinite(self.epsilon_total) else "inf",
            "delta": self.delta,
            "R": self.radius,
            "phi_n": self.penalty,
            "r": self.response_bound,
            "r_data_dependent": self.response_bound_data_dependent,
            "seed": [self.rng.seed, self.rng.stream_id],
            "mechanism": self.mechanism,
            "fallback_uniform": self.fallback_uniform,
        }
        if self.g_of_d is not None:
            out["g_of_d"] = None if math.isinf(self.g_of_d) else self.g_of_d
        models = []
        for entry in self.entries:
            rec: dict = {"mask": list(entry.mask.indices()), "noisy_score": entry.noisy_score}
            if include_clean_scores:
                rec["clean_score"] = entry.clean_score
            models.append(rec)
        out["models"] = models
        return out

    def to_json(self, include_clean_scores: bool = False) -> str:
        text = json.dumps(
            self.to_json_dict(include_clean_scores=include_clean_scores),
            indent=2,
            allow_nan=False,
        )
        return text + "\n"


def _effective_bound(dataset: Dataset, config: SelectionConfig) -> tuple[float, bool]:
    """Resolve the response bound used for sensitivity calibration.

    A configured bound must dominate the bound the data was validated
    against, otherwise the sensitivity argument would understate reality.
    """
    if config.response_bound is None:
        return dataset.response_bound, dataset.bound_is_data_dependent
    if config.response_bound < dataset.response_bound:
        raise DataError(
            f"configured response bound {config.response_bound} is below the "
            f"dataset bound {dataset.response_bound}; sensitivity would be understated"
        )
    return config.response_bound, False


def _check_family(dataset: Dataset, models: CandidateSet) -> None:
    if models.d != dataset.d:
        raise DataError(
            f"candidate set is over d={models.d} covariates but the dataset has d={dataset.d}"
        )


def _run_mechanism(
    candidates: list[ScoredCandidate],
    sensitivity: float,
    budget: PrivacyBudget,
    mechanism: str,
    rng: RngStream,
) -> tuple[ModelMask, list[float | None]]:
    if mechanism == "noisy_argmin":
        winner, noisy = noisy_argmin(candidates, budget, rng)
        return winner, [float(v) for v in noisy]
    winner, _keys = exponential_mechanism(candidates, sensitivity, budget, rng)
    # Softmax sampling has no per-candidate noisy score to report.
    return winner, [None] * len(candidates)


def pcls_select(
    dataset: Dataset,
    models: CandidateSet,
    config: SelectionConfig,
    rng: RngStream,
) -> SelectionReport:
    """Pick a model by noisy penalized constrained squared error.

    Costs ``config.budget.epsilon`` of pure differential privacy (the
    budget must carry ``delta == 0``).  Scores are ``loss + penalty *
    |model|`` where the loss is the constrained residual sum of squares;
    both mechanisms are calibrated to the row-swap sensitivity
    ``(r + R)**2``.
    """
    _check_family(dataset, models)
    stats = sufficient_stats(dataset)
    fits = fit_masks(stats, list(models), config.radius, config.solver)
    return _pcls_with_fits(dataset, models, fits, config, rng)


def _pcls_with_fits(
    dataset: Dataset,
    models: CandidateSet,
    fits,
    config: SelectionConfig,
    rng: RngStream,
) -> SelectionReport:
    # Scoring and mechanism core.  Fits enter precomputed because they
    # depend only on (data, radius): the sweep harness reuses one batch of
    # fits across its whole penalty-by-budget grid.
    if config.budget.delta != 0.0:
        raise ConfigError("pure selection requires delta == 0; use the two-stage path for delta > 0")
    bound, data_dependent = _effective_bound(dataset, config)
    clean = [fit.neg2_loglik + config.penalty * mask.size for mask, fit in zip(models, fits)]

    sensitivity = ls_sensitivity(bound, config.radius).value
    epsilon = config.budget.epsilon
    scale = 0.0 if math.isinf(epsilon) else 2.0 * sensitivity / epsilon
    candidates = [
        ScoredCandidate(mask, score, scale) for mask, score in zip(models, clean)
    ]
    winner, noisy = _run_mechanism(candidates, sensitivity, config.budget, config.mechanism, rng)

    entries = tuple(
        ModelEntry(mask, score, ns) for mask, score, ns in zip(models, clean, noisy)
    )
    return SelectionReport(
        chosen=winner,
        epsilon_total=epsilon,
        delta=0.0,
        radius=config.radius,
        penalty=config.penalty,
        response_bound=bound,
        response_bound_data_dependent=data_dependent,
        rng=rng,
        mechanism=config.mechanism,
        fallback_uniform=False,
        g_of_d=None,
        entries=entries,
    )


def compute_g_of_d(
    dataset: Dataset,
    models: CandidateSet,
    config: SelectionConfig,
    stage1_epsilon: float,
    rng: RngStream,
) -> float:
    """Release the profile score's sensitivity proxy, privately.

    Spends ``stage1_epsilon`` (pure) plus the ``config.budget.delta``
    failure probability baked into the safety margin.  Returns
    ``math.inf`` when the noisy denominator is nonpositive.  The Laplace
    variate is the first draw of ``rng``'s sequential stream, so a caller
    holding the same stream can reproduce the release exactly.
    """
    if not (stage1_epsilon > 0):
        raise ConfigError(f"stage1_epsilon must be positive, got {stage1_epsilon}")
    delta = config.budget.delta
    if not 0.0 < delta < 1.0:
        raise ConfigError(f"the sensitivity release needs 0 < delta < 1, got {delta}")
    _check_family(dataset, models)
    bound, _ = _effective_bound(dataset, config)

    stats = sufficient_stats(dataset)
    fits = fit_masks(stats, list(models), config.radius, config.solver)
    min_loss = min(fit.neg2_loglik for fit in fits)
    laplace_unit = float(sample_laplace(rng, 1.0))
    return _profile_sensitivity_value(
        min_loss, dataset.n, bound, config.radius, stage1_epsilon, delta, laplace_unit
    )


def _profile_scores(fits, masks, n_obs: int, penalty: float) -> list[float]:
    scores = []
    floor = n_obs * math.log(_PROFILE_FLOOR)
    for mask, fit in zip(masks, fits):
        try:
            value = profile_neg2_loglik(fit, n_obs)
        except DegenerateFitError:
            value = floor
        scores.append(value + penalty * mask.size)
    return scores


def pcpl_select(
    dataset: Dataset,
    models: CandidateSet,
    config: SelectionConfig,
    rng: RngStream,
) -> SelectionReport:
    """Pick a model by noisy penalized profile likelihood, two-staged.

    Stage 1 privately releases a sensitivity proxy for the profile score;
    stage 2 runs the configured mechanism with it.  Total privacy cost is
    ``(2 * config.budget.epsilon, config.budget.delta)``, split by
    ``config.stage1_fraction``.  A degenerate stage-1 release (data that
    fit too well for the bound to hold) falls back to a uniform draw over
    the candidates, reported via ``fallback_uniform``.
    """
    _check_family(dataset, models)
    stats = sufficient_stats(dataset)
    fits = fit_masks(stats, list(models), config.radius, config.solver)
    return _pcpl_with_fits(dataset, models, fits, config, rng)


def _pcpl_with_fits(
    dataset: Dataset,
    models: CandidateSet,
    fits,
    config: SelectionConfig,
    rng: RngStream,
) -> SelectionReport:
    # Two-stage core on precomputed fits; see _pcls_with_fits for why.
    epsilon = config.budget.epsilon
    delta = config.budget.delta
    if not 0.0 < delta < 1.0:
        raise ConfigError(f"two-stage selection needs 0 < delta < 1, got {delta}")
    bound, data_dependent = _effective_bound(dataset, config)
    clean = _profile_scores(fits, list(models), dataset.n, config.penalty)

    if math.isinf(epsilon):
        # Noiseless limit: the proxy is still computed (its noise term
        # vanishes) but never triggers the uniform fallback, because there
        # is no noise for a huge scale to inject.
        min_loss = min(fit.neg2_loglik for fit in fits)
        laplace_unit = float(sample_laplace(rng, 1.0))
        proxy = _profile_sensitivity_value(
            min_loss, dataset.n, bound, config.radius, math.inf, delta, laplace_unit
        )
        candidates = [ScoredCandidate(m, s, 0.0) for m, s in zip(models, clean)]
        noiseless = PrivacyBudget(math.inf, 0.0)
        winner, noisy = _run_mechanism(candidates, 1.0, noiseless, config.mechanism, rng)
        entries = tuple(
            ModelEntry(m, s, ns) for m, s, ns in zip(models, clean, noisy)
        )
        return SelectionReport(
            chosen=winner,
            epsilon_total=math.inf,
            delta=delta,
            radius=config.radius,
            penalty=config.penalty,
            response_bound=bound,
            response_bound_data_dependent=data_dependent,
            rng=rng,
            mechanism=config.mechanism,
            fallback_uniform=False,
            g_of_d=proxy,
            entries=entries,
        )

    epsilon_total = 2.0 * epsilon
    stage1_epsilon = epsilon_total * config.stage1_fraction
    stage2_epsilon = epsilon_total - stage1_epsilon
    total = compose_eps_delta(stage1_epsilon, stage2_epsilon, delta)

    min_loss = min(fit.neg2_loglik for fit in fits)
    laplace_unit = float(sample_laplace(rng, 1.0))
    proxy = _profile_sensitivity_value(
        min_loss, dataset.n, bound, config.radius, stage1_epsilon, delta, laplace_unit
    )

    if math.isinf(proxy):
        index = _uniform_index(rng, len(models))
        winner = models.masks[index]
        entries = tuple(ModelEntry(m, s, None) for m, s in zip(models, clean))
        return SelectionReport(
            chosen=winner,
            epsilon_total=total.epsilon,
            delta=total.delta,
            radius=config.radius,
            penalty=config.penalty,
            response_bound=bound,
            response_bound_data_dependent=data_dependent,
            rng=rng,
            mechanism=config.mechanism,
            fallback_uniform=True,
            g_of_d=proxy,
            entries=entries,
        )

    scale = 2.0 * proxy / stage2_epsilon
    stage2_budget = PrivacyBudget(stage2_epsilon, 0.0)
    candidates = [ScoredCandidate(m, s, scale) for m, s in zip(models, clean)]
    winner, noisy = _run_mechanism(candidates, proxy, stage2_budget, config.mechanism, rng)
    entries = tuple(ModelEntry(m, s, ns) for m, s, ns in zip(models, clean, noisy))
    return SelectionReport(
        chosen=winner,
        epsilon_total=total.epsilon,
        delta=total.delta,
        radius=config.radius,
        penalty=config.penalty,
        response_bound=bound,
        response_bound_data_dependent=data_dependent,
        rng=rng,
        mechanism=config.mechanism,
        fallback_uniform=False,
        g_of_d=proxy,
        entries=entries,
    )
