"""Constrained least squares over sufficient statistics.

For a candidate model M the score is the squared-error loss
``min ||y - X beta||^2`` over ``{beta : beta_j = 0 for j not in M,
||beta||_1 <= radius}``.  The minimizer is found by projected gradient
descent on the quadratic ``yty - 2 b.beta + beta.A.beta`` (A = X'X,
b = X'y), with exact sort-based projection onto the l1 ball.

Every restricted problem is embedded in the full coordinate space with the
excluded rows/columns zeroed: a zero start then keeps excluded coordinates
exactly zero through every gradient and projection step, so whole families
of masks are solved as one stacked batch with identical semantics to
one-at-a-time solves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import ModelMask, SufficientStats
from .errors import ConfigError, DataError, DegenerateFitError

__all__ = [
    "SolverConfig",
    "FitResult",
    "project_l1",
    "fit_constrained_ls",
    "fit_masks",
    "profile_neg2_loglik",
]

_STEP_RULES = ("fixed_inverse_lipschitz", "backtracking")

# Relative-change tolerance and cap for the power iteration that estimates
# the largest eigenvalue of each restricted X'X (sets the step size).
_POWER_TOL = 1e-8
_POWER_MAX_ITER = 1000


@dataclass(frozen=True)
class SolverConfig:
    """Iteration budget and stopping rule for the projected gradient loop.

    The loop stops when the relative objective decrease falls below
    ``tolerance`` or after ``max_iterations`` steps.  ``step_rule``
    "fixed_inverse_lipschitz" uses step 1/L with L the largest eigenvalue
    of the restricted X'X; "backtracking" halves a trial step until the
    quadratic sufficient-decrease test holds.
    """

    max_iterations: int = 10_000
    tolerance: float = 1e-10
    step_rule: str = "fixed_inverse_lipschitz"

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ConfigError(
                f"max_iterations must be >= 1, got {self.max_iterations}"
            )
        if not (math.isfinite(self.tolerance) and self.tolerance >= 0):
            raise ConfigError(f"tolerance must be finite and >= 0, got {self.tolerance}")
        if self.step_rule not in _STEP_RULES:
            raise ConfigError(
                f"step_rule must be one of {_STEP_RULES}, got {self.step_rule!r}"
            )


@dataclass(frozen=True)
class FitResult:
    """Outcome of one constrained fit.

    beta is a full-length vector with exact zeros outside the mask;
    neg2_loglik is the squared-error loss at beta (>= 0); l1_norm is
    ||beta||_1, within round-off of the radius at most.
    """

    beta: np.ndarray
    neg2_loglik: float
    iterations: int
    converged: bool
    l1_norm: float


def project_l1(v, radius: float) -> np.ndarray:
    """Euclidean projection of a vector onto ``{u : ||u||_1 <= radius}``.

    Feasible input is returned unchanged (no drift on repeated calls);
    infeasible input is soft-thresholded at the exact level found by the
    sort-and-scan rule, so the output lands on the ball's surface.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DataError(f"project_l1 expects a vector, got shape {v.shape}")
    if not (math.isfinite(radius) and radius > 0):
        raise DataError(f"radius must be positive and finite, got {radius}")
    out = _project_rows(v[None, :].copy(), radius)
    return out[0]


def _project_rows(v: np.ndarray, radius: float) -> np.ndarray:
    """Row-wise l1-ball projection; rows already inside are untouched."""
    absv = np.abs(v)
    over = absv.sum(axis=1) > radius
    if not over.any():
        return v
    u = np.sort(absv[over], axis=1)[:, ::-1]
    css = np.cumsum(u, axis=1) - radius
    ranks = np.arange(1, v.shape[1] + 1, dtype=np.float64)
    # Largest prefix where the sorted entry still exceeds the running
    # threshold; radius > 0 guarantees at least the first position.
    rho = np.sum(u * ranks > css, axis=1)
    theta = css[np.arange(len(rho)), rho - 1] / rho
    v[over] = np.sign(v[over]) * np.maximum(absv[over] - theta[:, None], 0.0)
    return v


def _masked_top_eigenvalue(a: np.ndarray, member: np.ndarray) -> np.ndarray:
    """Largest eigenvalue of each row-masked restriction of ``a``.

    Power iteration run jointly for all masks: the iterate lives in the
    full space with excluded coordinates pinned at zero, which is exactly
    multiplication by the restricted matrix.
    """
    m, d = member.shape
    diag = np.diag(a)
    # Deterministic start with mass on every coordinate of the mask so the
    # dominant eigenvector is never missed by symmetry.
    v = member * (1.0 + diag / (1.0 + np.max(np.abs(diag))))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    np.divide(v, norms, out=v, where=norms > 0)
    lam = np.zeros(m)
    for _ in range(_POWER_MAX_ITER):
        w = (v @ a) * member
        new_lam = np.einsum("ij,ij->i", v, w)
        wnorm = np.linalg.norm(w, axis=1, keepdims=True)
        done = np.abs(new_lam - lam) <= _POWER_TOL * np.maximum(new_lam, 1e-30)
        lam = new_lam
        if done.all():
            break
        np.divide(w, wnorm, out=v, where=wnorm > 0)
    return np.maximum(lam, 0.0)


def _fit_batch(
    stats: SufficientStats,
    member: np.ndarray,
    radius: float,
    config: SolverConfig,
    trace: list | None = None,
):
    """Solve every masked problem in ``member`` (m, d) jointly.

    Returns (beta (m, d), objective (m,), iterations (m,), converged (m,)).
    """
    a = stats.xtx
    yty = stats.yty
    m, d = member.shape
    bvec = member * stats.xty

    lam = _masked_top_eigenvalue(a, member)
    diag_scale = max(1.0, float(np.max(np.abs(np.diag(a)))))
    flat = lam <= 1e-14 * diag_scale
    # A numerically zero restricted matrix means the masked columns carry
    # no signal (PSD forces the matching X'y entries toward zero as well):
    # the zero fit is the answer and needs no iterations.
    step = np.where(flat, 0.0, 1.0 / np.where(flat, 1.0, lam))

    backtracking = config.step_rule == "backtracking"
    if backtracking:
        step = np.where(flat, 0.0, 1.0)

    beta = np.zeros((m, d))
    obj = np.full(m, yty)
    iterations = np.zeros(m, dtype=np.int64)
    converged = flat.copy()
    if trace is not None:
        trace.append((obj.copy(), np.abs(beta).sum(axis=1)))

    for it in range(1, config.max_iterations + 1):
        grad = (beta @ a) * member - bvec
        cand = _project_rows(beta - step[:, None] * grad, radius)
        cand_w = (cand @ a) * member
        cand_obj = yty - 2.0 * np.einsum("ij,ij->i", cand, bvec) + np.einsum(
            "ij,ij->i", cand, cand_w
        )
        if backtracking:
            for _ in range(80):
                delta = cand - beta
                # Sufficient decrease for the 1/2-scaled quadratic:
                # f(new) <= f(old) + 2 g.delta + ||delta||^2 / step.
                lhs = cand_obj
                rhs = (
                    obj
                    + 2.0 * np.einsum("ij,ij->i", grad, delta)
                    + np.einsum("ij,ij->i", delta, delta)
                    / np.where(step > 0, step, 1.0)
                )
                bad = (lhs > rhs + 1e-9 * np.maximum(1.0, np.abs(obj))) & ~flat
                if not bad.any():
                    break
                step = np.where(bad, step / 2.0, step)
                cand = _project_rows(beta - step[:, None] * grad, radius)
                cand_w = (cand @ a) * member
                cand_obj = (
                    yty
                    - 2.0 * np.einsum("ij,ij->i", cand, bvec)
                    + np.einsum("ij,ij->i", cand, cand_w)
                )
        slack = 1e-9 * np.maximum(1.0, np.abs(obj))
        if np.any(cand_obj > obj + slack):
            raise AssertionError(
                "projected gradient objective increased; step size rule broke"
            )
        decrease = obj - cand_obj
        just_done = (~converged) & (
            decrease <= config.tolerance * np.maximum(obj, 1e-300)
        )
        iterations[just_done] = it
        converged |= just_done
        beta, obj = cand, np.maximum(cand_obj, 0.0)
        if trace is not None:
            trace.append((obj.copy(), np.abs(beta).sum(axis=1)))
        if converged.all():
            break

    iterations[~converged] = config.max_iterations
    return beta, obj, iterations, converged


def fit_masks(
    stats: SufficientStats,
    masks,
    radius: float,
    config: SolverConfig | None = None,
    trace: list | None = None,
) -> list[FitResult]:
    """Fit every mask against the same statistics in one stacked solve.

    Output order matches input order.  ``trace`` (diagnostic) receives one
    (objectives, l1_norms) pair per iteration when provided.
    """
    masks = list(masks)
    if not masks:
        raise DataError("fit_masks needs at least one mask")
    for mk in masks:
        if mk.d != stats.d:
            raise DataError(f"mask is for d={mk.d}, stats have d={stats.d}")
    if not (math.isfinite(radius) and radius > 0):
        raise DataError(f"radius must be positive and finite, got {radius}")
    config = config or SolverConfig()
    member = np.stack([mk.member_row() for mk in masks])
    beta, obj, iters, conv = _fit_batch(stats, member, radius, config, trace)
    results = []
    for i in range(len(masks)):
        b = beta[i].copy()
        b.setflags(write=False)
        results.append(
            FitResult(
                beta=b,
                neg2_loglik=float(obj[i]),
                iterations=int(iters[i]),
                converged=bool(conv[i]),
                l1_norm=float(np.abs(beta[i]).sum()),
            )
        )
    return results


def fit_constrained_ls(
    stats: SufficientStats,
    mask: ModelMask,
    radius: float,
    config: SolverConfig | None = None,
) -> FitResult:
    """Constrained least squares for one candidate model.

    Deterministic: the zero start makes the returned beta a fixed function
    of the inputs even when the restricted design is rank deficient (the
    minimal loss is unique; beta then is just one minimizer).
    """
    return fit_masks(stats, [mask], radius, config)[0]


def profile_neg2_loglik(fit: FitResult, n_obs: int) -> float:
    """Profile score ``n * log(loss / n)`` with the variance profiled out.

    Raises DegenerateFitError for a non-positive loss (perfect
    interpolation); losses below ``n * 1e-12`` are floored at that level so
    the log stays bounded.  Callers catching the error substitute the same
    floor, ``n * log(1e-12)``.
    """
    if n_obs < 1:
        raise DataError(f"n_obs must be >= 1, got {n_obs}")
    loss = fit.neg2_loglik
    if loss <= 0.0:
        raise DegenerateFitError(
            f"squared-error loss {loss} is not positive; profile score undefined"
        )
    return n_obs * math.log(max(loss, n_obs * 1e-12) / n_obs)
