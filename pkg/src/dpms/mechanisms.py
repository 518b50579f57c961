"""Randomness plumbing and the private selection primitives.

Two kinds of draws, both deterministic functions of an (seed, stream_id)
pair:

* bulk sampling (``sample_laplace`` and dataset generation elsewhere) runs
  through a numpy Generator seeded from the pair;
* per-candidate noise inside ``noisy_argmin`` / ``exponential_mechanism``
  is keyed by hashing (seed, stream_id, tag, mask bits), so a candidate's
  draw depends on the mask's content, never its list position.  Permuting
  a candidate list permutes the realized draws with it, exactly.

All Laplace variates come from one inverse-CDF transform of a 64-bit
integer k (k = 0 rejected): ``log(k / 2^63)`` on the lower half and
``-log((2^64 - k) / 2^63)`` on the upper, computed from integers so the
tails lose no precision.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np

from .data import ModelMask
from .errors import ConfigError, DataError

__all__ = [
    "PrivacyBudget",
    "RngStream",
    "ScoredCandidate",
    "sample_laplace",
    "noisy_release",
    "noisy_argmin",
    "exponential_mechanism",
    "compose_eps_delta",
]

_U64 = 1 << 64
_HALF = 1 << 63

# Domain-separation tags for keyed draws; distinct consumers never share
# a draw even on the same stream.
_TAG_ARGMIN = 1
_TAG_GUMBEL = 2
_TAG_FALLBACK = 3


@dataclass(frozen=True)
class RngStream:
    """A named, replayable randomness source.

    Identical (seed, stream_id) pairs reproduce every draw bit-for-bit;
    distinct stream_ids give statistically independent streams.  Streams
    are cheap value objects: derive one per independent private release.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self) -> None:
        for name, v in (("seed", self.seed), ("stream_id", self.stream_id)):
            if not 0 <= int(v) < _U64:
                raise ConfigError(f"{name} must be a 64-bit non-negative integer, got {v}")

    def generator(self) -> np.random.Generator:
        """Fresh numpy Generator; same stream, same sequence, every time."""
        return np.random.default_rng(
            np.random.SeedSequence([self.seed, self.stream_id])
        )


@dataclass(frozen=True)
class PrivacyBudget:
    """(epsilon, delta) pair; delta = 0 means pure epsilon-DP.

    epsilon = inf is the documented noiseless sentinel (exact, non-private
    output); finite epsilon must be positive.
    """

    epsilon: float
    delta: float = 0.0

    def __post_init__(self) -> None:
        eps = float(self.epsilon)
        delta = float(self.delta)
        if math.isnan(eps) or eps <= 0:
            raise ConfigError(f"epsilon must be > 0 (or inf), got {self.epsilon}")
        if not 0.0 <= delta < 1.0:
            raise ConfigError(f"delta must be in [0, 1), got {self.delta}")
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "delta", delta)


@dataclass(frozen=True)
class ScoredCandidate:
    """A candidate model, its (lower-is-better) score, and the Laplace
    scale already calibrated by the caller (2 * sensitivity / epsilon).
    A zero scale is the noiseless limit used by the epsilon = inf path."""

    mask: ModelMask
    score: float
    noise_scale: float

    def __post_init__(self) -> None:
        if not math.isfinite(float(self.score)):
            raise DataError(f"candidate score must be finite, got {self.score}")
        if not (math.isfinite(float(self.noise_scale)) and self.noise_scale >= 0):
            raise DataError(
                f"noise_scale must be finite and >= 0, got {self.noise_scale}"
            )


def _laplace_from_u64(k: int) -> float:
    """Standard Laplace variate from a uniform 64-bit integer, k != 0."""
    if k < _HALF:
        return math.log(k / _HALF)
    return -math.log((_U64 - k) / _HALF)


def _laplace_from_u64_array(k: np.ndarray) -> np.ndarray:
    small = k < np.uint64(_HALF)
    comp = np.bitwise_not(k) + np.uint64(1)  # 2^64 - k, exact for k >= 1
    arg = np.where(small, k, comp).astype(np.float64) / float(_HALF)
    return np.where(small, 1.0, -1.0) * np.log(arg)


def _gumbel_from_u64(k: int) -> float:
    """Standard Gumbel variate from a uniform 64-bit integer, k != 0."""
    # u = k / 2^64; -log(u) via log1p of the exact complement so u -> 1
    # loses nothing.
    e = -math.log1p(-(_U64 - k) / _U64)
    return -math.log(e)


def _keyed_u64(rng: RngStream, tag: int, payload: int) -> int:
    """Uniform nonzero 64-bit integer keyed by (stream, tag, payload)."""
    counter = 0
    while True:
        digest = hashlib.blake2b(
            struct.pack("<QQQQQ", rng.seed, rng.stream_id, tag, payload, counter),
            digest_size=8,
        ).digest()
        k = int.from_bytes(digest, "little")
        if k:
            return k
        counter += 1


def _uniform_index(rng: RngStream, n: int) -> int:
    """Index uniform on range(n), keyed to the stream's fallback tag."""
    u = _keyed_u64(rng, _TAG_FALLBACK, 0) / _U64
    return min(int(u * n), n - 1)


def sample_laplace(rng, scale: float, size: int | None = None):
    """Laplace(0, scale) draw(s) via the exact inverse CDF.

    ``rng`` is an RngStream (replayable: the same stream always returns
    the same value) or a numpy Generator (stateful, for bulk sampling).
    Returns a float, or an ndarray when ``size`` is given.
    """
    if not (math.isfinite(scale) and scale >= 0):
        raise ConfigError(f"scale must be finite and >= 0, got {scale}")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    if not isinstance(gen, np.random.Generator):
        raise ConfigError(f"rng must be an RngStream or numpy Generator, got {type(rng)!r}")
    n = 1 if size is None else int(size)
    k = gen.integers(0, _U64, dtype=np.uint64, size=n)
    zero = k == 0
    while zero.any():  # u = 0 endpoint is rejected and redrawn
        k[zero] = gen.integers(0, _U64, dtype=np.uint64, size=int(zero.sum()))
        zero = k == 0
    z = _laplace_from_u64_array(k) * scale
    return float(z[0]) if size is None else z


def noisy_release(value: float, sensitivity: float, epsilon: float, rng: RngStream) -> float:
    """Laplace mechanism for one statistic: value + (sensitivity/epsilon) Z.

    epsilon = inf returns the exact value (zero scale).  The caller owns
    the claim that ``sensitivity`` bounds the statistic's global
    sensitivity; with that, the release is epsilon-DP.
    """
    if not (math.isfinite(sensitivity) and sensitivity >= 0):
        raise ConfigError(f"sensitivity must be finite and >= 0, got {sensitivity}")
    if math.isnan(epsilon) or epsilon <= 0:
        raise ConfigError(f"epsilon must be > 0 (or inf), got {epsilon}")
    scale = 0.0 if math.isinf(epsilon) else sensitivity / epsilon
    return float(value) + scale * sample_laplace(rng, 1.0)


def _check_candidates(candidates) -> list[ScoredCandidate]:
    cands = list(candidates)
    if not cands:
        raise DataError("need at least one candidate")
    d = cands[0].mask.d
    seen = set()
    for c in cands:
        if c.mask.d != d:
            raise DataError("candidates mix masks of different dimensions")
        if c.mask.bits in seen:
            raise DataError(
                f"duplicate candidate mask {c.mask.indices()}; keyed noise "
                f"draws require distinct masks"
            )
        seen.add(c.mask.bits)
    return cands


def _tie_argmin(keys, cands: list[ScoredCandidate]) -> int:
    """Index of the smallest key; exact ties go to the smallest model,
    then the smallest bit value, independent of list order."""
    best = 0
    for i in range(1, len(cands)):
        ki, kb = keys[i], keys[best]
        if ki < kb or (
            ki == kb
            and (cands[i].mask.size, cands[i].mask.bits)
            < (cands[best].mask.size, cands[best].mask.bits)
        ):
            best = i
    return best


def noisy_argmin(candidates, budget: PrivacyBudget, rng: RngStream):
    """Report-noisy-argmin: perturb each score by its own Laplace noise and
    return (chosen mask, realized noisy scores, in input order).

    Each candidate's ``noise_scale`` must already equal
    2 * sensitivity / epsilon; with per-candidate independent draws that
    makes the argmin epsilon-DP.  Draws are keyed by mask content, so the
    same stream gives the same mask the same noise in any list order.
    """
    if budget.delta != 0.0:
        raise ConfigError("noisy_argmin is a pure-epsilon mechanism; delta must be 0")
    cands = _check_candidates(candidates)
    noisy = [
        c.score
        + c.noise_scale * _laplace_from_u64(_keyed_u64(rng, _TAG_ARGMIN, c.mask.bits))
        for c in cands
    ]
    best = _tie_argmin(noisy, cands)
    return cands[best].mask, np.asarray(noisy)


def exponential_mechanism(candidates, sensitivity: float, budget: PrivacyBudget, rng: RngStream):
    """Sample a mask with probability proportional to
    exp(-epsilon * score / (2 * sensitivity)); lower scores are better.

    Returns (chosen mask, realized sampling keys).  Keys are oriented so
    the chosen mask is their argmin, mirroring noisy_argmin's output
    contract.  Sampling uses per-candidate Gumbel draws keyed by mask
    content (argmax of log-weight + Gumbel is an exact softmax sample), so
    no normalization and no underflow: after subtracting the minimum score
    the best candidate's weight is exp(0) = 1.
    """
    if budget.delta != 0.0:
        raise ConfigError("exponential_mechanism is a pure-epsilon mechanism; delta must be 0")
    if not (math.isfinite(sensitivity) and sensitivity > 0):
        raise ConfigError(f"sensitivity must be finite and > 0, got {sensitivity}")
    cands = _check_candidates(candidates)
    eps = budget.epsilon
    if math.isinf(eps):
        keys = [c.score for c in cands]
        best = _tie_argmin(keys, cands)
        return cands[best].mask, np.asarray(keys, dtype=np.float64)
    low = min(c.score for c in cands)
    logw = [-eps * (c.score - low) / (2.0 * sensitivity) for c in cands]
    assert max(logw) == 0.0, "stabilized weights lost their unit maximum"
    keys = [
        -(lw + _gumbel_from_u64(_keyed_u64(rng, _TAG_GUMBEL, c.mask.bits)))
        for lw, c in zip(logw, cands)
    ]
    best = _tie_argmin(keys, cands)
    return cands[best].mask, np.asarray(keys)


def compose_eps_delta(stage1_eps: float, stage2_eps: float, delta: float) -> PrivacyBudget:
    """Sequential composition: two stages spend their epsilons additively;
    the delta rides along once (the first stage's estimate holds with
    probability 1 - delta)."""
    for name, e in (("stage1_eps", stage1_eps), ("stage2_eps", stage2_eps)):
        if math.isnan(float(e)) or e <= 0:
            raise ConfigError(f"{name} must be > 0, got {e}")
    if not 0.0 <= float(delta) < 1.0:
        raise ConfigError(f"delta must be in [0, 1), got {delta}")
    return PrivacyBudget(float(stage1_eps) + float(stage2_eps), float(delta))
