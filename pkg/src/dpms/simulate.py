"""Monte Carlo harness: how often does private selection find the truth?

A sweep crosses sample size, constraint radius, penalty level, and privacy
budget, runs many replications per cell, and reports three proportions per
cell: exact recovery of the generating model, agreement with the noiseless
selector on the same data, and (two-stage only) how often the uniform
fallback fired.

Reproducibility contract: every random draw is keyed by a stream id that
hashes the cell coordinates and replication index under the template seed.
Rows come out byte-identical across runs, process pools, and chunkings.
The one exception is ``mean_runtime_ms``, which is wall-clock and therefore
only measured when explicitly requested; it stays 0.0 otherwise.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
import time
import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .data import Dataset, ModelMask, sufficient_stats
from .enumeration import all_subsets
from .errors import ConfigError
from .mechanisms import PrivacyBudget, RngStream
from .selection import SelectionConfig, _pcls_with_fits, _pcpl_with_fits
from .solver import SolverConfig, fit_masks

__all__ = [
    "SyntheticSpec",
    "SweepGrid",
    "SweepRow",
    "SweepResult",
    "BUILTIN_MODELS",
    "generate",
    "default_phi_grid",
    "run_sweep",
]

# Coefficient vectors used throughout the reference experiments; the CLI
# exposes them as --model-id 1 and 2.  Model 2's smallest signal is weak
# on purpose.
BUILTIN_MODELS: dict[str, tuple[float, ...]] = {
    "1": (1.0, 1.0, 1.0, 0.0, 0.0, 0.0),
    "2": (1.5, 1.0, 0.5, 0.0, 0.0, 0.0),
}

_ALGORITHMS = ("pcls", "pcpl")

CSV_COLUMNS = (
    "n",
    "d",
    "model_id",
    "R",
    "phi",
    "epsilon",
    "delta",
    "algorithm",
    "replications",
    "prop_correct",
    "prop_agree",
    "fallback_rate",
    "mean_runtime_ms",
)


@dataclass(frozen=True)
class SyntheticSpec:
    """Linear model with uniform covariates on [-1, 1] and Gaussian noise.

    ``rng.seed`` is the master seed for anything derived from this spec;
    the stream id distinguishes independent uses of the same seed.
    """

    n: int
    coefficients: tuple[float, ...]
    rng: RngStream
    noise_sd: float = 1.0
    x_law: str = "uniform_pm1"

    def __post_init__(self) -> None:
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        if self.n < 1:
            raise ConfigError(f"n must be at least 1, got {self.n}")
        if not self.coefficients:
            raise ConfigError("coefficients must be non-empty")
        if not all(np.isfinite(self.coefficients)):
            raise ConfigError(f"coefficients must be finite, got {self.coefficients}")
        if not (np.isfinite(self.noise_sd) and self.noise_sd >= 0):
            raise ConfigError(f"noise_sd must be a nonnegative finite float, got {self.noise_sd}")
        if self.x_law != "uniform_pm1":
            raise ConfigError(f"unsupported x_law {self.x_law!r}")
        if not isinstance(self.rng, RngStream):
            raise ConfigError("rng must be an RngStream")

    @property
    def d(self) -> int:
        return len(self.coefficients)


def generate(spec: SyntheticSpec) -> tuple[Dataset, ModelMask]:
    """Draw one dataset and return it with the generating mask.

    Draw order is fixed (covariate matrix first, then noise vector) so a
    stream replays identically.  The response bound is taken from the
    realized data, so the resulting Dataset is flagged data-dependent;
    supply a public bound at selection time to override it.
    """
    gen = spec.rng.generator()
    x = gen.uniform(-1.0, 1.0, size=(spec.n, spec.d))
    noise = gen.normal(0.0, spec.noise_sd, size=spec.n)
    y = x @ np.asarray(spec.coefficients) + noise
    dataset = Dataset.from_arrays(x, y)
    truth = ModelMask.from_indices(
        (i + 1 for i, c in enumerate(spec.coefficients) if c != 0.0), spec.d
    )
    return dataset, truth


def default_phi_grid(n: int) -> tuple[float, ...]:
    """Zero plus 40 log-spaced penalty levels between 0.01 n and 0.5 n."""
    if n < 1:
        raise ConfigError(f"n must be at least 1, got {n}")
    return (0.0,) + tuple(float(v) for v in np.geomspace(0.01 * n, 0.5 * n, 40))


def _dedup(name: str, values: Sequence) -> tuple:
    out, seen = [], set()
    for v in values:
        if v in seen:
            warnings.warn(f"duplicate {name} value {v} in sweep grid, keeping first occurrence")
            continue
        seen.add(v)
        out.append(v)
    if not out:
        raise ConfigError(f"{name} must be non-empty")
    return tuple(out)


@dataclass(frozen=True)
class SweepGrid:
    """Cartesian experiment grid.

    ``phi_values=None`` substitutes :func:`default_phi_grid` per sample
    size.  ``delta_values`` must be all zero for pcls and all inside
    (0, 1) for pcpl.  Duplicate axis values are dropped with a warning.
    """

    n_values: tuple[int, ...]
    radius_values: tuple[float, ...]
    epsilon_values: tuple[float, ...]
    phi_values: tuple[float, ...] | None = None
    delta_values: tuple[float, ...] = (0.0,)
    replications: int = 500
    algorithm: str = "pcls"

    def __post_init__(self) -> None:
        object.__setattr__(self, "n_values", _dedup("n", tuple(int(v) for v in self.n_values)))
        for name in ("radius_values", "epsilon_values", "delta_values"):
            object.__setattr__(
                self, name, _dedup(name, tuple(float(v) for v in getattr(self, name)))
            )
        if self.phi_values is not None:
            object.__setattr__(
                self, "phi_values", _dedup("phi", tuple(float(v) for v in self.phi_values))
            )
            if any(not (np.isfinite(p) and p >= 0) for p in self.phi_values):
                raise ConfigError("phi values must be nonnegative and finite")
        if any(v < 1 for v in self.n_values):
            raise ConfigError("n values must be at least 1")
        if any(not (np.isfinite(v) and v > 0) for v in self.radius_values):
            raise ConfigError("radius values must be positive and finite")
        if any(np.isnan(v) or v <= 0 for v in self.epsilon_values):
            raise ConfigError("epsilon values must be positive (inf allowed)")
        if self.replications < 1:
            raise ConfigError(f"replications must be at least 1, got {self.replications}")
        if self.algorithm not in _ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {_ALGORITHMS}, got {self.algorithm!r}")
        if self.algorithm == "pcls":
            if any(v != 0.0 for v in self.delta_values):
                raise ConfigError("pcls spends a pure budget; all delta values must be 0")
        else:
            if any(not 0.0 < v < 1.0 for v in self.delta_values):
                raise ConfigError("pcpl needs delta values strictly inside (0, 1)")

    def phis_for(self, n: int) -> tuple[float, ...]:
        return self.phi_values if self.phi_values is not None else default_phi_grid(n)


@dataclass(frozen=True)
class SweepRow:
    """One grid cell's aggregate results; field order matches the CSV."""

    n: int
    d: int
    model_id: str
    R: float
    phi: float
    epsilon: float
    delta: float
    algorithm: str
    replications: int
    prop_correct: float
    prop_agree: float
    fallback_rate: float
    mean_runtime_ms: float


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]

    def to_csv(self) -> str:
        """Deterministic CSV text (LF endings, repr-exact floats)."""
        lines = [",".join(CSV_COLUMNS)]
        for row in self.rows:
            lines.append(
                ",".join(str(getattr(row, col)) for col in CSV_COLUMNS)
            )
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        # JSON has no literal for an infinite budget; spell it "inf" as
        # the CSV does.
        records = [
            {
                col: (
                    "inf"
                    if col == "epsilon" and math.isinf(getattr(row, col))
                    else getattr(row, col)
                )
                for col in CSV_COLUMNS
            }
            for row in self.rows
        ]
        return json.dumps(records, indent=2, allow_nan=False) + "\n"


def _stream_id(*parts) -> int:
    """64-bit stream id from typed, length-prefixed parts.

    The explicit type tags keep e.g. the int 1 and the float 1.0 from
    colliding, so every (cell, replication, role) triple gets its own
    stream under a fixed master seed.
    """
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        if isinstance(p, str):
            raw = p.encode("utf-8")
            h.update(b"s" + struct.pack("<I", len(raw)) + raw)
        elif isinstance(p, bool):
            h.update(b"b" + struct.pack("<?", p))
        elif isinstance(p, int):
            h.update(b"i" + struct.pack("<q", p))
        elif isinstance(p, float):
            h.update(b"f" + struct.pack("<d", p))
        elif isinstance(p, tuple):
            h.update(b"(")
            h.update(_stream_id(*p).to_bytes(8, "little"))
            h.update(b")")
        else:
            raise TypeError(f"unhashable sweep coordinate {p!r}")
    return int.from_bytes(h.digest(), "little")


def _noiseless_pick(entries) -> ModelMask:
    best = min(
        range(len(entries)),
        key=lambda i: (entries[i].clean_score, entries[i].mask.size, entries[i].mask.bits),
    )
    return entries[best].mask


def _sweep_chunk(
    grid: SweepGrid,
    template: SyntheticSpec,
    model_id: str,
    mechanism: str,
    solver: SolverConfig,
    n: int,
    rep_lo: int,
    rep_hi: int,
    measure_runtime: bool,
) -> dict:
    """Accumulate per-cell counters over a contiguous replication range.

    Returns {(R, phi, eps, delta): [correct, agree, fallback, runtime_ms_sum]}.
    Counters are order-independent sums, so chunked execution merges into
    the same totals as a single pass.
    """
    d = template.d
    models = all_subsets(d)
    model_list = list(models)
    phis = grid.phis_for(n)
    seed = template.rng.seed
    coords_base = (model_id, template.coefficients, template.noise_sd, n)
    select_fn = _pcls_with_fits if grid.algorithm == "pcls" else _pcpl_with_fits

    cells: dict = {}
    for R in grid.radius_values:
        for phi in phis:
            for eps in grid.epsilon_values:
                for delta in grid.delta_values:
                    cells[(R, phi, eps, delta)] = [0, 0, 0, 0.0]

    for rep in range(rep_lo, rep_hi):
        data_stream = RngStream(seed, _stream_id("data", *coords_base, rep))
        spec = replace(template, n=n, rng=data_stream)
        dataset, truth = generate(spec)
        stats = sufficient_stats(dataset)
        for R in grid.radius_values:
            fits = fit_masks(stats, model_list, R, solver)
            for phi in phis:
                for eps in grid.epsilon_values:
                    for delta in grid.delta_values:
                        config = SelectionConfig(
                            radius=R,
                            penalty=phi,
                            budget=PrivacyBudget(eps, delta),
                            mechanism=mechanism,
                            solver=solver,
                        )
                        select_stream = RngStream(
                            seed,
                            _stream_id(
                                "select", *coords_base, R, phi, eps, delta,
                                grid.algorithm, mechanism, rep,
                            ),
                        )
                        started = time.perf_counter() if measure_runtime else 0.0
                        report = select_fn(dataset, models, fits, config, select_stream)
                        elapsed = (time.perf_counter() - started) if measure_runtime else 0.0
                        cell = cells[(R, phi, eps, delta)]
                        cell[0] += report.chosen == truth
                        cell[1] += report.chosen == _noiseless_pick(report.entries)
                        cell[2] += report.fallback_uniform
                        cell[3] += elapsed * 1000.0
    return cells


def _chunk_payloads(grid, template, model_id, mechanism, solver, n, workers, measure):
    bounds = np.linspace(0, grid.replications, workers + 1).astype(int)
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if hi > lo:
            yield (grid, template, model_id, mechanism, solver, n, int(lo), int(hi), measure)


def _run_chunk(payload) -> dict:
    return _sweep_chunk(*payload)


def _resolve_workers(max_workers: int | None) -> int:
    env = os.environ.get("DPMS_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    if max_workers is not None:
        cap = min(cap, max_workers)
    return max(1, cap)


def run_sweep(
    grid: SweepGrid,
    template: SyntheticSpec,
    model_id: str = "",
    mechanism: str = "noisy_argmin",
    solver: SolverConfig | None = None,
    measure_runtime: bool = False,
    max_workers: int | None = None,
) -> SweepResult:
    """Run every cell of ``grid`` and aggregate per-cell proportions.

    ``template`` fixes the coefficient vector, noise level, and master
    seed; its own ``n`` and stream id are ignored in favor of per-cell
    derived streams.  Worker count is capped by ``max_workers`` and the
    ``DPMS_THREADS`` environment variable; results do not depend on it.
    """
    solver = solver or SolverConfig()
    workers = _resolve_workers(max_workers)
    d = template.d

    rows: list[SweepRow] = []
    for n in grid.n_values:
        payloads = list(
            _chunk_payloads(grid, template, model_id, mechanism, solver, n, workers, measure_runtime)
        )
        if len(payloads) <= 1:
            partials = [_run_chunk(p) for p in payloads]
        else:
            # Imported lazily so single-worker runs never touch
            # multiprocessing (it is unavailable in some sandboxes).
            from concurrent.futures import ProcessPoolExecutor

            with ProcessPoolExecutor(max_workers=workers) as pool:
                partials = list(pool.map(_run_chunk, payloads))
        merged: dict = {}
        for part in partials:
            for key, counts in part.items():
                if key not in merged:
                    merged[key] = [0, 0, 0, 0.0]
                for i in range(4):
                    merged[key][i] += counts[i]
        reps = grid.replications
        for R in grid.radius_values:
            for phi in grid.phis_for(n):
                for eps in grid.epsilon_values:
                    for delta in grid.delta_values:
                        correct, agree, fallback, runtime = merged[(R, phi, eps, delta)]
                        rows.append(
                            SweepRow(
                                n=n,
                                d=d,
                                model_id=model_id,
                                R=R,
                                phi=phi,
                                epsilon=eps,
                                delta=delta,
                                algorithm=grid.algorithm,
                                replications=reps,
                                prop_correct=correct / reps,
                                prop_agree=agree / reps,
                                fallback_rate=fallback / reps,
                                mean_runtime_ms=runtime / reps,
                            )
                        )
    return SweepResult(tuple(rows))
