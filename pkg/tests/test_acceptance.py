"""Release acceptance suite.

Ten checks gate a release; the README's "Acceptance" section lists them in
the same order.  Each test prints one ``criterion N: PASS/FAIL`` line before
asserting, so a full run leaves a readable verdict trail.  Everything runs
from master seed 20260822 and is bit-for-bit reproducible, including the two
simulation checks that currently fail (6 and 7; see README for the numbers).

Run with ``pytest tests/test_acceptance.py -v -s``; the whole file takes a
couple of minutes on one core.
"""

import math
from collections import Counter

import numpy as np
import pytest

from dpms import (
    Dataset,
    ModelMask,
    PrivacyBudget,
    RngStream,
    ScoredCandidate,
    SelectionConfig,
    SolverConfig,
    SweepGrid,
    SyntheticSpec,
    all_subsets,
    cli,
    exponential_mechanism,
    fit_masks,
    ls_sensitivity,
    noisy_argmin,
    pcpl_select,
    run_sweep,
    sample_laplace,
    sufficient_stats,
)

MASTER = 20260822

AUDIT_N = 20
AUDIT_D = 4
AUDIT_R = 1.0
AUDIT_RADIUS = 2.0
AUDIT_WIDTH = (AUDIT_R + AUDIT_RADIUS) ** 2
# Solved far past the 1e-6 audit slack so solver error cannot mask a breach.
AUDIT_SOLVER = SolverConfig(max_iterations=100_000, tolerance=1e-14)


def _verdict(num: int, ok: bool, detail: str) -> bool:
    print(f"criterion {num}: {'PASS' if ok else 'FAIL'} [{detail}]")
    return ok


@pytest.fixture(scope="module")
def adjacent_losses():
    """Constrained losses over all 15 masks for 1,000 adjacent dataset pairs.

    Responses are random signs, which keeps fitted losses well above the
    (r+R)^2 width so the relative-score audit in criterion 2 has plenty of
    qualifying masks instead of being vacuously true.
    """
    rng = np.random.default_rng(MASTER)
    masks = all_subsets(AUDIT_D)

    def losses(x, y):
        st = sufficient_stats(Dataset.from_arrays(x, y, response_bound=AUDIT_R))
        fits = fit_masks(st, masks, radius=AUDIT_RADIUS, config=AUDIT_SOLVER)
        return np.array([f.neg2_loglik for f in fits])

    pairs = []
    for _ in range(250):
        x = rng.uniform(-1.0, 1.0, (AUDIT_N, AUDIT_D))
        y = rng.choice([-1.0, 1.0], AUDIT_N)
        base = losses(x, y)
        for _ in range(4):
            xn, yn = x.copy(), y.copy()
            j = int(rng.integers(AUDIT_N))
            xn[j] = rng.uniform(-1.0, 1.0, AUDIT_D)
            yn[j] = rng.choice([-1.0, 1.0])
            pairs.append((base, losses(xn, yn)))
    return pairs


def test_c01_loss_sensitivity_audit(adjacent_losses):
    worst = max(float(np.max(np.abs(b - a))) for a, b in adjacent_losses)
    cap = AUDIT_WIDTH + 1e-6
    detail = f"max loss change {worst:.6f}, bound {cap:.6f}, pairs {len(adjacent_losses)}"
    assert _verdict(1, worst <= cap, detail), detail


def test_c02_profile_sensitivity_audit(adjacent_losses):
    n = AUDIT_N
    checked = 0
    worst_slack = -math.inf
    for base, other in adjacent_losses:
        qual = base > AUDIT_WIDTH
        if not qual.any():
            continue
        checked += int(qual.sum())
        lhs = np.abs(n * np.log(base[qual] / n) - n * np.log(other[qual] / n))
        cap = n * AUDIT_WIDTH / (base[qual] - AUDIT_WIDTH) + 1e-6
        worst_slack = max(worst_slack, float(np.max(lhs - cap)))
    ok = checked >= 1000 and worst_slack <= 0.0
    detail = f"qualifying mask audits {checked}, worst margin {worst_slack:.3e} (<= 0 passes)"
    assert _verdict(2, ok, detail), detail


def test_c03_unconstrained_equivalence():
    # With the radius at r*sqrt(d/kappa0) the constraint never binds, so
    # every masked fit must land on the normal-equation solution.
    rng = np.random.default_rng(MASTER + 3)
    tight = SolverConfig(max_iterations=200_000, tolerance=1e-16)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(80, 241))
        d = int(rng.integers(2, 7))
        x = rng.uniform(-1.0, 1.0, (n, d))
        beta = rng.normal(0.0, 0.3, d)
        y = np.clip(x @ beta + rng.normal(0.0, 0.3, n), -1.0, 1.0)
        st = sufficient_stats(Dataset.from_arrays(x, y, response_bound=1.0))
        kappa = float(np.linalg.eigvalsh(st.xtx / n)[0])
        radius = math.sqrt(d / kappa)
        fam = [ModelMask.full(d)]
        while len(fam) < 3:
            pick = [int(i) + 1 for i in np.flatnonzero(rng.random(d) < 0.5)]
            if pick:
                m = ModelMask.from_indices(pick, d)
                if all(m.bits != f.bits for f in fam):
                    fam.append(m)
        fits = fit_masks(st, fam, radius=radius, config=tight)
        for mask, fit in zip(fam, fits):
            cols = mask.column_positions()
            xm = x[:, cols]
            ols = np.linalg.solve(xm.T @ xm, xm.T @ y)
            worst = max(worst, float(np.max(np.abs(fit.beta[cols] - ols))))
            off = np.delete(fit.beta, cols)
            if off.size:
                worst = max(worst, float(np.max(np.abs(off))))
    detail = f"max coefficient gap vs normal equations {worst:.3e}, bound 1e-06"
    assert _verdict(3, worst <= 1e-6, detail), detail


def test_c04_mechanism_distributions():
    from scipy import stats

    draws = sample_laplace(RngStream(MASTER, 41), 1.3, size=100_000)
    ks = stats.kstest(draws, "laplace", args=(0.0, 1.3))

    masks = list(all_subsets(3))
    scores = (0.0, 0.4, 0.9, 1.6, 2.3, 3.1, 4.0)
    eps = 2.0
    cands = [ScoredCandidate(m, s, 0.0) for m, s in zip(masks, scores)]
    trials = 100_000
    counts = Counter()
    for i in range(trials):
        chosen, _ = exponential_mechanism(
            cands, 1.0, PrivacyBudget(eps, 0.0), RngStream(MASTER, 42_000_000 + i)
        )
        counts[chosen.bits] += 1
    weights = np.exp(-eps * np.array(scores) / 2.0)
    probs = weights / weights.sum()
    observed = np.array([counts[m.bits] for m in masks], dtype=float)
    chi = stats.chisquare(observed, probs * trials)

    ok = ks.pvalue > 0.01 and chi.pvalue > 0.01
    detail = f"laplace KS p={ks.pvalue:.3f}, softmax chi-square p={chi.pvalue:.3f}, both > 0.01"
    assert _verdict(4, ok, detail), detail


def _sweep_props(coefficients, model_id, radius, eps_values):
    grid = SweepGrid(
        n_values=(1000,),
        radius_values=(radius,),
        epsilon_values=eps_values,
        replications=500,
    )
    template = SyntheticSpec(n=1000, coefficients=coefficients, rng=RngStream(MASTER, 0))
    result = run_sweep(grid, template, model_id=model_id)
    by_eps = {}
    for row in result.rows:
        by_eps.setdefault(row.epsilon, []).append((row.phi, row.prop_correct))
    return {e: sorted(v) for e, v in by_eps.items()}


def test_c05_sweep_strong_signal():
    props = _sweep_props((1.0, 1.0, 1.0, 0.0, 0.0, 0.0), "1", 3.5, (0.1, 5.0, 10.0))

    cells = props[5.0]
    best = run = 0
    end = -1
    for i, (_, p) in enumerate(cells):
        run = run + 1 if p >= 0.90 else 0
        if run > best:
            best, end = run, i
    lo = cells[end - best + 1][0] if best else float("nan")
    hi = cells[end][0] if best else float("nan")
    b10 = max(p for _, p in props[10.0])
    b01 = max(p for _, p in props[0.1])
    sigma = math.sqrt(b10 * (1 - b10) / 500 + b01 * (1 - b01) / 500)

    ok = best >= 2 and b10 >= b01 - 3 * sigma
    detail = (
        f"eps=5 plateau >=0.90 spans {best} grid cells (phi {lo:.1f}..{hi:.1f}); "
        f"best prop eps=10 {b10:.3f} vs eps=0.1 {b01:.3f} (3-sigma {3 * sigma:.3f})"
    )
    assert _verdict(5, ok, detail), detail


def test_c06_sweep_tapered_signal():
    props = _sweep_props((1.5, 1.0, 0.5, 0.0, 0.0, 0.0), "2", 2.5, (5.0,))
    phi, bestp = max(props[5.0], key=lambda t: t[1])
    detail = f"best prop_correct {bestp:.3f} at phi={phi:.1f}, required >= 0.95"
    assert _verdict(6, bestp >= 0.95, detail), detail


def test_c07_radius_below_signal_norm():
    # The true coefficient l1 norm is 3; fitting with radius 1 should leave
    # too little signal for reliable recovery at any penalty.
    props = _sweep_props((1.0, 1.0, 1.0, 0.0, 0.0, 0.0), "1", 1.0, (5.0,))
    phi, worst = max(props[5.0], key=lambda t: t[1])
    detail = f"max prop_correct {worst:.3f} at phi={phi:.1f}, required <= 0.10"
    assert _verdict(7, worst <= 0.10, detail), detail


def test_c08_privacy_log_ratio():
    sens = ls_sensitivity(AUDIT_R, AUDIT_RADIUS).value
    m1 = ModelMask.from_indices([1], 2)
    m2 = ModelMask.from_indices([2], 2)
    trials = 1_000_000
    parts = []
    ok = True
    for k, eps in enumerate((0.5, 1.0)):
        scale = 2.0 * sens / eps
        budget = PrivacyBudget(eps, 0.0)
        # Two score vectors one row swap apart in the worst case: every
        # candidate's score moves by exactly the global sensitivity.
        sides = (
            [ScoredCandidate(m1, 0.0, scale), ScoredCandidate(m2, sens, scale)],
            [ScoredCandidate(m1, sens, scale), ScoredCandidate(m2, 0.0, scale)],
        )
        counts = (Counter(), Counter())
        for i in range(trials):
            rng_id = 80_000_000 + k * 2_000_000 + i
            for side, cands in enumerate(sides):
                chosen, _ = noisy_argmin(cands, budget, RngStream(MASTER, rng_id))
                counts[side][chosen.bits] += 1
        worst = max(
            abs(math.log(counts[0][bits] / counts[1][bits]))
            for bits in (m1.bits, m2.bits)
        )
        parts.append(f"eps={eps}: log-ratio {worst:.3f} <= {eps + 0.05:.2f}")
        ok = ok and worst <= eps + 0.05
    detail = "; ".join(parts) + f"; {trials} draws per side"
    assert _verdict(8, ok, detail), detail


def test_c09_fallback_uniformity():
    from scipy import stats

    # n too small for the profile denominator: 30 sign-bounded responses
    # keep every fitted loss under (r+R)^2 = 16, so the sensitivity proxy
    # is infinite and stage 2 must fall back to a uniform pick.
    rng = np.random.default_rng(MASTER + 9)
    x = rng.uniform(-1.0, 1.0, (30, 3))
    y = rng.uniform(-0.9, 0.9, 30)
    ds = Dataset.from_arrays(x, y, response_bound=1.0)
    fam = all_subsets(3)
    cfg = SelectionConfig(
        radius=3.0,
        penalty=2.0,
        budget=PrivacyBudget(1.0, 1e-6),
        response_bound=1.0,
    )
    counts = Counter()
    fallbacks = 0
    for i in range(10_000):
        rep = pcpl_select(ds, fam, cfg, RngStream(MASTER, 900_000 + i))
        fallbacks += int(rep.fallback_uniform and math.isinf(rep.g_of_d))
        counts[rep.chosen.bits] += 1
    observed = np.array([counts[m.bits] for m in fam], dtype=float)
    chi = stats.chisquare(observed)
    ok = fallbacks == 10_000 and chi.pvalue > 0.01
    detail = f"fallback on {fallbacks}/10000 draws, uniformity chi-square p={chi.pvalue:.3f}"
    assert _verdict(9, ok, detail), detail


def test_c10_cli_reproducibility(tmp_path):
    rng = np.random.default_rng(MASTER + 10)
    x = rng.uniform(-1.0, 1.0, (60, 3))
    y = np.clip(x @ np.array([0.8, -0.5, 0.0]) + 0.2 * rng.normal(size=60), -1.5, 1.5)
    lines = ["x1,x2,x3,y"]
    lines += [f"{a:.10f},{b:.10f},{c:.10f},{d:.10f}" for a, b, c, d in np.column_stack([x, y])]
    data = tmp_path / "demo.csv"
    data.write_text("\n".join(lines) + "\n")

    reports = []
    for tag in ("a", "b"):
        out = tmp_path / f"report_{tag}.json"
        code = cli.main([
            "select", "--input", str(data), "--response", "y",
            "--R", "2.0", "--phi", "3.0", "--epsilon", "1.0",
            "--seed", "424242", "--out", str(out),
        ])
        assert code == 0
        reports.append(out.read_bytes())

    sweeps = []
    for tag in ("a", "b"):
        out = tmp_path / f"sweep_{tag}.csv"
        code = cli.main([
            "sweep", "--model-id", "1", "--n", "150", "--R", "3.5",
            "--eps", "1.0", "--phi", "5,15,40", "--replications", "40",
            "--seed", "7", "--out", str(out),
        ])
        assert code == 0
        sweeps.append(out.read_bytes())

    ok = (
        reports[0] == reports[1]
        and len(reports[0]) > 100
        and sweeps[0] == sweeps[1]
        and sweeps[0].count(b"\n") == 4
    )
    detail = (
        f"select report {len(reports[0])} bytes identical across runs; "
        f"sweep CSV {len(sweeps[0])} bytes identical across runs"
    )
    assert _verdict(10, ok, detail), detail
