"""Acceptance gate: eight criteria, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v -s``. The outer optimizations
make the full gate a multi-hour run on one core; DICERT_ACCEPTANCE_FAST=1
skips the long-running criteria for a smoke pass of the cheap ones.

Criterion 4's global window is expected to fail: the optimizer certifies
more randomness (0.44 bits) than the published one-detector global value
(0.34 +- 0.03). The excess is cross-validated (two solvers, relaxation
level 2, information cap); see the failure message of that test.
"""

import os
import time

import numpy as np
import pytest

from dicert.behaviour import (
    BIN_ONE_DETECTOR,
    Behaviour,
    Scenario,
    apply_binning,
    binning,
    chsh_functional,
    local_deterministic_points,
)
from dicert.guessing import (
    GuessingProblem,
    fixed_inequality_randomness,
    solve_guessing,
)
from dicert.optimizer import (
    OptimizationConfig,
    informed_start,
    optimize_randomness,
)
from dicert.spdc import SetupParams, assemble_behaviour
from dicert.studies import (
    _binned_chsh_search,
    _chsh_pipeline,
    binning_disadvantage,
    table1_study,
)
from dicert.cli import oracle_check

FAST = bool(int(os.environ.get("DICERT_ACCEPTANCE_FAST", "0")))
slow = pytest.mark.skipif(FAST, reason="long-running criterion skipped in fast mode")

# reference optimal setup at eta=1 (regression input for criterion 1)
PSTAR = (100, 0.084, 0.084, 2.088, 1.116, 1.473, 1.117, 1.36, 1.117, 1.976, 1.116)

ONE_DET = binning(BIN_ONE_DETECTOR, BIN_ONE_DETECTOR)


def report(k, ok, detail):
    print(f"\nCRITERION {k}: {'PASS' if ok else 'FAIL'} - {detail}")


def restarted_nelder_mead(eta, target, n, stage_evals, max_stages,
                          stop_at, wall_cap, transform=None):
    """Nelder-Mead with simplex restarts from the running best point.

    A fresh simplex around the incumbent escapes the slow final contraction;
    every evaluation remains an independent certificate.
    """
    x0 = informed_start(2, 2)
    best = None
    t0 = time.perf_counter()
    for _ in range(max_stages):
        cfg = OptimizationConfig(strategy="nelder-mead", restarts=1,
                                 max_sdp_evals=stage_evals, seed=0,
                                 n_values=(n,))
        trace = optimize_randomness(eta, (2, 2), target, config=cfg, x0=x0,
                                    transform=transform)
        if best is None or trace.best_min_entropy > best.best_min_entropy:
            best = trace
        x0 = best.best_params.to_vector()[1:]
        if best.best_min_entropy >= stop_at:
            break
        if time.perf_counter() - t0 > wall_cap:
            break
    return best


@pytest.fixture(scope="module")
def eta1_global_trace():
    """Shared eta=1 global optimization (criteria 2 and 8)."""
    return restarted_nelder_mead(
        1.0, ("global", 0, 0), n=100,
        stage_evals=10 if FAST else 120,
        max_stages=1 if FAST else 8,
        stop_at=0.705, wall_cap=90 * 60)


def test_criterion_1_reference_regression():
    p = assemble_behaviour(SetupParams.from_vector(np.array(PSTAR)), 1.0)
    t0 = time.perf_counter()
    r = solve_guessing(GuessingProblem(p, "global", 0, 0))
    wall = time.perf_counter() - t0
    ok = abs(r.min_entropy - 0.74) <= 0.03 and wall < 300 \
        and r.solver_status == "optimal"
    report(1, ok, f"reference setup: global {r.min_entropy:.4f} bits "
                  f"(target 0.74 +- 0.03), {wall:.1f}s, {r.solver_status}")
    assert abs(r.min_entropy - 0.74) <= 0.03
    assert wall < 300


@slow
def test_criterion_2_fourfold_improvement(eta1_global_trace):
    t0 = time.perf_counter()
    cfg = OptimizationConfig(restarts=16, max_sdp_evals=6000, seed=0,
                             n_values=(100,))
    _, chsh_value, chsh_result = _chsh_pipeline(1.0, "1+AB", cfg, None, None)
    wall = time.perf_counter() - t0
    optimized = eta1_global_trace.best_min_entropy
    fixed = chsh_result.min_entropy
    ok = optimized >= 0.70 and abs(fixed - 0.19) <= 0.03
    report(2, ok, f"optimized global {optimized:.4f} bits (>= 0.70), "
                  f"fixed-CHSH {fixed:.4f} bits at CHSH={chsh_value:.4f} "
                  f"(target 0.19 +- 0.03); baseline wall {wall:.0f}s")
    assert optimized >= 0.70
    assert abs(fixed - 0.19) <= 0.03


@slow
def test_criterion_3_scenario_table():
    cfg = OptimizationConfig(strategy="nelder-mead", restarts=1,
                             max_sdp_evals=300, seed=0, n_values=(100,))
    scenarios = ((2, 2), (3, 2), (3, 3))
    records = table1_study(scenarios, config=cfg)
    got = {s: r["bits_local"] for s, r in zip(scenarios, records)}
    targets = {(2, 2): (0.454, 0.02), (3, 2): (0.459, 0.02),
               (3, 3): (0.519, 0.03)}
    ok = all(abs(got[s] - v) <= tol for s, (v, tol) in targets.items())
    detail = ", ".join(f"{s} {got[s]:.4f} (target {v} +- {tol})"
                       for s, (v, tol) in targets.items())
    report(3, ok, detail)
    for s, (v, tol) in targets.items():
        assert abs(got[s] - v) <= tol, f"scenario {s}: {got[s]:.4f}"


@pytest.fixture(scope="module")
def one_det_eta1():
    """Seeded one-detector certification at eta=1 (criterion 4)."""
    cfg = OptimizationConfig(strategy="multistart", restarts=4,
                             max_sdp_evals=40 if FAST else 400, seed=1,
                             n_values=(100,))
    seed = _binned_chsh_search(1.0, cfg, None, None)
    x0 = seed.best_params.to_vector()[1:]
    tr = lambda q: apply_binning(q, ONE_DET)
    out = {}
    for tag, target in (("local", ("local", 0)), ("global", ("global", 0, 0))):
        trace = optimize_randomness(1.0, (2, 2), target, config=cfg, x0=x0,
                                    transform=tr)
        out[tag] = trace.best_min_entropy
    return out


@slow
def test_criterion_4_one_detector_local_and_threshold(one_det_eta1):
    local = one_det_eta1["local"]
    cfg = OptimizationConfig(strategy="nelder-mead", restarts=1,
                             max_sdp_evals=60, seed=0, n_values=(1,))
    two = optimize_randomness(0.78, (2, 2), ("global", 0, 0), config=cfg)
    one = optimize_randomness(0.78, (2, 2), ("global", 0, 0), config=cfg,
                              transform=lambda q: apply_binning(q, ONE_DET))
    b2, b1 = two.best_min_entropy, one.best_min_entropy
    diff = abs(b2 - b1)
    ok = abs(local - 0.31) <= 0.03 and b2 <= 1e-2 and b1 <= 1e-2 \
        and diff <= 1e-3
    report("4 (local, eta=0.78)", ok,
           f"one-detector local {local:.4f} bits (target 0.31 +- 0.03); "
           f"eta=0.78: 2det {b2:.2e}, 1det {b1:.2e}, diff {diff:.2e}")
    assert abs(local - 0.31) <= 0.03
    assert b2 <= 1e-2 and b1 <= 1e-2
    assert diff <= 1e-3


@slow
def test_criterion_4_one_detector_global_window(one_det_eta1):
    g = one_det_eta1["global"]
    ok = abs(g - 0.34) <= 0.03
    report("4 (global window)", ok,
           f"one-detector global {g:.4f} bits vs published window "
           f"0.34 +- 0.03")
    assert abs(g - 0.34) <= 0.03, (
        f"one-detector global randomness {g:.4f} bits exceeds the published "
        "0.34 +- 0.03. This is a genuine improvement, not a soundness bug: "
        "the value is identical to 1e-6 under Clarabel and SCS, unchanged at "
        "relaxation level 2 (gaps ~1e-9), below the -log2(max p) cap, and "
        "the same machinery reproduces the published two-detector 0.73/0.45 "
        "and one-detector local 0.31. The published global value appears to "
        "be a weaker search optimum; see the decisions ledger.")


def test_criterion_5_binning_disadvantage():
    grid = [0.85, 0.90, 0.95, 0.99]
    records = binning_disadvantage(grid)
    worst = min(min(r["disadvantage_bits_BB"], r["disadvantage_bits_BBprime"])
                for r in records)
    ok = worst > 0
    report(5, ok, f"binning disadvantage positive on {grid}, "
                  f"smallest margin {worst:.2e} bits")
    for r in records:
        assert r["disadvantage_bits_BB"] > 0, f"eta={r['eta']}"
        assert r["disadvantage_bits_BBprime"] > 0, f"eta={r['eta']}"


def test_criterion_6_oracle_equivalence():
    t0 = time.perf_counter()
    worst, ok = oracle_check(tolerance=1e-8, seed=0)
    wall = time.perf_counter() - t0
    ok = ok and wall < 120
    report(6, ok, f"max Gaussian/Fock discrepancy {worst:.2e} "
                  f"(tolerance 1e-8) in {wall:.1f}s")
    assert worst <= 1e-8
    assert wall < 120


def test_criterion_7_hierarchy_properties():
    rng = np.random.default_rng(2026)
    s = Scenario(2, 2, 2, 2)
    points = local_deterministic_points(s)
    chsh = chsh_functional(s)
    # PR-box-free nonlocal reference: Tsirelson-point entries
    c, q = (2 + np.sqrt(2)) / 8, (2 - np.sqrt(2)) / 8
    tsir = np.zeros((2, 2, 2, 2))
    for x in range(2):
        for y in range(2):
            flip = 1 if x == y == 1 else 0
            for a in range(2):
                for b in range(2):
                    tsir[a, b, x, y] = c if (a + b) % 2 == flip else q
    worst_lvl, worst_fix = -np.inf, -np.inf
    for k in range(20):
        w = rng.dirichlet(np.ones(len(points)))
        entries = sum(wi * pt.entries for wi, pt in zip(w, points))
        if k % 2:  # half the draws are nonlocal mixtures
            lam = rng.uniform(0.3, 0.9)
            entries = lam * tsir + (1 - lam) * entries
        p = Behaviour(s, entries)
        g = {lv: solve_guessing(GuessingProblem(p, "global", 0, 0, lv)).g_upper
             for lv in ("1", "1+AB", "2")}
        fixed = fixed_inequality_randomness(p, chsh, "global").g_upper
        worst_lvl = max(worst_lvl, g["1+AB"] - g["1"], g["2"] - g["1+AB"])
        worst_fix = max(worst_fix, g["1+AB"] - fixed)
    ok = worst_lvl <= 1e-7 and worst_fix <= 1e-7
    report(7, ok, f"20 behaviours: worst hierarchy slack {worst_lvl:.2e}, "
                  f"worst full-vs-fixed slack {worst_fix:.2e} (<= 1e-7)")
    assert worst_lvl <= 1e-7
    assert worst_fix <= 1e-7


@slow
def test_criterion_8_parameter_trends(eta1_global_trace):
    t = eta1_global_trace.entanglement_ratio
    cfg = OptimizationConfig(strategy="nelder-mead", restarts=1,
                             max_sdp_evals=60, seed=0, n_values=(1,))
    tr1 = optimize_randomness(0.80, (2, 2), ("local", 0), config=cfg)
    cfg100 = OptimizationConfig(strategy="nelder-mead", restarts=1,
                                max_sdp_evals=60, seed=0, n_values=(100,))
    tr100 = optimize_randomness(0.80, (2, 2), ("local", 0), config=cfg100)
    diff = abs(tr1.best_min_entropy - tr100.best_min_entropy)
    ok = 0.97 <= t <= 1.03 and diff <= 1e-3
    report(8, ok, f"t = tanh(g1)/tanh(g2) = {t:.4f} (window [0.97, 1.03]); "
                  f"eta=0.80: N=1 {tr1.best_min_entropy:.2e} vs "
                  f"N=100 {tr100.best_min_entropy:.2e} bits, diff {diff:.2e}")
    assert 0.97 <= t <= 1.03
    assert diff <= 1e-3
