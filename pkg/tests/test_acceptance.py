"""Acceptance criteria 1-10, each at its stated tolerance.

Every test records one pass/fail line, shown in the terminal summary.
Criteria 3 and 8 also have whole-run counterparts checked at session end.
"""

import itertools
import time

import numpy as np
import pytest

import conftest
from mfoc import dynamics, harness, meanfield
from mfoc.control_opt import evaluate_cost, nearest_admissible, optimize, sparsity_report
from mfoc.core_model import AffineKernel, ControlField, CuckerSmaleKernel, EmpiricalMeasure
from mfoc.transport import w1_distance

from scenarios import constant_rate, make, random_cs, two_agents


def report(n, ok, detail):
    conftest.ACCEPTANCE_LINES[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(conftest.ACCEPTANCE_LINES[n])
    assert ok, detail


def test_criterion_01_closed_form_consensus():
    s = make(2, agents=8, horizon=2.0, steps=2000, kernel=constant_rate(2), seed=1)
    start = time.perf_counter()
    tr = dynamics.integrate(s)
    elapsed = time.perf_counter() - start
    v0 = tr.v[0]
    vbar = v0.mean(axis=0)
    exact = vbar + (v0 - vbar)[None] * np.exp(-tr.times)[:, None, None]
    err = float(np.max(np.linalg.norm(tr.v - exact, axis=2)))
    report(1, err <= 1e-6 and elapsed < 5.0, f"max velocity error {err:.2e} (<= 1e-6), runtime {elapsed:.2f}s (< 5s)")


def test_criterion_02_conservation():
    worst = 0.0
    for seed in range(20):
        s = random_cs(seed, dim=int(1 + seed % 3), agents=10, horizon=2.0, steps=200)
        tr = dynamics.integrate(s)
        v0, vT = tr.v[0].mean(axis=0), tr.v.mean(axis=1)
        scale = max(np.linalg.norm(v0), np.mean(np.linalg.norm(tr.v[0], axis=1)))
        worst = max(worst, float(np.max(np.linalg.norm(vT - v0, axis=1))) / scale)
    report(2, worst <= 1e-12, f"worst relative mean-velocity drift over 20 seeds {worst:.2e} (<= 1e-12)")


def test_criterion_03_confinement():
    rng = np.random.default_rng(3)
    for seed in range(10):
        kind = ("constant", "affine_v", "affine_phase")[seed % 3]
        s = random_cs(seed, dim=2, agents=8, horizon=3.0, steps=150, kind=kind, cells=3, ell=1.5)
        m, d = s.control.cells, s.dim
        B = rng.normal(size=(m, d, d)) if kind != "constant" else np.zeros((m, d, d))
        D = rng.normal(size=(m, d, d)) if kind == "affine_phase" else np.zeros((m, d, d))
        f = ControlField(kind, s.control.grid, rng.normal(size=(m, d)), B, D)
        dynamics.integrate(s, nearest_admissible(f, s.ell))
    trajs, states, inside = conftest.confinement_summary()
    report(3, inside == states, f"{inside}/{states} states inside B(0, R_T) over {trajs} trajectories so far "
                                "(whole run rechecked at session end)")


def _brute_force(a, b):
    cost = np.linalg.norm(a[:, None] - b[None], axis=2)
    n = len(a)
    return min(cost[np.arange(n), list(p)].sum() for p in itertools.permutations(range(n))) / n


def test_criterion_04_w1_oracles():
    rng = np.random.default_rng(4)
    perm_err = 0.0
    for _ in range(200):
        n, dim = int(rng.integers(1, 8)), int(rng.integers(1, 5))
        a, b = rng.normal(size=(2, n, dim))
        perm_err = max(perm_err, abs(w1_distance(EmpiricalMeasure(a), EmpiricalMeasure(b)) - _brute_force(a, b)))
    axiom_err = 0.0
    for _ in range(100):
        mu, nu, rho = (EmpiricalMeasure(rng.normal(size=(int(rng.integers(1, 8)), 2))) for _ in range(3))
        d_mn, d_nm = w1_distance(mu, nu), w1_distance(nu, mu)
        axiom_err = max(axiom_err, abs(d_mn - d_nm), d_mn - w1_distance(mu, rho) - w1_distance(rho, nu),
                        w1_distance(mu, mu))
    sort_err = 0.0
    for n in (1, 2, 7, 50, 400):
        a, b = rng.normal(size=(2, n))
        expected = np.mean(np.abs(np.sort(a) - np.sort(b)))
        sort_err = max(sort_err, abs(w1_distance(EmpiricalMeasure(a[:, None]), EmpiricalMeasure(b[:, None])) - expected))
    ok = perm_err <= 1e-12 and axiom_err <= 1e-10 and sort_err <= 1e-12
    report(4, ok, f"permutation {perm_err:.1e} (<= 1e-12), axioms {axiom_err:.1e} (<= 1e-10), "
                  f"sorted 1D {sort_err:.1e} (<= 1e-12)")


def test_criterion_05_weak_form_order():
    zeta = meanfield.QuadraticTest("v")
    residuals = []
    for steps in (10, 20, 40, 80):
        s = make(2, agents=8, horizon=1.0, steps=steps, kernel=constant_rate(2), seed=5)
        mt = meanfield.solve_meanfield(s.initial_ensemble().measure(), s)
        residuals.append(abs(meanfield.weak_form_residual(mt, s, s.control, zeta, s.horizon)))
    ratios = [b / a for a, b in zip(residuals, residuals[1:])]
    ok = all(b <= a / 3 for a, b in zip(residuals, residuals[1:]))
    report(5, ok, "residuals " + ", ".join(f"{r:.2e}" for r in residuals)
           + "; ratios " + ", ".join(f"{q:.3f}" for q in ratios) + " (<= 1/3)")


def test_criterion_06_stability():
    rng = np.random.default_rng(6)
    s = make(2, agents=8, horizon=1.0, steps=40, kernel=CuckerSmaleKernel(2, 1.0, 1.0, 0.5), seed=6)
    mu = s.initial_ensemble().measure()
    worst = -np.inf
    for k in range(20):
        if k % 2:
            nu = EmpiricalMeasure(mu.atoms + rng.uniform(0.01, 0.3) * rng.normal(size=mu.atoms.shape))
        else:
            nu = s.initial_ensemble(count=int(rng.integers(2, 17)), seed=100 + k).measure()
        res = meanfield.stability_check(mu, nu, s)
        worst = max(worst, float(np.max(res.measured - res.bound)))
    zero = meanfield.stability_check(mu, mu, s)
    zero_ok = not zero.measured.any()
    report(6, worst <= 0 and zero_ok, f"max(measured - certified) over 20 pairs {worst:.3g} (<= 0); "
                                      f"zero perturbation identically 0: {zero_ok}")


def limit_scenario():
    s = make(2, agents=16, horizon=1.0, steps=20, kernel=CuckerSmaleKernel(2, 1.0, 1.0, 0.5),
             kind="affine_v", cells=2, ell=1.0, seed=7)
    f = ControlField("affine_v", s.control.grid, [[0.2, 0.0], [0.0, 0.1]], [-0.3 * np.eye(2), -0.5 * np.eye(2)],
                     np.zeros((2, 2, 2)))
    return s, f


@pytest.mark.slow
def test_criterion_07_mean_field_limit():
    s, f = limit_scenario()
    assert f.is_admissible(s.ell)
    start = time.perf_counter()
    res = harness.limit_study(s, [16, 64, 256], f, list(range(10)), 1024)
    elapsed = time.perf_counter() - start
    med = res.median_sup_w1
    ok = bool(np.all(np.diff(med) < 0)) and elapsed < 600
    report(7, ok, "median sup W1 at N=16,64,256: " + ", ".join(f"{x:.4f}" for x in med)
           + f" (strictly decreasing), runtime {elapsed:.0f}s (< 600s)")


def _closed_form(beta, gamma, T):
    with np.errstate(divide="ignore", invalid="ignore"):
        J = (1 - np.exp(-2 * beta * T)) / (2 * beta) + gamma * (1 - np.exp(-beta * T))
    return np.where(beta > 0, J, T)


def test_criterion_08_scalar_oracle():
    worst_beta = 0.0
    for gamma in (0.5, 1.2):
        s = two_agents(AffineKernel.zero(1), horizon=1.0, steps=200, kind="affine_v", gamma=gamma, ell=2.0)
        grid = np.linspace(0.0, 2.0, 10_000)
        beta_grid = grid[np.argmin(_closed_form(grid, gamma, 1.0))]
        rep = optimize(s)
        worst_beta = max(worst_beta, abs(-rep.control.B[0, 0, 0] - beta_grid))
    for seed, kind in ((0, "constant"), (1, "affine_v"), (2, "affine_phase")):
        optimize(random_cs(seed, agents=5, steps=20, kind=kind, cells=2, gamma=0.05, ell=0.8), budget=200)
    runs, ok_runs, excess = conftest.optimizer_summary()
    ok = worst_beta <= 1e-3 and ok_runs == runs
    report(8, ok, f"|beta_opt - beta_grid| {worst_beta:.1e} (<= 1e-3); {ok_runs}/{runs} runs so far with cost "
                  f"<= zero cost + 1e-9 (whole run rechecked at session end)")


def sparsity_scenario(gamma):
    return make(1, agents=8, horizon=2.0, steps=40, kernel=CuckerSmaleKernel(1, 0.2, 1.0, 0.5),
                kind="affine_v", cells=4, ell=1.0, gamma=gamma, seed=5)


def test_criterion_09_sparsity():
    masses, last = [], None
    for gamma in (0.01, 0.1, 1.0, 10.0):
        last = optimize(sparsity_scenario(gamma))
        masses.append(float(sparsity_report(last.control, last.trajectory)[1].sum()))
    monotone = all(b <= a + 1e-4 for a, b in zip(masses, masses[1:]))
    zero = not last.control.to_vector().any() and last.cost.sparsity == 1.0
    report(9, monotone and zero, "L1 mass at gamma=0.01,0.1,1,10: " + ", ".join(f"{m:.4g}" for m in masses)
           + f" (non-increasing, tol 1e-4); zero control at gamma=10: {zero}")


@pytest.mark.slow
def test_criterion_10_gamma_proxies():
    s = make(1, agents=16, horizon=1.0, steps=50, kernel=CuckerSmaleKernel(1, 0.5, 1.0, 0.5),
             kind="affine_v", cells=2, ell=1.0, gamma=0.1, seed=11)
    res = harness.gamma_study(s, [16, 64, 256], 1024, list(range(10)))
    gap = float(np.min(res.cross_minimality_gaps()))
    diffs = res.limsup_adjacent_differences()
    ok = gap >= -1e-4 and diffs[1] < diffs[0]
    report(10, ok, f"min cross-minimality gap {gap:.2e} (>= -1e-4); median |J_N(g)| differences "
                   f"{diffs[0]:.4f} -> {diffs[1]:.4f} (shrinking)")


def test_optimized_cost_matches_evaluation():
    # the reported cost is the cost of the reported control on the reported trajectory
    rep = optimize(sparsity_scenario(0.1))
    again = evaluate_cost(rep.trajectory, sparsity_scenario(0.1), rep.control)
    assert again.total == rep.cost.total
