import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfoc.core_model import (AffineKernel, BoundFunction, ControlField, CostSpec, CuckerSmaleKernel,
                             EmpiricalMeasure, InitialSpec, PhaseEnsemble, SamplingError, Scenario,
                             check_penalty, estimate_growth_constant, sample_initial,
                             sampled_lipschitz, uniform_grid, validate_scenario)

from scenarios import make, random_cs


def test_phase_ensemble_rejects_nonfinite():
    with pytest.raises(ValueError):
        PhaseEnsemble([[0.0, np.nan]], [[1.0, 0.0]])
    with pytest.raises(ValueError):
        PhaseEnsemble([[0.0, 1.0]], [[1.0]])


def test_phase_ensemble_is_immutable():
    e = PhaseEnsemble.from_phase([[0.0, 1.0], [2.0, -1.0]])
    assert (e.count, e.dim) == (2, 1)
    with pytest.raises(ValueError):
        e.x[0, 0] = 3.0


def test_measure_normalization():
    with pytest.raises(ValueError):
        EmpiricalMeasure([[0.0], [1.0]], [0.5, 0.6])
    mu = EmpiricalMeasure([[0.0], [1.0]], [0.25, 0.75])
    assert mu.mean() == pytest.approx([0.75])
    assert not mu.is_uniform
    with pytest.raises(ValueError):
        mu.to_ensemble()


def test_well_formed_scenario_is_valid():
    s = random_cs(0)
    assert validate_scenario(s) == []


def test_negative_weight_is_one_violation():
    s = random_cs(0).replace(cost=CostSpec(gamma=-1.0))
    assert validate_scenario(s) == ["ψ nonnegativity"]


def test_double_bound_control_is_one_violation():
    s = make(2, steps=99, kind="constant", cells=3, ell=0.5)
    a = np.zeros((3, 2))
    a[1] = [2 * 0.5, 0.0]
    bad = ControlField("constant", s.control.grid, a, np.zeros((3, 2, 2)), np.zeros((3, 2, 2)))
    assert validate_scenario(s.replace(control=bad)) == ["admissibility cell 1"]


def test_validation_order_and_content():
    s = make(1, atoms=[[0.0, 1.0], [20.0, 0.0]], radius=5.0)
    assert validate_scenario(s) == ["initial atom 1 outside confinement ball"]
    s = make(1, steps=10, kind="constant", cells=3)
    assert validate_scenario(s) == ["control grid not aligned with time steps"]
    s = make(1).replace(kernel=CuckerSmaleKernel(1, K=-1.0))
    assert validate_scenario(s) == ["kernel K > 0"]
    assert validate_scenario(make(1).replace(horizon=0.0)) == ["horizon > 0"]


def test_lq_penalty_checks():
    assert check_penalty(CostSpec(psi="lq_power", q=2.0, gamma=0.5), 2) == []
    assert "ψ convexity" in check_penalty(CostSpec(psi="lq_power", q=0.5, gamma=1.0), 2)


def test_explicit_initial_passthrough():
    spec = InitialSpec("explicit", atoms=np.array([[0.0, 1.0], [2.0, -1.0]]))
    e = sample_initial(spec, 1, 2, radius=10.0)
    assert np.array_equal(e.x, [[0.0], [2.0]])
    assert np.array_equal(e.v, [[1.0], [-1.0]])


def test_uniform_box_is_deterministic():
    spec = InitialSpec("uniform_box", low=-1.0, high=1.0, seed=7)
    a = sample_initial(spec, 2, 16, radius=3.0)
    b = sample_initial(spec, 2, 16, radius=3.0)
    assert np.array_equal(a.z, b.z)
    assert np.all(np.linalg.norm(a.z, axis=1) < 3.0)


def test_truncated_gaussian_mean():
    mean = np.array([1.5, -0.5])
    spec = InitialSpec("gaussian", mean=mean, std=[2.0, 1.5], seed=3)
    e = sample_initial(spec, 1, 10_000, radius=5.0)
    # independent Monte-Carlo estimate of the truncated mean
    rng = np.random.default_rng(2024)
    z = mean + np.array([2.0, 1.5]) * rng.standard_normal((1_500_000, 2))
    z = z[np.linalg.norm(z, axis=1) < 5.0][:1_000_000]
    assert len(z) == 1_000_000
    assert np.all(np.abs(e.z.mean(axis=0) - z.mean(axis=0)) <= 0.05)


def test_degenerate_truncation_raises():
    spec = InitialSpec("gaussian", mean=50.0, std=0.1, seed=0)
    with pytest.raises(SamplingError):
        sample_initial(spec, 1, 4, radius=1.0, max_batches=5)


def test_control_secant_slopes(rng):
    d, m = 3, 4
    grid = uniform_grid(1.0, m)
    f = ControlField("affine_phase", grid, rng.normal(size=(m, d)), rng.normal(size=(m, d, d)),
                     rng.normal(size=(m, d, d)))
    lip = f.lipschitz()
    for k in range(m):
        t = 0.5 * (grid[k] + grid[k + 1])
        for _ in range(50):
            z1, z2 = rng.normal(size=(2, 2 * d)) * 3
            gap = np.linalg.norm(f(t, z1[:d], z1[d:]) - f(t, z2[:d], z2[d:]))
            assert gap <= lip[k] * np.linalg.norm(z1 - z2) * (1 + 1e-12)


def test_control_kind_constraints():
    grid = uniform_grid(1.0, 1)
    with pytest.raises(ValueError):
        ControlField("constant", grid, np.zeros((1, 1)), np.ones((1, 1, 1)), np.zeros((1, 1, 1)))
    with pytest.raises(ValueError):
        ControlField("affine_v", grid, np.zeros((1, 1)), np.zeros((1, 1, 1)), np.ones((1, 1, 1)))
    with pytest.raises(ValueError):
        ControlField("bogus", grid, np.zeros((1, 1)), np.zeros((1, 1, 1)), np.zeros((1, 1, 1)))


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["constant", "affine_v", "affine_phase"]), st.integers(1, 3), st.integers(1, 4),
       st.integers(0, 10_000))
def test_parameter_vector_round_trip(kind, d, m, seed):
    template = ControlField.zeros(kind, uniform_grid(2.0, m), d)
    theta = np.random.default_rng(seed).normal(size=m * template.block_size())
    f = template.with_vector(theta)
    assert np.array_equal(f.to_vector(), theta)
    g = ControlField.from_dict(json.loads(json.dumps(f.to_dict())), d)
    assert np.array_equal(g.to_vector(), theta)


def test_cs_growth_on_grid():
    for K, sigma, beta in [(1.0, 1.0, 0.5), (2.0, 0.3, 1.5), (0.5, 2.0, 0.0)]:
        H = CuckerSmaleKernel(2, K, sigma, beta)
        axis = np.linspace(-4, 4, 7)
        z = np.stack(np.meshgrid(*([axis] * 4)), axis=-1).reshape(-1, 4)
        lhs = np.linalg.norm(H(z), axis=1)
        assert np.all(lhs <= H.growth_constant * (1 + np.linalg.norm(z, axis=1)))
        assert estimate_growth_constant(H, 8.0) <= H.growth_constant


def test_cs_lipschitz_dominates_sampling():
    for beta in (0.0, 0.5, 2.0):
        H = CuckerSmaleKernel(2, 1.3, 0.7, beta)
        for radius in (0.5, 2.0, 6.0):
            assert sampled_lipschitz(H.evaluate, 4, radius) <= H.lipschitz(radius) * (1 + 1e-6)


def test_cs_slope_maximum():
    H = CuckerSmaleKernel(1, 2.0, 0.8, 1.2)
    r = np.linspace(0, 10, 200_001)
    slope = np.abs(np.gradient(H.rate(r), r))
    assert H.max_rate_slope() == pytest.approx(slope.max(), rel=1e-6)


def test_affine_kernel():
    A = np.array([[1.0, 2.0]])
    H = AffineKernel(1, A, [0.5])
    assert H([1.0, 1.0]) == pytest.approx([3.5])
    assert H.lipschitz(3.0) == pytest.approx(np.linalg.norm(A, 2))
    assert AffineKernel.zero(2).to_dict() == {"type": "zero"}


def test_bound_function():
    ell = BoundFunction([0.0, 1.0, 3.0], [2.0, 0.5])
    assert ell.integral() == pytest.approx(3.0)
    assert ell.integral(2.0) == pytest.approx(2.5)
    assert ell.integral(power=2) == pytest.approx(4.5)
    assert ell.min_on(0.0, 1.0) == 2.0
    assert ell.min_on(0.5, 2.0) == 0.5
    assert ell(1.0) == 0.5


def test_scenario_json_round_trip(tmp_path):
    s = make(2, kind="affine_v", cells=2, gamma=0.3, ell=BoundFunction([0, 0.5, 1], [1.0, 2.0]),
             kernel=CuckerSmaleKernel(2, 1.0, 1.0, 0.5))
    path = tmp_path / "s.json"
    path.write_text(json.dumps(s.to_dict()))
    t = Scenario.load(path)
    assert t.to_dict() == s.to_dict()
    assert t.digest() == s.digest()
    assert set(s.to_dict()) == {"dim", "agents", "horizon", "steps", "kernel", "cost", "ell",
                                "initial", "control", "confinement_radius"}
