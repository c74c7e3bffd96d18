"""Capped-simplex projection against the bisection oracle and KKT checks."""

import numpy as np
import pytest

from blindsr import (
    CappedSimplexSpec,
    InfeasibleSpecError,
    KernelGrid,
    project_capped_simplex,
    project_oracle,
)


def feasible(z, cap, tol_box=1e-14, tol_sum=1e-12):
    return z.min() >= -0.0 and z.max() <= cap + tol_box and abs(z.sum() - 1.0) <= tol_sum


def test_spec_rejects_empty_set():
    with pytest.raises(InfeasibleSpecError):
        CappedSimplexSpec(p_total=4, cap=0.2)
    with pytest.raises(InfeasibleSpecError):
        CappedSimplexSpec(p_total=3, cap=-0.5)
    CappedSimplexSpec(p_total=4, cap=0.25)  # boundary case is allowed


def test_identity_on_feasible_points():
    rng = np.random.default_rng(0)
    spec = CappedSimplexSpec(p_total=9, cap=0.5)
    for _ in range(20):
        z = project_oracle(rng.standard_normal(9), spec)
        out = project_capped_simplex(z, spec)
        assert np.abs(out - z).max() <= 1e-12


def test_symmetric_two_point_split():
    spec = CappedSimplexSpec(p_total=2, cap=1.0)
    out = project_capped_simplex(np.array([0.9, 0.9]), spec)
    assert np.abs(out - 0.5).max() <= 1e-12


def test_cap_active_known_solution():
    # KKT solution with the cap active on the first coordinate
    spec = CappedSimplexSpec(p_total=3, cap=0.45)
    out = project_capped_simplex(np.array([1.0, 0.0, 0.0]), spec)
    expected = np.array([0.45, 0.275, 0.275])
    assert np.abs(out - expected).max() <= 1e-12
    oracle = project_oracle(np.array([1.0, 0.0, 0.0]), spec)
    assert np.abs(oracle - expected).max() <= 1e-8


def test_uniform_point_fixed():
    spec = CappedSimplexSpec(p_total=5, cap=1.0)
    theta = np.full(5, 0.2)
    out = project_capped_simplex(theta, spec)
    assert np.abs(out - 0.2).max() <= 1e-12


def test_large_constant_projects_to_barycenter():
    spec = CappedSimplexSpec(p_total=8, cap=0.9)
    out = project_capped_simplex(np.full(8, 57.0), spec)
    assert np.abs(out - 1.0 / 8).max() <= 1e-12


@pytest.mark.parametrize("p_total", [4, 9, 169])
def test_oracle_agreement_randomized(p_total):
    rng = np.random.default_rng(100 + p_total)
    caps = [1.0 / p_total + 0.01, 0.45, 0.6, 1.0]
    for cap in caps:
        spec = CappedSimplexSpec(p_total=p_total, cap=cap)
        for _ in range(50):
            theta = rng.standard_normal(p_total) * rng.uniform(0.1, 10.0)
            a = project_capped_simplex(theta, spec)
            b = project_oracle(theta, spec)
            assert np.abs(a - b).max() <= 1e-8
            assert feasible(a, cap)


def test_variational_inequality():
    rng = np.random.default_rng(7)
    spec = CappedSimplexSpec(p_total=9, cap=0.45)
    for _ in range(20):
        theta = rng.standard_normal(9) * 3.0
        z = project_capped_simplex(theta, spec)
        for _ in range(100):
            w = project_oracle(rng.standard_normal(9), spec)
            assert float(np.dot(theta - z, w - z)) <= 1e-10


def test_idempotence():
    rng = np.random.default_rng(8)
    spec = CappedSimplexSpec(p_total=16, cap=0.3)
    for _ in range(20):
        z = project_capped_simplex(rng.standard_normal(16) * 5, spec)
        z2 = project_capped_simplex(z, spec)
        assert np.abs(z - z2).max() <= 1e-12


def test_nonexpansiveness():
    rng = np.random.default_rng(9)
    spec = CappedSimplexSpec(p_total=25, cap=0.2)
    for _ in range(50):
        a = rng.standard_normal(25) * 2
        b = rng.standard_normal(25) * 2
        pa = project_capped_simplex(a, spec)
        pb = project_capped_simplex(b, spec)
        assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-12


def test_dual_gap_monotone():
    rng = np.random.default_rng(10)
    cap = 0.4
    theta = rng.standard_normal(12)
    taus = np.linspace(theta.min() - cap - 1, theta.max() + 1, 300)
    gaps = [np.clip(theta - t, 0, cap).sum() - 1 for t in taus]
    assert all(g1 >= g2 - 1e-15 for g1, g2 in zip(gaps, gaps[1:]))


def test_kernel_grid_round_trip():
    rng = np.random.default_rng(11)
    spec = CappedSimplexSpec.for_kernel(3, 0.45)
    k = KernelGrid(rng.random((3, 3)))
    out = project_capped_simplex(k, spec)
    assert isinstance(out, KernelGrid)
    assert out.is_feasible(0.45)
    flat = project_capped_simplex(k.data.ravel(), spec)
    assert np.abs(out.data.ravel() - flat).max() == 0.0


def test_exact_flux_restoration():
    rng = np.random.default_rng(12)
    spec = CappedSimplexSpec(p_total=169, cap=0.45)
    for _ in range(100):
        z = project_capped_simplex(rng.standard_normal(169) * 10, spec)
        assert abs(z.sum() - 1.0) <= 1e-12
