import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import solve_discrete_lyapunov

from pidld.errors import DivergentSystemError, InvalidInputError
from pidld.rng import derive_stream
from pidld.stability import (analyze, build_system, empirical_stationary_covariance, jury_check,
                             linear_recursion, lyapunov_residual, step_bounds, quadratic_root_radius,
                             series_covariance, simulate_deterministic, simulate_deterministic_grid,
                             spectral_radius, stationary_covariance)


def power_iteration_radius(J, iters=20_000):
    v = np.array([1.0, 0.37])
    for _ in range(iters):
        w = J @ v
        v = w / np.linalg.norm(w)
    return float(np.linalg.norm(J @ v))


def test_build_system_examples():
    s = build_system(0.1, 1.0, 1.0)
    assert np.allclose(s.J, [[0.8, 0.1], [1.0, 0.0]], rtol=0, atol=1e-15)
    assert s.Q[0, 0] == 0.2 and s.Q[0, 1] == 0.0 and s.Q[1, 1] == 0.0
    z = build_system(0.3, 0.0, 2.0)
    assert np.array_equal(z.J, [[1 - 0.6, 0.0], [1.0, 0.0]])
    assert sorted(np.abs(np.linalg.eigvals(z.J))) == pytest.approx([0.0, 0.4])


@pytest.mark.parametrize("args", [(0.0, 1.0, 1.0), (-1.0, 1.0, 1.0), (0.1, 1.0, 0.0), (0.1, -0.5, 1.0)])
def test_build_system_validation(args):
    with pytest.raises(InvalidInputError):
        build_system(*args)


def test_radius_closed_forms():
    assert spectral_radius(build_system(1.0, 0.0, 1.0)) == 0.0
    # conjugate pair: |l|^2 equals the constant term
    assert quadratic_root_radius(0.5, 0.36) == pytest.approx(0.6, rel=1e-15)
    assert quadratic_root_radius(0.0, 0.25) == pytest.approx(0.5, rel=1e-15)
    roots = np.roots([1.0, -0.5, 0.36])
    assert quadratic_root_radius(0.5, 0.36) == pytest.approx(np.max(np.abs(roots)), rel=1e-12)


@given(st.floats(0.01, 3.0), st.floats(0.0, 6.0), st.floats(0.1, 3.0))
@settings(max_examples=200, deadline=None)
def test_radius_matches_eigenvalues(eps, kd, m):
    s = build_system(eps, kd, m)
    assert spectral_radius(s) == pytest.approx(np.max(np.abs(np.linalg.eigvals(s.J))), rel=1e-9, abs=1e-12)


@given(st.floats(0.01, 2.0), st.floats(0.0, 5.0), st.floats(0.2, 2.0))
@settings(max_examples=60, deadline=None)
def test_radius_matches_power_iteration(eps, kd, m):
    s = build_system(eps, kd, m)
    lam = np.sort(np.abs(np.linalg.eigvals(s.J)))
    rho = spectral_radius(s)
    if not (rho < 1.0 and lam[1] > 0.05 and lam[0] / lam[1] < 0.99):
        return  # power iteration needs a separated dominant root
    assert power_iteration_radius(s.J) == pytest.approx(rho, abs=1e-10)


def test_jury_examples():
    assert step_bounds(1.0, 1.0) == pytest.approx((1 / 3, 2 / 3))
    ok = jury_check(build_system(0.6, 1.0, 1.0))
    assert ok.passed and ok.conditions == (True, True, True)
    bad = jury_check(build_system(0.7, 1.0, 1.0))
    assert not bad.passed and bad.conditions == (True, True, False)
    assert bad.bound_proof == pytest.approx(2 / 3) and bad.bound_statement == pytest.approx(1 / 3)
    for eps in (0.5, 1.9, 1.999):
        assert jury_check(build_system(eps, 0.0, 1.0)).passed
    for eps in (2.001, 3.0):
        assert not jury_check(build_system(eps, 0.0, 1.0)).passed


def test_marginal_band():
    assert jury_check(build_system(2.0 / 3.0, 1.0, 1.0)).marginal
    assert not jury_check(build_system(0.6, 1.0, 1.0)).marginal


def test_jury_agrees_with_radius_on_dense_grid():
    checked = 0
    for m in (0.5, 1.0, 2.0):
        for eps in np.linspace(0.02, 2.5, 50):
            for kd in np.linspace(0.0, 5.0, 50):
                s = build_system(eps, kd, m)
                jr = jury_check(s)
                rho = spectral_radius(s)
                if jr.marginal or abs(rho - 1.0) <= 1e-9:
                    continue
                assert jr.passed == (rho < 1.0), (eps, kd, m)
                checked += 1
    assert checked > 7000


def test_bounds_monotone():
    kd = np.linspace(0, 5, 50)
    for m in (0.5, 1.0, 2.0):
        b = np.array([step_bounds(k, m)[1] for k in kd])
        assert np.all(np.diff(b) < 0)
    ms = np.linspace(0.1, 3, 40)
    assert np.all(np.diff([step_bounds(1.0, m)[1] for m in ms]) < 0)


def test_ar1_stationary_variance():
    S = stationary_covariance(build_system(0.5, 0.0, 1.0))
    assert S[0, 0] == pytest.approx(2 * 0.5 / (1 - 0.5**2), rel=1e-10)
    assert S[0, 0] == pytest.approx(4 / 3, rel=1e-10)


@pytest.mark.parametrize("eps,kd,m", [(0.1, 1.0, 1.0), (0.3, 2.0, 0.5), (0.05, 0.0, 3.0), (0.15, 4.0, 1.0)])
def test_covariance_oracles(eps, kd, m):
    s = build_system(eps, kd, m)
    S = stationary_covariance(s, tol=1e-14)
    assert lyapunov_residual(s, S) < 1e-13
    assert np.allclose(S, solve_discrete_lyapunov(s.J, s.Q), rtol=1e-9, atol=1e-12)
    assert np.array_equal(S, S.T)


def test_series_tail_bound():
    s = build_system(0.2, 1.5, 1.0)
    rho = spectral_radius(s)
    powers = [np.linalg.matrix_power(s.J, k) for k in range(1, 400)]
    C = max(np.linalg.norm(P, 2) / rho**k for k, P in enumerate(powers, 1))
    tol = 1e-10
    K = next(k for k in range(1, 10_000)
             if C**2 * np.linalg.norm(s.Q, 2) * rho ** (2 * k) / (1 - rho**2) < tol)
    S = stationary_covariance(s, tol=1e-15)
    assert np.max(np.abs(series_covariance(s, K) - S)) < tol


def test_analyze_report():
    r = analyze(0.1, 1.0, 1.0)
    assert r.jury_pass and r.stationary_cov is not None and r.spectral_radius < 1
    d = analyze(2.5, 1.0, 1.0)
    assert not d.jury_pass and d.stationary_cov is None and d.spectral_radius > 1
    with pytest.raises(DivergentSystemError):
        stationary_covariance(build_system(2.5, 1.0, 1.0))


def test_deterministic_convergence_and_divergence():
    run = simulate_deterministic(0.6, 1.0, 1.0, 1.0, 1.0, 500)
    assert run.converged and not run.diverged
    bad = simulate_deterministic(2.5, 0.0, 1.0, 1.0, 1.0, 500)
    assert bad.diverged and not bad.converged
    still = simulate_deterministic(0.6, 1.0, 1.0, 3.0, 3.0, 100, x_star=3.0)
    assert np.all(still.trajectory == 3.0)
    with pytest.raises(InvalidInputError):
        simulate_deterministic(0.1, 1.0, 1.0, 1.0, 1.0, 0)


@pytest.mark.parametrize("eps,kd,m", [(0.3, 1.0, 1.0), (0.1, 2.0, 1.0), (0.5, 0.5, 1.5), (0.2, 0.0, 1.0)])
def test_exponential_rate(eps, kd, m):
    rho = spectral_radius(build_system(eps, kd, m))
    tr = simulate_deterministic(eps, kd, m, 1.0, 1.0, 400).trajectory
    err = np.abs(tr)
    t = np.arange(len(err))
    keep = (t >= 10) & (err > 1e-250)
    keep[200:] = False
    slope = np.polyfit(t[keep], np.log(err[keep]), 1)[0]
    assert slope == pytest.approx(math.log(rho), rel=0.10)


def test_grid_simulation_matches_scalar():
    eps = np.array([0.6, 0.7, 2.5, 0.1])
    kd = np.array([1.0, 1.0, 0.0, 3.0])
    conv, div = simulate_deterministic_grid(eps, kd, 1.0, 2000)
    for i in range(4):
        r = simulate_deterministic(eps[i], kd[i], 1.0, 1.0, 1.0, 2000, keep_trajectory=False)
        assert (conv[i], div[i]) == (r.converged, r.diverged)


def test_linear_recursion_matches_loop():
    w = derive_stream(4, 0).normal(200)
    y = linear_recursion(0.8, 0.1, w, 0.5, -0.2)
    a, b = 0.5, -0.2
    for t in range(200):
        a, b = 0.8 * a + 0.1 * b + w[t], a
        assert y[t] == a


def test_empirical_covariance_matches_lyapunov():
    S = stationary_covariance(build_system(0.1, 1.0, 1.0))
    E = empirical_stationary_covariance(0.1, 1.0, 1.0, 10_000, 1_000_000, derive_stream(0, 0))
    assert np.all(np.abs(E - S) / np.abs(S) < 0.05)
    assert abs(E[0, 1] - E[1, 0]) < 1e-12


def test_empirical_covariance_ar1():
    E = empirical_stationary_covariance(0.5, 0.0, 1.0, 1000, 1_000_000, derive_stream(1, 0))
    var = 2 * 0.5 / (1 - 0.25)
    assert E[0, 0] == pytest.approx(var, rel=0.05)
    assert E[0, 1] == pytest.approx(0.5 * var, rel=0.05)


def test_empirical_covariance_rejects_unstable():
    with pytest.raises(DivergentSystemError):
        empirical_stationary_covariance(0.7, 1.0, 1.0, 10, 100, derive_stream(0, 0))
