import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pidld import BiasedScore, GaussianMixture, QuadraticPotential, derive_stream, toy_mixture
from pidld.errors import InvalidInputError
from pidld.score_models import ScoreQuery, biased_score, gmm_log_density, gmm_sample, gmm_score, quadratic_score


def fd_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_log_density_single_gaussian_closed_form():
    m = GaussianMixture(np.array([1.0]), np.array([[1.0, -2.0]]), 2.0)
    x = np.array([[0.5, 0.5]])
    v = 2.0 + 0.3**2
    expect = -0.5 * ((0.5 - 1) ** 2 + (0.5 + 2) ** 2) / v - np.log(2 * np.pi * v)
    assert m.log_density(x, 0.3)[0] == pytest.approx(expect, abs=1e-12)


def test_score_single_gaussian_closed_form():
    m = GaussianMixture(np.array([1.0]), np.array([[1.0, -2.0]]), 1.0)
    x = np.array([[3.0, 4.0]])
    assert np.allclose(m.score(x, 2.0), -(x - m.means) / 5.0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(x=st.lists(st.floats(-12, 12), min_size=2, max_size=2), sigma=st.floats(0, 20))
def test_score_matches_finite_differences(x, sigma):
    m = toy_mixture()
    x = np.array(x)
    g = fd_grad(lambda y: m.log_density(y, sigma)[0], x)
    assert np.allclose(m.score(x, sigma)[0], g, atol=1e-6)


def test_far_points_do_not_underflow():
    m = toy_mixture()
    x = np.array([[60.0, -60.0], [0.0, 0.0]])
    assert np.all(np.isfinite(m.log_density(x)))
    assert np.all(np.isfinite(m.score(x)))


def test_validation():
    with pytest.raises(InvalidInputError):
        GaussianMixture(np.array([0.5, 0.4]), np.zeros((2, 2)))
    with pytest.raises(InvalidInputError):
        GaussianMixture(np.array([1.0, 0.0]), np.zeros((2, 2)))
    with pytest.raises(InvalidInputError):
        GaussianMixture(np.array([1.0]), np.zeros((1, 2)), 0.0)
    with pytest.raises(InvalidInputError):
        toy_mixture().score(np.zeros((3, 3)))
    with pytest.raises(InvalidInputError):
        toy_mixture().score(np.zeros((1, 2)), -1.0)


def test_quadratic_score():
    q = QuadraticPotential(2.0, np.array([1.0, 1.0]))
    assert np.array_equal(quadratic_score(q, ScoreQuery(np.array([2.0, 0.0]))), np.array([-2.0, 2.0]))
    with pytest.raises(InvalidInputError):
        QuadraticPotential(0.0, np.zeros(2))


def test_bias_magnitude_and_direction():
    m = toy_mixture()
    b = BiasedScore.toward(m, (-1, 1), 0.05)
    x = np.array([[1.0, 2.0], [-3.0, 0.5]])
    s = m.score(x, 0.5)
    delta = b.score(x, 0.5) - s
    d = np.array([-1.0, 1.0]) / np.sqrt(2)
    assert np.allclose(delta, 0.05 * np.linalg.norm(s, axis=1)[:, None] * d[None, :], atol=1e-15)


def test_zero_bias_is_identity():
    m = toy_mixture()
    x = np.array([[0.3, -0.1]])
    assert np.array_equal(BiasedScore.toward(m, (1, 0), 0.0).score(x, 1.0), m.score(x, 1.0))


def test_bias_validation():
    with pytest.raises(InvalidInputError):
        BiasedScore(toy_mixture(), np.array([1.0, 1.0]))
    with pytest.raises(InvalidInputError):
        biased_score(BiasedScore.toward(toy_mixture(), (1, 1)), [])


def test_query_api_agrees_with_batch_api():
    m = toy_mixture()
    q = ScoreQuery(np.array([0.2, 0.7]), 1.5)
    assert gmm_log_density(m, q) == m.log_density(q.position, 1.5)[0]
    assert np.array_equal(gmm_score(m, q), m.score(q.position, 1.5)[0])
    b = BiasedScore.toward(m, (-1, 1))
    out = biased_score(b, [q, ScoreQuery(np.array([1.0, 1.0]), 0.5)])
    assert np.array_equal(out[1], b.score(np.array([1.0, 1.0]), 0.5)[0])


def test_sample_moments_and_determinism():
    m = toy_mixture()
    x = gmm_sample(m, 200_000, derive_stream(5, 0))
    assert np.allclose(x.mean(axis=0), 0.2 * -5 + 0.8 * 5, atol=0.05)
    assert np.array_equal(x[:10], gmm_sample(m, 200_000, derive_stream(5, 0))[:10])
    frac_low = np.mean(x[:, 0] < 0)
    assert frac_low == pytest.approx(0.2, abs=0.005)


def test_smoothed_is_equivalent():
    m = toy_mixture()
    x = np.array([[1.0, -1.0]])
    assert np.allclose(m.smoothed(3.0).score(x), m.score(x, 3.0), atol=1e-15)
