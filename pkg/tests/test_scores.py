import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.stats import multivariate_normal

from momnet.errors import ConfigurationError
from momnet.scores import (
    Gaussian,
    GaussianMixture,
    StandardNormal,
    finite_difference_score,
    score_model_from_dict,
    validate_score,
)


def _spd(rng, d):
    q = rng.standard_normal((d, d))
    return q @ q.T + d * np.eye(d)


def _mixture(rng, d=3):
    return GaussianMixture(
        [0.3, 0.7],
        [(rng.standard_normal(d), _spd(rng, d)), (rng.standard_normal(d) + 2, _spd(rng, d))],
    )


def test_standard_normal_score():
    assert np.array_equal(StandardNormal(2).score(np.array([1.0, -2.0])), [-1.0, 2.0])


def test_gaussian_score_matches_solve(rng):
    cov = _spd(rng, 4)
    mean = rng.standard_normal(4)
    x = rng.standard_normal((5, 4))
    expected = -np.linalg.solve(cov, (x - mean).T).T
    np.testing.assert_allclose(Gaussian(mean, cov).score(x), expected, rtol=1e-10)


def test_gaussian_log_density_matches_scipy(rng):
    cov, mean = _spd(rng, 3), rng.standard_normal(3)
    x = rng.standard_normal((7, 3))
    np.testing.assert_allclose(Gaussian(mean, cov).log_density(x), multivariate_normal(mean, cov).logpdf(x))


def test_mixture_density_integrates_to_one():
    model = GaussianMixture([0.25, 0.75], [([-1.0], [[0.5]]), ([2.0], [[2.0]])])
    total, _ = quad(lambda t: np.exp(model.log_density(np.array([t]))), -np.inf, np.inf)
    assert abs(total - 1.0) < 1e-8


def test_mixture_score_is_responsibility_weighted(rng):
    model = _mixture(rng)
    x = rng.standard_normal((6, 3))
    r = model.responsibilities(x)
    np.testing.assert_allclose(r.sum(axis=1), 1.0)
    expected = sum(r[:, [c]] * comp.score(x) for c, comp in enumerate(model.components))
    np.testing.assert_allclose(model.score(x), expected)


def test_mixture_far_from_one_component(rng):
    a = Gaussian([0.0], [[1.0]])
    model = GaussianMixture([0.5, 0.5], [a, Gaussian([40.0], [[1.0]])])
    np.testing.assert_allclose(model.score(np.array([-3.0])), a.score(np.array([-3.0])))


@pytest.mark.parametrize("make", [lambda r: StandardNormal(3), lambda r: Gaussian(r.standard_normal(3), _spd(r, 3)), _mixture])
def test_score_matches_finite_differences(make, rng):
    model = make(rng)
    points = model.sample(50, rng)
    assert validate_score(model, points) < 1e-4


@pytest.mark.parametrize("make", [lambda r: StandardNormal(3), lambda r: Gaussian(r.standard_normal(3), _spd(r, 3)), _mixture])
def test_mean_score_is_zero(make, rng):
    model = make(rng)
    n = 200_000
    s = model.score(model.sample(n, rng))
    assert np.all(np.abs(s.mean(axis=0)) < 5 * s.std(axis=0) / np.sqrt(n))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-5, 5), st.floats(-5, 5))
def test_translation_equivariance(seed, a, b):
    r = np.random.default_rng(seed)
    cov = _spd(r, 2)
    shift = np.array([a, b])
    x = r.standard_normal((4, 2))
    base = Gaussian(np.zeros(2), cov)
    moved = Gaussian(shift, cov)
    np.testing.assert_allclose(moved.score(x + shift), base.score(x), atol=1e-10)


def test_finite_difference_helper_on_quadratic():
    fd = finite_difference_score(StandardNormal(2), np.array([[0.5, -1.5]]), 1e-5)
    np.testing.assert_allclose(fd, [[-0.5, 1.5]], atol=1e-8)


@pytest.mark.parametrize(
    "cov",
    [np.array([[1.0, 2.0], [2.0, 1.0]]), np.array([[1.0, 0.5], [0.0, 1.0]]), np.eye(3)],
)
def test_gaussian_rejects_bad_covariance(cov):
    with pytest.raises(ConfigurationError):
        Gaussian(np.zeros(2), cov)


def test_mixture_validation():
    with pytest.raises(ConfigurationError):
        GaussianMixture([0.5, 0.6], [([0.0], [[1.0]]), ([1.0], [[1.0]])])
    with pytest.raises(ConfigurationError):
        GaussianMixture([0.5, 0.5], [([0.0], [[1.0]]), ([1.0, 0.0], np.eye(2))])


def test_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        StandardNormal(3).score(np.zeros(2))
    with pytest.raises(ConfigurationError):
        validate_score(StandardNormal(2), np.zeros((1, 2)), step=0.0)


def test_round_trip(rng):
    for model in (StandardNormal(3), Gaussian(rng.standard_normal(3), _spd(rng, 3)), _mixture(rng)):
        again = score_model_from_dict(model.to_dict())
        x = rng.standard_normal((3, 3))
        np.testing.assert_array_equal(again.score(x), model.score(x))
    with pytest.raises(ConfigurationError):
        score_model_from_dict({"kind": "laplace"})


def test_mixture_labels_follow_weights():
    model = GaussianMixture([0.2, 0.8], [([0.0], [[1.0]]), ([5.0], [[1.0]])])
    _, labels = model.sample_with_labels(50_000, np.random.default_rng(3))
    assert abs(labels.mean() - 0.8) < 0.01
