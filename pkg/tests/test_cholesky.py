import numpy as np
import pytest
from scipy.stats import multivariate_normal

from mixar.cholesky import (
    CholFactor,
    GaussianParams,
    SingularCovarianceError,
    build_covariance,
    conditional_gaussian,
    factor_covariance,
    gaussian_logpdf,
    marginal_lag_covariance,
    sequential_log_density,
)


def random_factor(rng, L):
    rows = [rng.uniform(-3, 3, size=L)]
    rows += [rng.uniform(-3, 3, size=L - r) for r in range(1, L)]
    return CholFactor(
        beta_rows=rows,
        deltas=rng.uniform(0.1, 10.0, size=L),
        sigma2=float(rng.uniform(0.1, 10.0)),
    )


def test_build_identity_factor_gives_diagonal():
    f = CholFactor(beta_rows=[np.zeros(2), np.zeros(1)], deltas=[2.0, 3.0], sigma2=1.5)
    np.testing.assert_allclose(build_covariance(f), np.diag([1.5, 2.0, 3.0]))


def test_build_single_lag_hand_example():
    f = CholFactor(beta_rows=[np.array([0.5])], deltas=[1.0], sigma2=1.0)
    np.testing.assert_allclose(
        build_covariance(f), np.array([[1.25, -0.5], [-0.5, 1.0]]), atol=1e-14
    )


def test_round_trip_reproduces_inputs():
    rng = np.random.default_rng(7)
    for _ in range(50):
        L = int(rng.integers(1, 6))
        f = random_factor(rng, L)
        sigma = build_covariance(f)
        back = factor_covariance(sigma)
        assert abs(back.sigma2 - f.sigma2) < 1e-10
        np.testing.assert_allclose(back.deltas, f.deltas, atol=1e-10)
        for a, b in zip(back.beta_rows, f.beta_rows):
            np.testing.assert_allclose(a, b, atol=1e-10)


def test_build_output_is_spd():
    rng = np.random.default_rng(11)
    for _ in range(30):
        sigma = build_covariance(random_factor(rng, int(rng.integers(1, 6))))
        np.testing.assert_allclose(sigma, sigma.T, atol=1e-12)
        assert np.all(np.linalg.eigvalsh(sigma) > 0)


def test_build_rejects_floor_violation():
    with pytest.raises(SingularCovarianceError):
        CholFactor(beta_rows=[np.zeros(1)], deltas=[-1.0], sigma2=1.0)
    f = CholFactor(beta_rows=[np.zeros(1)], deltas=[1e-13], sigma2=1.0)
    with pytest.raises(SingularCovarianceError):
        build_covariance(f)


def test_marginal_diagonal_factor():
    f = CholFactor(beta_rows=[np.ones(3), np.zeros(2), np.zeros(1)],
                   deltas=[1.0, 2.0, 3.0], sigma2=0.5)
    np.testing.assert_allclose(marginal_lag_covariance(f), np.diag([1.0, 2.0, 3.0]))


def test_marginal_ignores_response_row():
    f = CholFactor(beta_rows=[np.array([0.5])], deltas=[1.0], sigma2=1.0)
    np.testing.assert_allclose(marginal_lag_covariance(f), [[1.0]])


def test_marginal_equals_lower_right_block():
    rng = np.random.default_rng(3)
    for _ in range(30):
        f = random_factor(rng, 3)
        full = build_covariance(f)
        np.testing.assert_allclose(marginal_lag_covariance(f), full[1:, 1:], atol=1e-12)


def test_conditional_diagonal_is_marginal():
    p = GaussianParams(mean=[1.0, 0.0, 0.0], covariance=np.diag([2.0, 1.0, 1.0]))
    mean, var = conditional_gaussian(p, [5.0, -3.0])
    assert mean == pytest.approx(1.0)
    assert var == pytest.approx(2.0)


def test_conditional_two_by_two_hand_case():
    p = GaussianParams(mean=[0.0, 0.0], covariance=[[2.0, 1.0], [1.0, 1.0]])
    mean, var = conditional_gaussian(p, [2.0])
    assert mean == pytest.approx(2.0)
    assert var == pytest.approx(1.0)


def test_conditional_matches_factor_form():
    # On a factor-built covariance the conditional mean is the signed
    # regression through the top row and the variance is the factor's sigma2.
    rng = np.random.default_rng(21)
    for _ in range(20):
        L = int(rng.integers(1, 6))
        f = random_factor(rng, L)
        mu = rng.normal(size=L + 1)
        x = rng.normal(size=L)
        p = GaussianParams(mean=mu, covariance=build_covariance(f))
        mean, var = conditional_gaussian(p, x)
        direct = mu[0] - f.beta_rows[0] @ (x - mu[1:])
        assert abs(mean - direct) < 1e-10
        assert abs(var - f.sigma2) < 1e-10


def test_conditional_variance_never_exceeds_marginal():
    rng = np.random.default_rng(5)
    for _ in range(20):
        f = random_factor(rng, 2)
        cov = build_covariance(f)
        p = GaussianParams(mean=np.zeros(3), covariance=cov)
        _, var = conditional_gaussian(p, rng.normal(size=2))
        assert 0 < var <= cov[0, 0] + 1e-12


def test_sequential_identity_factor_at_mean():
    for L in (1, 2, 4):
        rows = [np.zeros(L)] + [np.zeros(L - r) for r in range(1, L)]
        f = CholFactor(beta_rows=rows, deltas=np.ones(L), sigma2=1.0)
        got = sequential_log_density(f, np.zeros(L + 1), np.zeros(L + 1))
        assert got == pytest.approx(-(L + 1) / 2 * np.log(2 * np.pi))


def test_sequential_matches_dense_random_cases():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        L = int(rng.integers(1, 6))
        f = random_factor(rng, L)
        mu = rng.normal(size=L + 1)
        pt = rng.normal(size=L + 1) * 2
        dense = multivariate_normal.logpdf(pt, mean=mu, cov=build_covariance(f))
        assert abs(sequential_log_density(f, mu, pt) - dense) < 1e-8


def test_sequential_single_lag_example():
    f = CholFactor(beta_rows=[np.array([0.5])], deltas=[1.0], sigma2=1.0)
    dense = multivariate_normal.logpdf([0.0, 0.0], mean=[0.0, 0.0], cov=build_covariance(f))
    assert sequential_log_density(f, [0.0, 0.0], [0.0, 0.0]) == pytest.approx(dense)


def test_gaussian_logpdf_standard_cases():
    p1 = GaussianParams(mean=[0.0], covariance=[[1.0]])
    assert gaussian_logpdf(p1, [0.0]) == pytest.approx(-0.5 * np.log(2 * np.pi))
    p2 = GaussianParams(mean=[0.0, 0.0], covariance=np.eye(2))
    assert gaussian_logpdf(p2, [1.0, 0.0]) == pytest.approx(-np.log(2 * np.pi) - 0.5)


def test_gaussian_logpdf_agrees_with_sequential():
    rng = np.random.default_rng(9)
    for _ in range(20):
        A = rng.normal(size=(3, 3))
        cov = A @ A.T + 0.5 * np.eye(3)
        mu = rng.normal(size=3)
        pt = rng.normal(size=3)
        f = factor_covariance(cov)
        p = GaussianParams(mean=mu, covariance=cov)
        assert abs(gaussian_logpdf(p, pt) - sequential_log_density(f, mu, pt)) < 1e-8


def test_gaussian_logpdf_integrates_to_one():
    p = GaussianParams(mean=[0.3], covariance=[[0.7]])
    grid = np.linspace(-12, 12, 20001)
    vals = np.exp([gaussian_logpdf(p, [g]) for g in grid])
    assert np.trapezoid(vals, grid) == pytest.approx(1.0, abs=1e-6)


def test_gaussian_logpdf_rejects_singular():
    p = GaussianParams(mean=[0.0, 0.0], covariance=[[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(SingularCovarianceError):
        gaussian_logpdf(p, [0.0, 0.0])
