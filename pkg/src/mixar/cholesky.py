"""Square-root-free Cholesky covariance parameterization.

A joint (response, lags) Gaussian covariance is stored as Sigma = B^-1 D B^-T
with B unit upper-triangular and D = diag(sigma2, delta_1, ..., delta_L).
The top row of B carries the response regression coefficients, the remaining
rows the lag-block coefficients. This form gives direct access to the
conditional of the response given the lags and to a sequential (back-to-front)
decomposition of the joint density into univariate Gaussian factors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_2PI = np.log(2.0 * np.pi)

# Weight-kernel covariances below this determinant are treated as singular.
DET_FLOOR = 1e-12


class SingularCovarianceError(ValueError):
    """Raised when a covariance fails the determinant floor or positivity check."""


@dataclass
class CholFactor:
    """Factor (B, D) of an (L+1)-dimensional covariance.

    beta_rows[0] holds the L response coefficients (top row of B);
    beta_rows[r] for r = 1..L-1 holds the L-r coefficients of lag row r.
    deltas are the lag-block conditional variances, sigma2 the response one.
    """

    beta_rows: list[np.ndarray]
    deltas: np.ndarray
    sigma2: float

    def __post_init__(self):
        self.beta_rows = [np.atleast_1d(np.asarray(r, dtype=float)) for r in self.beta_rows]
        self.deltas = np.atleast_1d(np.asarray(self.deltas, dtype=float))
        self.sigma2 = float(self.sigma2)
        L = self.deltas.size
        if len(self.beta_rows) < 1 or self.beta_rows[0].size != L:
            raise ValueError("top row must hold L response coefficients")
        for r, row in enumerate(self.beta_rows[1:], start=1):
            if row.size != L - r:
                raise ValueError(f"lag row {r} must hold {L - r} coefficients")
        if self.sigma2 <= 0.0:
            raise SingularCovarianceError("sigma2 must be positive")
        if np.any(self.deltas <= 0.0):
            raise SingularCovarianceError("all deltas must be positive")

    @property
    def n_lags(self) -> int:
        return self.deltas.size

    @property
    def dimension(self) -> int:
        return self.deltas.size + 1

    def b_matrix(self) -> np.ndarray:
        """Assemble the unit upper-triangular B."""
        p = self.dimension
        B = np.eye(p)
        B[0, 1:] = self.beta_rows[0]
        for r, row in enumerate(self.beta_rows[1:], start=1):
            B[r, r + 1:] = row
        return B

    def diag_matrix(self) -> np.ndarray:
        return np.diag(np.concatenate(([self.sigma2], self.deltas)))


@dataclass
class GaussianParams:
    """Mean and dense covariance of a joint (response, lags) Gaussian."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.covariance = np.asarray(self.covariance, dtype=float)
        if self.covariance.shape != (self.mean.size, self.mean.size):
            raise ValueError("covariance shape does not match mean")
        if not np.allclose(self.covariance, self.covariance.T, atol=1e-12):
            raise ValueError("covariance must be symmetric")


def _unit_upper_inverse(B: np.ndarray) -> np.ndarray:
    """Invert a unit upper-triangular matrix by back-substitution."""
    p = B.shape[0]
    inv = np.eye(p)
    # Solve B X = I column by column, bottom row upward.
    for i in range(p - 2, -1, -1):
        inv[i, :] -= B[i, i + 1:] @ inv[i + 1:, :]
    return inv


def build_covariance(factor: CholFactor) -> np.ndarray:
    """Assemble the dense covariance Sigma = B^-1 D B^-T from a factor."""
    if np.any(factor.deltas < DET_FLOOR) or factor.sigma2 < DET_FLOOR:
        raise SingularCovarianceError("conditional variance below positivity floor")
    Binv = _unit_upper_inverse(factor.b_matrix())
    d = np.concatenate(([factor.sigma2], factor.deltas))
    return (Binv * d) @ Binv.T


def marginal_lag_covariance(factor: CholFactor) -> np.ndarray:
    """Lag-block marginal covariance: drop the top row and first column of B."""
    if np.any(factor.deltas < DET_FLOOR):
        raise SingularCovarianceError("delta below positivity floor")
    L = factor.n_lags
    Bx = np.eye(L)
    for r, row in enumerate(factor.beta_rows[1:], start=1):
        Bx[r - 1, r:] = row
    Binv = _unit_upper_inverse(Bx)
    return (Binv * factor.deltas) @ Binv.T


def factor_covariance(sigma: np.ndarray) -> CholFactor:
    """Recover the (B, D) factor of a dense SPD covariance.

    Row i of B holds the negated coefficients of the regression of coordinate
    i on coordinates i+1..L, and the diagonal entry of D its residual
    variance, so the factor reproduces the sequential decomposition exactly.
    """
    sigma = np.asarray(sigma, dtype=float)
    p = sigma.shape[0]
    rows = []
    resid = np.empty(p)
    for i in range(p):
        tail = sigma[i + 1:, i + 1:]
        cross = sigma[i, i + 1:]
        if tail.size:
            coef = np.linalg.solve(tail, cross)
            rows.append(-coef)
            resid[i] = sigma[i, i] - cross @ coef
        else:
            rows.append(np.empty(0))
            resid[i] = sigma[i, i]
        if resid[i] <= 0.0:
            raise SingularCovarianceError("matrix is not positive definite")
    return CholFactor(beta_rows=rows[:-1], deltas=resid[1:], sigma2=resid[0])


def conditional_gaussian(params: GaussianParams, x: np.ndarray) -> tuple[float, float]:
    """Conditional mean and variance of the response given the lag vector x."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    cov = params.covariance
    lag_cov = cov[1:, 1:]
    cross = cov[0, 1:]
    sign, logdet = np.linalg.slogdet(lag_cov)
    if sign <= 0 or np.exp(logdet) < DET_FLOOR:
        raise SingularCovarianceError("lag block fails the determinant floor")
    w = np.linalg.solve(lag_cov, cross)
    mean = params.mean[0] + w @ (x - params.mean[1:])
    var = cov[0, 0] - cross @ w
    if var <= 0.0:
        raise SingularCovarianceError("nonpositive conditional variance")
    return float(mean), float(var)


def sequential_log_density(factor: CholFactor, means: np.ndarray, point: np.ndarray) -> float:
    """Joint Gaussian log-density as a product of univariate conditionals.

    Evaluates back to front: the most distant lag is marginal, each earlier
    lag conditions on the later ones, and the response conditions on all lags.
    Identical (to rounding) to the dense evaluation under build_covariance.
    """
    means = np.atleast_1d(np.asarray(means, dtype=float))
    point = np.atleast_1d(np.asarray(point, dtype=float))
    L = factor.n_lags
    if means.size != L + 1 or point.size != L + 1:
        raise ValueError("means and point must have length L+1")
    z = point - means  # z[0] response, z[1:] lags
    total = 0.0
    # Lag rows, most distant first.
    for ell in range(L, 0, -1):
        d = factor.deltas[ell - 1]
        if ell < L:
            resid = z[ell] + factor.beta_rows[ell] @ z[ell + 1:]
        else:
            resid = z[ell]
        total += -0.5 * (LOG_2PI + np.log(d) + resid * resid / d)
    resid = z[0] + factor.beta_rows[0] @ z[1:]
    total += -0.5 * (LOG_2PI + np.log(factor.sigma2) + resid * resid / factor.sigma2)
    return float(total)


def gaussian_logpdf(params: GaussianParams, point: np.ndarray) -> float:
    """Dense multivariate Gaussian log-density with a determinant floor."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    cov = params.covariance
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0 or np.exp(logdet) < DET_FLOOR:
        raise SingularCovarianceError("covariance fails the determinant floor")
    z = point - params.mean
    maha = z @ np.linalg.solve(cov, z)
    return float(-0.5 * (params.mean.size * LOG_2PI + logdet + maha))
