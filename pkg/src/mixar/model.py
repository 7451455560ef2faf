"""Model state types, mixture weights, and transition functionals.

The transition density is a truncated stick-breaking mixture in which each
component carries a Gaussian weight kernel over the lag vector and a linear
Gaussian kernel for the response. Lag masks (all-ones, one global vector, or
one vector per component) gate lags out of both pieces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, ndtr, ndtri

from .cholesky import LOG_2PI


@dataclass
class SeriesData:
    """Observed series plus its lag embedding.

    The first ``max_lag`` observations condition the likelihood and never
    appear as responses. ``responses[i]`` is ``values[max_lag + i]`` and
    ``design[i, k]`` is ``values[max_lag + i - (k + 1)]`` (lag k+1).
    """

    values: np.ndarray
    max_lag: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        self.max_lag = int(self.max_lag)
        if self.max_lag < 1:
            raise ValueError("max_lag must be >= 1")
        if self.values.size <= self.max_lag:
            raise ValueError("series must be longer than max_lag")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("series contains non-finite values")

    @property
    def length(self) -> int:
        return self.values.size

    @property
    def n_likelihood(self) -> int:
        """Number of observations contributing to the likelihood."""
        return self.values.size - self.max_lag

    @property
    def responses(self) -> np.ndarray:
        return self.values[self.max_lag:]

    @property
    def design(self) -> np.ndarray:
        """Lag matrix, one row per response: (y_{t-1}, ..., y_{t-L})."""
        L = self.max_lag
        n = self.n_likelihood
        X = np.empty((n, L))
        for k in range(L):
            X[:, k] = self.values[L - 1 - k: L - 1 - k + n]
        return X

    def tail_lags(self) -> np.ndarray:
        """Most recent lag vector (y_T, y_{T-1}, ...), for forecasting."""
        return self.values[-1: -self.max_lag - 1: -1].copy()


@dataclass
class ComponentParams:
    """Parameter bundle for one mixture component.

    beta_x_rows holds the strictly upper-triangular lag-kernel coefficients
    (row r, entries for columns r+1..L); it is empty when the lag kernel is
    diagonal. local_gamma is populated only under local lag selection.
    """

    mu_y: float
    beta_y: np.ndarray
    sigma2: float
    mu_x: np.ndarray
    delta_x: np.ndarray
    beta_x_rows: list[np.ndarray] = field(default_factory=list)
    local_gamma: np.ndarray | None = None

    def __post_init__(self):
        self.beta_y = np.atleast_1d(np.asarray(self.beta_y, dtype=float))
        self.mu_x = np.atleast_1d(np.asarray(self.mu_x, dtype=float))
        self.delta_x = np.atleast_1d(np.asarray(self.delta_x, dtype=float))
        self.mu_y = float(self.mu_y)
        self.sigma2 = float(self.sigma2)
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if np.any(self.delta_x <= 0):
            raise ValueError("delta_x must be positive")
        L = self.mu_x.size
        if self.beta_y.size != L or self.delta_x.size != L:
            raise ValueError("inconsistent lag dimensions")
        if self.beta_x_rows:
            if len(self.beta_x_rows) != max(L - 1, 0):
                raise ValueError("beta_x_rows must have L-1 rows")
            self.beta_x_rows = [
                np.atleast_1d(np.asarray(r, dtype=float)) for r in self.beta_x_rows
            ]
            for r, row in enumerate(self.beta_x_rows, start=1):
                if row.size != L - r:
                    raise ValueError(f"beta_x row {r} must have {L - r} entries")
        if self.local_gamma is not None:
            self.local_gamma = np.asarray(self.local_gamma, dtype=int)
            if self.local_gamma.size != L:
                raise ValueError("local_gamma must have length L")

    @property
    def n_lags(self) -> int:
        return self.mu_x.size

    @property
    def diagonal(self) -> bool:
        return not self.beta_x_rows

    def beta_x_matrix(self) -> np.ndarray:
        """Strictly upper-triangular (L, L) lag coefficient matrix."""
        L = self.n_lags
        B = np.zeros((L, L))
        for r, row in enumerate(self.beta_x_rows, start=1):
            B[r - 1, r:] = row
        return B

    def intercept(self, gamma: np.ndarray | None = None) -> float:
        """Identified component intercept mu_y + sum gamma_l beta_l mu_l."""
        g = np.ones(self.n_lags) if gamma is None else np.asarray(gamma, dtype=float)
        return float(self.mu_y + np.sum(g * self.beta_y * self.mu_x))


@dataclass
class MixingState:
    """Stick-breaking variables, weights, allocations, and concentration."""

    sticks: np.ndarray
    weights: np.ndarray
    allocations: np.ndarray
    alpha: float

    def __post_init__(self):
        self.sticks = np.atleast_1d(np.asarray(self.sticks, dtype=float))
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        self.allocations = np.asarray(self.allocations, dtype=np.int64)
        self.alpha = float(self.alpha)
        if self.weights.size != self.sticks.size + 1:
            raise ValueError("weights must have one more entry than sticks")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @property
    def truncation(self) -> int:
        return self.weights.size

    def occupancy(self) -> np.ndarray:
        """Member counts per component."""
        return np.bincount(self.allocations, minlength=self.truncation)

    def n_occupied(self) -> int:
        return int(np.count_nonzero(self.occupancy()))


@dataclass
class ModelState:
    """Everything needed to evaluate transition functionals at one draw."""

    components: list[ComponentParams]
    weights: np.ndarray
    selection_mode: str = "none"
    gamma_global: np.ndarray | None = None

    def __post_init__(self):
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if self.selection_mode not in ("none", "global", "local"):
            raise ValueError("selection_mode must be none, global, or local")
        if self.selection_mode == "global":
            if self.gamma_global is None:
                raise ValueError("global selection requires gamma_global")
            self.gamma_global = np.asarray(self.gamma_global, dtype=int)
        if self.selection_mode == "local":
            if any(c.local_gamma is None for c in self.components):
                raise ValueError("local selection requires per-component masks")

    @property
    def truncation(self) -> int:
        return len(self.components)

    @property
    def n_lags(self) -> int:
        return self.components[0].n_lags

    def effective_mask(self) -> np.ndarray:
        """(H, L) float mask: all-ones, broadcast global, or per-component."""
        H, L = self.truncation, self.n_lags
        if self.selection_mode == "none":
            return np.ones((H, L))
        if self.selection_mode == "global":
            return np.tile(np.asarray(self.gamma_global, dtype=float), (H, 1))
        return np.array([c.local_gamma for c in self.components], dtype=float)

    def stacked(self) -> dict[str, np.ndarray | None]:
        """Component parameters as stacked arrays for vectorized evaluation."""
        H, L = self.truncation, self.n_lags
        mu_y = np.array([c.mu_y for c in self.components])
        beta_y = np.array([c.beta_y for c in self.components])
        sigma2 = np.array([c.sigma2 for c in self.components])
        mu_x = np.array([c.mu_x for c in self.components])
        delta_x = np.array([c.delta_x for c in self.components])
        if self.components[0].diagonal:
            beta_x = None
        else:
            beta_x = np.array([c.beta_x_matrix() for c in self.components])
        return {
            "mu_y": mu_y, "beta_y": beta_y, "sigma2": sigma2,
            "mu_x": mu_x, "delta_x": delta_x, "beta_x": beta_x,
            "gamma": self.effective_mask(),
        }


def stick_break(sticks: np.ndarray) -> np.ndarray:
    """Map stick-breaking fractions in (0,1)^(H-1) to H mixture weights."""
    v = np.atleast_1d(np.asarray(sticks, dtype=float))
    if np.any(v <= 0.0) or np.any(v >= 1.0):
        raise ValueError("stick fractions must lie strictly inside (0, 1)")
    one_minus = np.concatenate(([1.0], np.cumprod(1.0 - v)))
    w = np.empty(v.size + 1)
    w[:-1] = v * one_minus[:-1]
    w[-1] = one_minus[-1]
    return w


def truncation_error_expectation(alpha: float, H: int) -> float:
    """Prior mean of the last (truncation-remainder) weight."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if H < 2:
        raise ValueError("truncation must be at least 2")
    return float((alpha / (1.0 + alpha)) ** (H - 1))


def weight_kernel_logdensity(
    X: np.ndarray,
    mu_x: np.ndarray,
    delta_x: np.ndarray,
    beta_x: np.ndarray | None,
    gamma: np.ndarray,
) -> np.ndarray:
    """Masked lag-kernel log ordinates, shape (n, H).

    X is (n, L); mu_x, delta_x, gamma are (H, L); beta_x is a strictly
    upper-triangular (H, L, L) stack or None for diagonal kernels. Masked
    lags contribute nothing (their univariate factors are identically one).
    """
    Z = X[:, None, :] - mu_x[None, :, :]
    if beta_x is not None:
        masked = beta_x * (gamma[:, :, None] * gamma[:, None, :])
        E = Z + np.einsum("nhr,hlr->nhl", Z, masked)
    else:
        E = Z
    terms = LOG_2PI + np.log(delta_x)[None, :, :] + E * E / delta_x[None, :, :]
    return -0.5 * np.einsum("nhl,hl->nh", terms, gamma)


def kernel_mean_matrix(
    X: np.ndarray,
    mu_y: np.ndarray,
    beta_y: np.ndarray,
    mu_x: np.ndarray,
    gamma: np.ndarray,
) -> np.ndarray:
    """Masked component response means mu_h(x), shape (n, H)."""
    Z = X[:, None, :] - mu_x[None, :, :]
    return mu_y[None, :] - np.einsum("nhl,hl->nh", Z, beta_y * gamma)


def mixture_weights_q(
    x: np.ndarray,
    components: list[ComponentParams],
    weights: np.ndarray,
    gamma: np.ndarray | None = None,
) -> np.ndarray:
    """Lag-dependent mixture weights q_h(x).

    gamma is the effective lag mask: (L,) applied to every component,
    (H, L) per component, or None for no masking. An all-zero mask
    collapses q to the stick-breaking weights exactly.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    weights = np.asarray(weights, dtype=float)
    H, L = len(components), x.size
    if gamma is None:
        gmask = np.ones((H, L))
    else:
        gmask = np.asarray(gamma, dtype=float)
        if gmask.ndim == 1:
            gmask = np.tile(gmask, (H, 1))
    if not gmask.any():
        return weights.copy()
    state = ModelState(components=components, weights=weights)
    st = state.stacked()
    W = weight_kernel_logdensity(x[None, :], st["mu_x"], st["delta_x"], st["beta_x"], gmask)[0]
    logq = np.log(weights) + W
    norm = logsumexp(logq)
    if not np.isfinite(norm):
        raise FloatingPointError("all mixture log-weights underflowed")
    return np.exp(logq - norm)


def _evaluation_arrays(state: ModelState, x: np.ndarray):
    """(q, component means, component sds) at a single lag vector."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    st = state.stacked()
    gmask = st["gamma"]
    if not gmask.any():
        q = state.weights.copy()
        means = st["mu_y"].copy()
    else:
        W = weight_kernel_logdensity(
            x[None, :], st["mu_x"], st["delta_x"], st["beta_x"], gmask
        )[0]
        logq = np.log(state.weights) + W
        norm = logsumexp(logq)
        if not np.isfinite(norm):
            raise FloatingPointError("all mixture log-weights underflowed")
        q = np.exp(logq - norm)
        means = kernel_mean_matrix(
            x[None, :], st["mu_y"], st["beta_y"], st["mu_x"], gmask
        )[0]
    return q, means, np.sqrt(st["sigma2"])


def transition_log_density(y: float, x: np.ndarray, state: ModelState) -> float:
    """Log transition density log f(y | x) under the given draw."""
    q, means, sds = _evaluation_arrays(state, x)
    z = (y - means) / sds
    logs = np.log(q) - 0.5 * (LOG_2PI + z * z) - np.log(sds)
    return float(logsumexp(logs))


def transition_density(y: float, x: np.ndarray, state: ModelState) -> float:
    """Transition density ordinate f(y | x)."""
    return float(np.exp(transition_log_density(y, x, state)))


def transition_mean(x: np.ndarray, state: ModelState) -> float:
    """Conditional expectation of the next value given the lag vector."""
    q, means, _ = _evaluation_arrays(state, x)
    return float(q @ means)


def transition_cdf(y: float, x: np.ndarray, state: ModelState) -> float:
    """Mixture CDF of the next value given the lag vector."""
    q, means, sds = _evaluation_arrays(state, x)
    return float(q @ ndtr((y - means) / sds))


def transition_quantile(u: float, x: np.ndarray, state: ModelState) -> float:
    """u-quantile of the transition density by bracketed bisection.

    The mixture CDF is strictly increasing, so bisection on the fixed
    bracket cannot fail for interior u; a Newton polish sharpens the root.
    """
    if not 0.0 < u < 1.0:
        raise ValueError("u must lie in (0, 1)")
    q, means, sds = _evaluation_arrays(state, x)
    if len(q) == 1:
        return float(means[0] + sds[0] * ndtri(u))
    span = 10.0 * np.max(sds)
    lo, hi = float(np.min(means) - span), float(np.max(means) + span)

    def cdf(y):
        return float(q @ ndtr((y - means) / sds))

    def pdf(y):
        z = (y - means) / sds
        return float(q @ (np.exp(-0.5 * z * z) / (np.sqrt(2.0 * np.pi) * sds)))

    flo, fhi = cdf(lo) - u, cdf(hi) - u
    if flo > 0.0 or fhi < 0.0:
        raise RuntimeError("quantile bracket failed; model state is corrupt")
    while hi - lo > 1e-10 * max(1.0, abs(lo), abs(hi)):
        mid = 0.5 * (lo + hi)
        if cdf(mid) - u <= 0.0:
            lo = mid
        else:
            hi = mid
    y = 0.5 * (lo + hi)
    for _ in range(4):  # Newton polish
        d = pdf(y)
        if d <= 0.0:
            break
        step = (cdf(y) - u) / d
        y_new = y - step
        if not lo - 1e-9 <= y_new <= hi + 1e-9:
            break
        y = y_new
        if abs(step) < 1e-14 * max(1.0, abs(y)):
            break
    return float(y)


def log_likelihood(series: SeriesData, state: ModelState) -> float:
    """Markovian log-likelihood, conditional on the first L observations."""
    if series.max_lag != state.n_lags:
        raise ValueError("series lag order does not match state")
    X = series.design
    y = series.responses
    st = state.stacked()
    gmask = st["gamma"]
    logw = np.log(state.weights)
    if not gmask.any():
        logq = np.tile(logw, (X.shape[0], 1))
        means = np.tile(st["mu_y"], (X.shape[0], 1))
    else:
        W = weight_kernel_logdensity(X, st["mu_x"], st["delta_x"], st["beta_x"], gmask)
        logq = logw[None, :] + W
        logq -= logsumexp(logq, axis=1, keepdims=True)
        means = kernel_mean_matrix(X, st["mu_y"], st["beta_y"], st["mu_x"], gmask)
    sig2 = st["sigma2"][None, :]
    resid = y[:, None] - means
    logn = -0.5 * (LOG_2PI + np.log(sig2) + resid * resid / sig2)
    per_t = logsumexp(logq + logn, axis=1)
    bad = ~np.isfinite(per_t)
    if np.any(bad):
        t = int(np.argmax(bad))
        raise FloatingPointError(
            f"non-finite transition density at likelihood index {t}"
        )
    return float(np.sum(per_t))
