"""Lag-selection state and the pure operations behind it.

Binary indicators gate lags out of both the weight kernels and the kernel
means. Global mode shares one indicator vector across components; local mode
gives each component its own vector, with a spike-and-slab prior on the
shared inclusion probabilities. The Metropolis updates that consume these
pieces live with the Gibbs engine in :mod:`mixar.sampler`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .cholesky import LOG_2PI
from .model import ComponentParams

# Truncated-geometric flip-count distribution: success probability 0.5
# renormalized over {1, 2, 3} gives (4/7, 2/7, 1/7).
FLIP_GEOMETRIC_P = 0.5
MAX_FLIPS = 3


@dataclass
class LagSelectionState:
    """Selection mode plus the indicator and probability vectors it uses."""

    mode: str
    gamma_global: np.ndarray | None = None
    gamma_local: np.ndarray | None = None
    pi_gamma: np.ndarray | None = None
    pi_pi: np.ndarray | None = None
    a_pi: np.ndarray | None = None
    b_pi: np.ndarray | None = None
    xi: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in ("none", "global", "local"):
            raise ValueError("mode must be none, global, or local")
        if self.mode == "global" and self.gamma_global is None:
            raise ValueError("global mode requires gamma_global")
        if self.mode == "local" and (self.gamma_local is None or self.pi_gamma is None):
            raise ValueError("local mode requires gamma_local and pi_gamma")
        for name in ("gamma_global", "gamma_local", "xi"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=int))
        for name in ("pi_gamma", "pi_pi", "a_pi", "b_pi"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=float))

    @property
    def n_gamma(self) -> int:
        if self.mode == "global":
            return int(np.sum(self.gamma_global))
        if self.mode == "local":
            return int(np.sum(self.gamma_local))
        return 0


@dataclass
class MaskedKernel:
    """Component kernels restricted to the active lags of a mask."""

    active: np.ndarray
    mu_y: float
    sigma2: float
    beta_y: np.ndarray      # masked, full length
    mu_x: np.ndarray        # active entries only
    delta_x: np.ndarray     # active entries only
    beta_x: np.ndarray      # strictly upper (n_active, n_active)
    full_mu_x: np.ndarray

    @property
    def n_active(self) -> int:
        return self.active.size

    def weight_log_ordinate(self, x: np.ndarray) -> float:
        """Masked weight-kernel log ordinate at a full-length lag vector.

        With no active lags the kernel contributes the constant one.
        """
        if self.n_active == 0:
            return 0.0
        z = np.asarray(x, dtype=float)[self.active] - self.mu_x
        resid = z + self.beta_x @ z
        return float(
            -0.5 * np.sum(LOG_2PI + np.log(self.delta_x) + resid * resid / self.delta_x)
        )

    def kernel_mean(self, x: np.ndarray) -> float:
        z = np.asarray(x, dtype=float) - self.full_mu_x
        return float(self.mu_y - self.beta_y @ z)


def apply_mask(params: ComponentParams, gamma: np.ndarray) -> MaskedKernel:
    """Restrict a component's kernels to the active lags of ``gamma``.

    Subsets the factorization inputs: inactive rows and conditional variances
    are dropped and cross coefficients survive only when both endpoints are
    active, so the masked weight kernel has dimension ``n_gamma``.
    """
    gamma = np.asarray(gamma, dtype=int)
    L = params.n_lags
    if gamma.size != L:
        raise ValueError("mask length must equal the number of lags")
    active = np.flatnonzero(gamma)
    B = params.beta_x_matrix()[np.ix_(active, active)]
    return MaskedKernel(
        active=active,
        mu_y=params.mu_y,
        sigma2=params.sigma2,
        beta_y=params.beta_y * gamma,
        mu_x=params.mu_x[active],
        delta_x=params.delta_x[active],
        beta_x=B,
        full_mu_x=params.mu_x,
    )


def flip_count_probabilities(L: int) -> np.ndarray:
    """Probabilities of proposing k flips, k = 1..min(3, L)."""
    kmax = min(MAX_FLIPS, L)
    p = FLIP_GEOMETRIC_P ** np.arange(1, kmax + 1)
    return p / p.sum()


def propose_flip_subset(L: int, rng: np.random.Generator) -> np.ndarray:
    """Indices to flip: truncated-geometric count, then a uniform subset."""
    if L < 1:
        raise ValueError("L must be at least 1")
    probs = flip_count_probabilities(L)
    k = 1 + int(rng.choice(probs.size, p=probs))
    return rng.choice(L, size=k, replace=False)


def spike_probability(a_pi: float, b_pi: float, H: int, pi_pi: float) -> float:
    """Probability the slab stays active when no component uses the lag.

    Computed with log-gamma arithmetic to avoid overflow in the beta-ratio
    normalizer.
    """
    log_alpha = (
        gammaln(b_pi + H) + gammaln(a_pi + b_pi) - gammaln(b_pi) - gammaln(a_pi + b_pi + H)
    )
    alpha_pi = np.exp(log_alpha)
    return float(alpha_pi / (alpha_pi - 1.0 + 1.0 / pi_pi))


def update_pi_gamma(
    sel: LagSelectionState, H: int, rng: np.random.Generator
) -> None:
    """Spike-and-slab update of inclusion probabilities and slab indicators.

    Draws each slab probability from its beta conditional where the slab is
    active, pins it at zero where the spike holds, then refreshes the slab
    indicators: forced on when any component includes the lag, otherwise
    Bernoulli with the marginalized slab probability.
    """
    if sel.mode != "local":
        raise ValueError("pi_gamma updates apply to local selection only")
    L = sel.gamma_local.shape[1]
    counts = sel.gamma_local.sum(axis=0)
    pi = np.zeros(L)
    on = sel.xi == 1
    if np.any(on):
        pi[on] = rng.beta(sel.a_pi[on] + counts[on], sel.b_pi[on] + H - counts[on])
    sel.pi_gamma = pi
    xi = np.zeros(L, dtype=int)
    for ell in range(L):
        if counts[ell] > 0:
            xi[ell] = 1
        else:
            p = spike_probability(sel.a_pi[ell], sel.b_pi[ell], H, sel.pi_pi[ell])
            xi[ell] = int(rng.uniform() < p)
    sel.xi = xi
    sel.pi_gamma = sel.pi_gamma * (sel.xi == 1)


def global_dependence_summaries(chain) -> dict[str, np.ndarray]:
    """Posterior means of the four per-lag dependence summaries (local mode).

    obs_proportion: share of observations in components with the lag active.
    obs_proportion_slope: the same, also requiring a kernel slope above the
    chain's coefficient threshold. weight_share: stick weight on components
    with the lag active. pi_gamma: posterior mean inclusion probability.
    """
    if chain.gamma_local is None:
        raise ValueError("summaries require a local-selection chain")
    nd, H, L = chain.gamma_local.shape
    n = chain.alloc.shape[1]
    b0 = chain.coefficient_threshold
    obs_prop = np.zeros(L)
    obs_prop_slope = np.zeros(L)
    weight_share = np.zeros(L)
    for d in range(nd):
        counts = np.bincount(chain.alloc[d], minlength=H).astype(float)
        g = chain.gamma_local[d].astype(float)
        obs_prop += (g * counts[:, None]).sum(axis=0) / n
        slope = g * (np.abs(chain.beta_y[d]) > b0)
        obs_prop_slope += (slope * counts[:, None]).sum(axis=0) / n
        weight_share += chain.weights[d] @ g
    return {
        "obs_proportion": obs_prop / nd,
        "obs_proportion_slope": obs_prop_slope / nd,
        "weight_share": weight_share / nd,
        "pi_gamma": chain.pi_gamma.mean(axis=0),
    }
