"""Blocked Gibbs sampler for the truncated mixture autoregression.

One sweep updates, in order: allocations (Metropolized Gibbs), stick
fractions (multivariate hyperrectangle slice sampler), component lag-kernel
parameters (random-walk Metropolis on the collapsed conditional with the
response block integrated out), lag-selection indicators (block Metropolis
on the same collapsed form), exact conditional draws of the response block,
base-measure hyperparameters (conjugate), and the concentration parameter.

Chains begin with iterated proposal tuning (optionally full covariance
adaptation); proposals are frozen before any retained draw.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.linalg import get_lapack_funcs
from scipy.special import gammaln
from scipy.stats import invwishart

# raw LAPACK handles: the tiny response-block systems are solved thousands
# of times per sweep, where wrapper overhead dominates
_POTRF, _POTRS, _TRTRS = get_lapack_funcs(
    ("potrf", "potrs", "trtrs"), (np.empty((2, 2)),)
)

from .cholesky import LOG_2PI
from .lagselect import LagSelectionState, propose_flip_subset, update_pi_gamma
from .model import ComponentParams, ModelState, SeriesData, stick_break
from .priors import BaseMeasureState, default_hyperparams, pi_gamma_defaults, \
    sample_component_from_g0

DELTA_FLOOR = 1e-12
SLICE_MAX_SHRINK = 10_000


@dataclass
class SamplerConfig:
    """Sampler settings: truncation, run lengths, tuning, and selection."""

    H: int = 40
    iters: int = 5000
    burnin: int = 5000
    thin: int = 1
    seed: int = 0
    tau_slice: float | np.ndarray = 1.0
    accept_low: float = 0.02
    accept_high: float = 0.20
    adapt: bool = False
    max_adapt_attempts: int = 10
    tune_rounds: int = 3
    tune_sweeps: int = 2000
    adapt_cov_sweeps: int = 2000
    gamma_freeze_rounds: int = 1
    diagonal_sigma_x: bool = True
    selection_mode: str = "none"
    gamma_init: str = "allOn"
    gamma_init_values: list[int] | None = None

    def __post_init__(self):
        if self.H < 2:
            raise ValueError("truncation level H must be at least 2")
        if self.burnin + self.iters <= 0:
            raise ValueError("burnin + iters must be positive")
        if not (0.0 < self.accept_low < self.accept_high < 1.0):
            raise ValueError("acceptance window must sit inside (0, 1)")
        if self.selection_mode not in ("none", "global", "local"):
            raise ValueError("selection_mode must be none, global, or local")
        if self.gamma_init not in ("allOn", "allOff", "custom"):
            raise ValueError("gamma_init must be allOn, allOff, or custom")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")

    def tau_vector(self) -> np.ndarray:
        tau = np.asarray(self.tau_slice, dtype=float)
        if tau.ndim == 0:
            tau = np.full(self.H - 1, float(tau))
        if tau.size != self.H - 1 or np.any(tau <= 0):
            raise ValueError("tau_slice must be positive with length H-1")
        return tau


@dataclass
class AdaptState:
    """Proposal factors for the lag-kernel block and the tuning phase."""

    phase: str
    prop_chol: list[np.ndarray]
    accept: np.ndarray
    attempts: np.ndarray
    rounds_done: int = 0

    def rates(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.where(self.attempts > 0, self.accept / self.attempts, np.nan)

    def reset_counts(self):
        self.accept[:] = 0
        self.attempts[:] = 0


@dataclass
class Chain:
    """Retained draws plus monitoring traces and run metadata."""

    L: int
    H: int
    n: int
    selection_mode: str
    diagonal: bool
    mu_y: np.ndarray
    beta_y: np.ndarray
    sigma2: np.ndarray
    mu_x: np.ndarray
    delta_x: np.ndarray
    beta_x: np.ndarray | None
    sticks: np.ndarray
    weights: np.ndarray
    alloc: np.ndarray
    alpha: np.ndarray
    loglik: np.ndarray
    n_occupied: np.ndarray
    omega_last: np.ndarray
    gamma: np.ndarray | None = None
    gamma_local: np.ndarray | None = None
    pi_gamma: np.ndarray | None = None
    xi: np.ndarray | None = None
    accept: dict = field(default_factory=dict)
    gamma_switches: np.ndarray | None = None
    phase_timings: dict = field(default_factory=dict)
    coefficient_threshold: float = 0.0
    seed: int = 0

    @property
    def n_draws(self) -> int:
        return self.alpha.size

    def state_at(self, d: int) -> ModelState:
        """Materialize functional-evaluation state for one retained draw."""
        comps = []
        for h in range(self.H):
            rows = []
            if self.beta_x is not None:
                B = self.beta_x[d, h]
                rows = [B[r - 1, r:].copy() for r in range(1, self.L)]
            comps.append(ComponentParams(
                mu_y=float(self.mu_y[d, h]),
                beta_y=self.beta_y[d, h].copy(),
                sigma2=float(self.sigma2[d, h]),
                mu_x=self.mu_x[d, h].copy(),
                delta_x=self.delta_x[d, h].copy(),
                beta_x_rows=rows,
                local_gamma=self.gamma_local[d, h].copy()
                if self.gamma_local is not None else None,
            ))
        gamma = self.gamma[d] if self.gamma is not None else None
        return ModelState(
            comps, self.weights[d].copy(),
            selection_mode=self.selection_mode, gamma_global=gamma,
        )


def init_allocations(series: SeriesData, H: int) -> np.ndarray:
    """Initial component labels by Ward-linkage clustering of embedded rows."""
    rows = np.column_stack([series.responses, series.design])
    n = rows.shape[0]
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    if np.allclose(rows, rows[0]):
        return np.zeros(n, dtype=np.int64)
    Z = linkage(rows, method="ward")
    labels = fcluster(Z, t=H, criterion="maxclust") - 1
    return labels.astype(np.int64)


def _theta_dim(L: int, diagonal: bool) -> int:
    return 2 * L + (0 if diagonal else L * (L - 1) // 2)


def _theta_groups(L: int, diagonal: bool) -> dict[str, np.ndarray]:
    d = _theta_dim(L, diagonal)
    groups = {"mu_x": np.arange(L)}
    if not diagonal:
        groups["beta_x"] = np.arange(L, d - L)
    groups["delta_x"] = np.arange(d - L, d)
    return groups


def _pack_theta(mu_x, beta_x, delta_x, diagonal):
    parts = [mu_x]
    if not diagonal:
        L = mu_x.size
        parts.append(np.concatenate([beta_x[r - 1, r:] for r in range(1, L)])
                     if L > 1 else np.empty(0))
    parts.append(np.log(delta_x))
    return np.concatenate(parts)


def _unpack_theta(theta, L, diagonal):
    mu_x = theta[:L]
    if diagonal:
        beta_x = None
        off = L
    else:
        beta_x = np.zeros((L, L))
        off = L
        for r in range(1, L):
            m = L - r
            beta_x[r - 1, r:] = theta[off:off + m]
            off += m
    delta_x = np.exp(theta[off:off + L])
    return mu_x, beta_x, delta_x


class GibbsSampler:
    """Mutable sampler state for a single chain.

    Holds stacked component arrays, the current weight-kernel log-ordinate
    matrix, and cached base-measure factorizations; update methods mutate in
    place. Not shared across threads.
    """

    def __init__(
        self,
        series: SeriesData,
        config: SamplerConfig,
        base: BaseMeasureState | None = None,
        pi_gamma: np.ndarray | None = None,
        pi_pi: np.ndarray | None = None,
    ):
        self.series = series
        self.config = config
        self.L = series.max_lag
        self.H = config.H
        self.X = series.design
        self.y = series.responses
        self.n = self.y.size
        self.diagonal = config.diagonal_sigma_x
        if base is None:
            base = default_hyperparams(series, self.L, diagonal=self.diagonal)
        if base.diagonal != self.diagonal:
            raise ValueError("base measure diagonal flag disagrees with config")
        self.base = base

        ss = np.random.SeedSequence(config.seed)
        keys = ("init", "alloc", "sticks", "comp", "gamma", "ydraw", "base", "alpha")
        children = ss.spawn(len(keys))
        self.rngs = {k: np.random.default_rng(c) for k, c in zip(keys, children)}

        self.sel = self._init_selection(pi_gamma, pi_pi)
        self._init_state()
        self.adapt_state = self._init_proposals()
        self.accept_stats = {
            "alloc": [0.0, 0], "eta_x": [0.0, 0], "gamma": [0.0, 0],
        }
        self.gamma_switch_counts = np.zeros(self.L, dtype=np.int64)

    # ------------------------------------------------------------------
    # initialization
    # ------------------------------------------------------------------
    def _init_selection(self, pi_gamma, pi_pi) -> LagSelectionState:
        mode = self.config.selection_mode
        L = self.L
        if mode == "none":
            return LagSelectionState(mode="none")
        if self.config.gamma_init == "allOn":
            g0 = np.ones(L, dtype=int)
        elif self.config.gamma_init == "allOff":
            g0 = np.zeros(L, dtype=int)
        else:
            if self.config.gamma_init_values is None:
                raise ValueError("custom gamma_init needs gamma_init_values")
            g0 = np.asarray(self.config.gamma_init_values, dtype=int)
        pig = pi_gamma_defaults(L) if pi_gamma is None else np.asarray(pi_gamma, float)
        if mode == "global":
            return LagSelectionState(mode="global", gamma_global=g0, pi_gamma=pig)
        pipi = pig.copy() if pi_pi is None else np.asarray(pi_pi, float)
        return LagSelectionState(
            mode="local",
            gamma_local=np.tile(g0, (self.H, 1)),
            pi_gamma=pig,
            pi_pi=pipi,
            a_pi=np.full(L, 1.0),
            b_pi=np.full(L, 0.5),
            xi=np.ones(L, dtype=int),
        )

    def _init_state(self):
        rng = self.rngs["init"]
        H, L = self.H, self.L
        self.alpha = self.base.a_alpha / self.base.b_alpha
        v = rng.beta(1.0, self.alpha, size=H - 1)
        self.v = np.clip(v, 1e-6, 1.0 - 1e-6)
        self.w = stick_break(self.v)
        self.logw = np.log(self.w)
        self.s = init_allocations(self.series, H)

        self.mu_y = np.empty(H)
        self.beta_y = np.empty((H, L))
        self.sigma2 = np.empty(H)
        self.mu_x = np.empty((H, L))
        self.delta_x = np.empty((H, L))
        self.beta_x = None if self.diagonal else np.zeros((H, L, L))
        for h in range(H):
            comp = sample_component_from_g0(self.base, rng)
            self.mu_y[h] = comp.mu_y
            self.beta_y[h] = comp.beta_y
            self.sigma2[h] = comp.sigma2
            self.mu_x[h] = comp.mu_x
            self.delta_x[h] = comp.delta_x
            if not self.diagonal:
                self.beta_x[h] = comp.beta_x_matrix()
        self._refresh_base_cache()
        self.W = self._weight_matrix()
        self._denomsum = None
        self._coll_cache = [None] * self.H
        self._gram = [None] * self.H
        self._idx_list = None
        self._prior_scores = self._batch_prior_eta_x()

    def _init_proposals(self) -> AdaptState:
        d = _theta_dim(self.L, self.diagonal)
        spread = np.std(self.series.values)
        scales = np.empty(d)
        groups = _theta_groups(self.L, self.diagonal)
        scales[groups["mu_x"]] = 0.2 * max(spread, 1e-6)
        if "beta_x" in groups:
            scales[groups["beta_x"]] = 0.1
        scales[groups["delta_x"]] = 0.3
        chols = [np.diag(scales.copy()) for _ in range(self.H)]
        return AdaptState(
            phase="tuneDiag",
            prop_chol=chols,
            accept=np.zeros(self.H),
            attempts=np.zeros(self.H),
        )

    def _refresh_base_cache(self):
        base = self.base
        self._prec_b0 = base.prec_beta_star @ base.beta_star0
        self._b0_quad = float(base.beta_star0 @ self._prec_b0)
        chol_mu = np.linalg.cholesky(base.cov_mu_x)
        self._logdet_mu_x = 2.0 * np.sum(np.log(np.diag(chol_mu)))
        self._inv_chol_mu_x = np.linalg.inv(chol_mu)
        self._inv_chol_beta_x = []
        self._logdet_beta_x = []
        if not self.diagonal:
            for c in base.cov_beta_x0:
                ch = np.linalg.cholesky(c)
                self._inv_chol_beta_x.append(np.linalg.inv(ch))
                self._logdet_beta_x.append(2.0 * np.sum(np.log(np.diag(ch))))
        a = base.nu_delta_x / 2.0
        b = base.nu_delta_x * base.s0_x / 2.0
        self._ig_ap1 = a + 1.0
        self._ig_b = b
        self._ig_const = float(np.sum(a * np.log(b) - gammaln(a)))

    # ------------------------------------------------------------------
    # masks and kernel matrices
    # ------------------------------------------------------------------
    def mask_for(self, h: int) -> np.ndarray:
        if self.sel.mode == "none":
            return np.ones(self.L)
        if self.sel.mode == "global":
            return self.sel.gamma_global.astype(float)
        return self.sel.gamma_local[h].astype(float)

    def mask_matrix(self) -> np.ndarray:
        if self.sel.mode == "none":
            return np.ones((self.H, self.L))
        if self.sel.mode == "global":
            return np.tile(self.sel.gamma_global.astype(float), (self.H, 1))
        return self.sel.gamma_local.astype(float)

    def _weight_col(self, h: int, mu_x=None, delta_x=None, beta_x=None, g=None):
        """Weight-kernel log ordinates for one component at every data row."""
        mu_x = self.mu_x[h] if mu_x is None else mu_x
        delta_x = self.delta_x[h] if delta_x is None else delta_x
        if g is None:
            g = self.mask_for(h)
        Z = self.X - mu_x
        if not self.diagonal:
            B = self.beta_x[h] if beta_x is None else beta_x
            E = Z + Z @ (B * np.outer(g, g)).T
        else:
            E = Z
        terms = (LOG_2PI + np.log(delta_x)) + E * E / delta_x
        return -0.5 * (terms @ g)

    def _weight_matrix(self, gamma_matrix=None):
        """Full (n, H) weight-kernel log-ordinate matrix."""
        G = self.mask_matrix() if gamma_matrix is None else gamma_matrix
        if self.diagonal:
            gd = G / self.delta_x
            c = ((LOG_2PI + np.log(self.delta_x)) * G
                 + self.mu_x * self.mu_x * gd).sum(axis=1)
            quad = (self.X * self.X) @ gd.T - 2.0 * (self.X @ (self.mu_x * gd).T)
            return -0.5 * (quad + c[None, :])
        Z = self.X[:, None, :] - self.mu_x[None, :, :]
        masked = self.beta_x * (G[:, :, None] * G[:, None, :])
        E = Z + np.einsum("nhr,hlr->nhl", Z, masked)
        terms = (LOG_2PI + np.log(self.delta_x))[None] + E * E / self.delta_x[None]
        return -0.5 * np.einsum("nhl,hl->nh", terms, G)

    def _response_matrix(self):
        """(n, H) response-kernel log ordinates under current masks."""
        G = self.mask_matrix()
        Bg = self.beta_y * G
        const = self.mu_y + (Bg * self.mu_x).sum(axis=1)
        means = const[None, :] - self.X @ Bg.T
        resid = self.y[:, None] - means
        return -0.5 * (LOG_2PI + np.log(self.sigma2)[None, :]
                       + resid * resid / self.sigma2[None, :])

    def denom_sum(self, col=None, h=None) -> float:
        """Sum over t of the log mixture-weight denominator."""
        if self.n == 0:
            return 0.0
        M = self.W + self.logw[None, :]
        if col is not None:
            M[:, h] = col + self.logw[h]
        m = M.max(axis=1)
        M -= m[:, None]
        np.exp(M, out=M)
        return float(m.sum() + np.log(M.sum(axis=1)).sum())

    def current_denom_sum(self) -> float:
        if self._denomsum is None:
            self._denomsum = self.denom_sum()
        return self._denomsum

    # ------------------------------------------------------------------
    # collapsed response-block terms
    # ------------------------------------------------------------------
    def _alloc_index(self, h: int) -> np.ndarray:
        if self._idx_list is None:
            order = np.argsort(self.s, kind="stable")
            bounds = np.searchsorted(self.s[order], np.arange(self.H + 1))
            self._idx_list = [order[bounds[j]:bounds[j + 1]]
                              for j in range(self.H)]
        return self._idx_list[h]

    def _gram_for(self, h: int):
        """Unmasked design products for component h at its current center.

        Masking zeroes design columns, so any selection mask can be applied
        to these cached products without touching the data again.
        """
        cached = self._gram[h]
        if cached is not None:
            return cached
        idx = self._alloc_index(h)
        nh = idx.size
        D = np.empty((nh, self.L + 1))
        D[:, 0] = 1.0
        D[:, 1:] = self.mu_x[h] - self.X[idx]
        yh = self.y[idx]
        out = (D.T @ D, D.T @ yh, float(yh @ yh), nh)
        self._gram[h] = out
        return out

    def _collapsed_from_products(self, G, gy, yy, nh, g):
        m = np.empty(self.L + 1)
        m[0] = 1.0
        m[1:] = g
        Lam1 = G * np.outer(m, m) + self.base.prec_beta_star
        C, info = _POTRF(Lam1, lower=1, overwrite_a=1, clean=0)
        if info != 0:
            return None
        logdet = 2.0 * float(np.log(np.diagonal(C)).sum())
        rhs = self._prec_b0 + gy * m
        beta1, info = _POTRS(C, rhs, lower=1)
        if info != 0:
            return None
        b1 = 0.5 * (self.base.nu_sigma2 * self.base.s0 + yy
                    + self._b0_quad - beta1 @ rhs)
        b1 = max(b1, 1e-300)
        a1 = 0.5 * (self.base.nu_sigma2 + nh)
        return logdet, a1, b1, beta1, C

    def collapsed_terms(self, h: int, mu_x=None, g=None):
        """Posterior factors with the response block integrated out.

        Returns (logdet, a1, b1, beta1, chol_lower) for the design built
        from the rows allocated to component h, with masked columns zeroed.
        """
        cacheable = mu_x is None and g is None
        if cacheable and self._coll_cache[h] is not None:
            return self._coll_cache[h]
        if g is None:
            g = self.mask_for(h)
        if mu_x is None:
            G, gy, yy, nh = self._gram_for(h)
        else:
            idx = self._alloc_index(h)
            nh = idx.size
            D = np.empty((nh, self.L + 1))
            D[:, 0] = 1.0
            D[:, 1:] = (mu_x - self.X[idx]) * g
            yh = self.y[idx]
            G, gy, yy = D.T @ D, D.T @ yh, float(yh @ yh)
            g = np.ones(self.L)  # mask already applied to the design
        out = self._collapsed_from_products(G, gy, yy, nh, g)
        if out is None:
            raise FloatingPointError(
                f"collapsed system for component {h} is not positive definite"
            )
        if cacheable:
            self._coll_cache[h] = out
        return out

    def _collapsed_logscore(self, h, mu_x=None, g=None) -> float:
        """-0.5 logdet - a1 log b1 of the collapsed factors."""
        logdet, a1, b1, _, _ = self.collapsed_terms(h, mu_x=mu_x, g=g)
        return float(-0.5 * logdet - a1 * np.log(b1))

    def _batch_collapsed_scores(self, gamma_rows: np.ndarray) -> float:
        """Sum of collapsed log scores over all components, batched.

        gamma_rows is (H, L); the cached design products make this a pure
        mask-and-factor operation with no data passes.
        """
        H, p = self.H, self.L + 1
        Gs = np.empty((H, p, p))
        gys = np.empty((H, p))
        yys = np.empty(H)
        nhs = np.empty(H)
        for h in range(H):
            G, gy, yy, nh = self._gram_for(h)
            Gs[h], gys[h], yys[h], nhs[h] = G, gy, yy, nh
        m = np.empty((H, p))
        m[:, 0] = 1.0
        m[:, 1:] = gamma_rows
        Lam = Gs * (m[:, :, None] * m[:, None, :])
        Lam += self.base.prec_beta_star[None]
        C = np.linalg.cholesky(Lam)
        logdet = 2.0 * np.log(np.diagonal(C, axis1=1, axis2=2)).sum(axis=1)
        rhs = self._prec_b0[None, :] + gys * m
        beta1 = np.linalg.solve(Lam, rhs[:, :, None])[:, :, 0]
        b1 = 0.5 * (self.base.nu_sigma2 * self.base.s0 + yys
                    + self._b0_quad - np.einsum("hj,hj->h", beta1, rhs))
        b1 = np.maximum(b1, 1e-300)
        a1 = 0.5 * (self.base.nu_sigma2 + nhs)
        return float((-0.5 * logdet - a1 * np.log(b1)).sum())

    # ------------------------------------------------------------------
    # priors for the lag-kernel block
    # ------------------------------------------------------------------
    def _log_prior_eta_x(self, mu_x, beta_x, delta_x) -> float:
        z = self._inv_chol_mu_x @ (mu_x - self.base.mu0_x)
        lp = -0.5 * (self.L * LOG_2PI + self._logdet_mu_x + z @ z)
        if not self.diagonal:
            for r in range(1, self.L):
                d = beta_x[r - 1, r:] - self.base.beta_x0[r - 1]
                zr = self._inv_chol_beta_x[r - 1] @ d
                lp += -0.5 * ((self.L - r) * LOG_2PI
                              + self._logdet_beta_x[r - 1] + zr @ zr)
        log_d = np.log(delta_x)
        lp += self._ig_const - float(self._ig_ap1 @ log_d
                                     + self._ig_b @ (1.0 / delta_x))
        return lp

    def _batch_prior_eta_x(self) -> np.ndarray:
        """Current lag-kernel prior ordinates for all components at once."""
        Z = (self.mu_x - self.base.mu0_x) @ self._inv_chol_mu_x.T
        lp = -0.5 * (self.L * LOG_2PI + self._logdet_mu_x
                     + np.einsum("hl,hl->h", Z, Z))
        if not self.diagonal:
            for r in range(1, self.L):
                d = self.beta_x[:, r - 1, r:] - self.base.beta_x0[r - 1]
                Zr = d @ self._inv_chol_beta_x[r - 1].T
                lp += -0.5 * ((self.L - r) * LOG_2PI
                              + self._logdet_beta_x[r - 1]
                              + np.einsum("hl,hl->h", Zr, Zr))
        log_d = np.log(self.delta_x)
        lp += self._ig_const - (log_d @ self._ig_ap1
                                + (1.0 / self.delta_x) @ self._ig_b)
        return lp

    # ------------------------------------------------------------------
    # updates
    # ------------------------------------------------------------------
    def update_allocations(self):
        """Metropolized Gibbs refresh of every allocation."""
        if self.n == 0:
            return
        rng = self.rngs["alloc"]
        M = self.logw[None, :] + self.W + self._response_matrix()
        M -= M.max(axis=1, keepdims=True)
        P = np.exp(M)
        P /= P.sum(axis=1, keepdims=True)
        rows = np.arange(self.n)
        p_cur = P[rows, self.s]
        Pm = P.copy()
        Pm[rows, self.s] = 0.0
        cum = np.cumsum(Pm, axis=1)
        total = cum[:, -1]
        live = total > 1e-290
        u = rng.uniform(size=self.n) * total
        cand = np.minimum((cum < u[:, None]).sum(axis=1), self.H - 1)
        p_cand = P[rows, cand]
        ratio = (1.0 - p_cur) / np.maximum(1.0 - p_cand, 1e-300)
        acc = (rng.uniform(size=self.n) < ratio) & live
        new_s = np.where(acc, cand, self.s).astype(np.int64)
        if not np.array_equal(new_s, self.s):
            self._coll_cache = [None] * self.H
            self._gram = [None] * self.H
            self._idx_list = None
        self.s = new_s
        self.accept_stats["alloc"][0] += float(acc.mean())
        self.accept_stats["alloc"][1] += 1

    def update_sticks(self, tau: np.ndarray):
        """Joint hyperrectangle slice update of all stick fractions."""
        rng = self.rngs["sticks"]
        counts = np.bincount(self.s, minlength=self.H).astype(float)
        a_exp = counts[: self.H - 1]
        tail = counts[::-1].cumsum()[::-1]
        b_exp = self.alpha + tail[1:] - 1.0
        if self.n:
            m = self.W.max(axis=1)
            S = np.exp(self.W - m[:, None])
        else:
            S = None

        def logg(v):
            if np.any(v <= 0.0) or np.any(v >= 1.0):
                return -np.inf
            beta_part = float(np.sum(a_exp * np.log(v) + b_exp * np.log1p(-v)))
            if S is None:
                return beta_part
            one_minus = np.concatenate(([1.0], np.cumprod(1.0 - v)))
            w = np.empty(self.H)
            w[:-1] = v * one_minus[:-1]
            w[-1] = one_minus[-1]
            return beta_part - float(np.log(S @ w).sum())

        v0 = self.v
        level = logg(v0) - rng.exponential()
        lo = v0 - tau * rng.uniform(size=self.H - 1)
        hi = lo + tau
        for _ in range(SLICE_MAX_SHRINK):
            cand = lo + rng.uniform(size=self.H - 1) * (hi - lo)
            if logg(cand) > level:
                self.v = cand
                self.w = stick_break(cand)
                with np.errstate(divide="ignore"):
                    self.logw = np.log(self.w)
                self._denomsum = None
                return
            shrink_lo = cand < v0
            lo = np.where(shrink_lo, cand, lo)
            hi = np.where(shrink_lo, hi, cand)
        raise RuntimeError("slice sampler failed to accept; state is corrupt")

    def update_component_x(self, h: int):
        """Random-walk Metropolis step on component h's lag-kernel block."""
        rng = self.rngs["comp"]
        g = self.mask_for(h)
        ad = self.adapt_state
        ad.attempts[h] += 1
        self.accept_stats["eta_x"][1] += 1
        theta = _pack_theta(
            self.mu_x[h],
            None if self.diagonal else self.beta_x[h],
            self.delta_x[h], self.diagonal,
        )
        cand = theta + ad.prop_chol[h] @ rng.standard_normal(theta.size)
        mu_c, bx_c, dx_c = _unpack_theta(cand, self.L, self.diagonal)
        if (not np.all(np.isfinite(dx_c))) or np.any(dx_c < DELTA_FLOOR):
            return  # singular proposal: automatic rejection
        active = g > 0
        if np.any(active) and float(np.prod(dx_c[active])) < DELTA_FLOOR:
            return

        idx = self._alloc_index(h)
        col_cur = self.W[:, h]
        col_cand = self._weight_col(h, mu_x=mu_c, delta_x=dx_c, beta_x=bx_c, g=g)
        denom_cur = self.current_denom_sum()
        denom_cand = self.denom_sum(col=col_cand, h=h)

        prior_cand = self._log_prior_eta_x(mu_c, bx_c, dx_c)
        cur = (col_cur[idx].sum() - denom_cur
               + self._prior_scores[h]
               + self._collapsed_logscore(h)
               + np.log(self.delta_x[h]).sum())
        new = (col_cand[idx].sum() - denom_cand
               + prior_cand
               + self._collapsed_logscore(h, mu_x=mu_c)
               + np.log(dx_c).sum())
        if np.log(rng.uniform()) < new - cur:
            self.mu_x[h] = mu_c
            self.delta_x[h] = dx_c
            if not self.diagonal:
                self.beta_x[h] = bx_c
            self.W[:, h] = col_cand
            self._denomsum = denom_cand
            self._coll_cache[h] = None
            self._gram[h] = None
            self._prior_scores[h] = prior_cand
            ad.accept[h] += 1
            self.accept_stats["eta_x"][0] += 1

    def draw_eta_y(self, h: int):
        """Exact conditional draw of component h's response block."""
        rng = self.rngs["ydraw"]
        _, a1, b1, beta1, C = self.collapsed_terms(h)
        sigma2 = 1.0 / rng.gamma(a1, 1.0 / b1)
        z = rng.standard_normal(self.L + 1)
        u, info = _TRTRS(C, z, lower=1, trans=1)
        if info != 0:
            raise FloatingPointError("response-block draw hit a singular factor")
        beta_star = beta1 + np.sqrt(sigma2) * u
        self.mu_y[h] = beta_star[0]
        self.beta_y[h] = beta_star[1:]
        self.sigma2[h] = sigma2

    def _gamma_log_prior(self, gamma: np.ndarray) -> float:
        pi = self.sel.pi_gamma
        with np.errstate(divide="ignore"):
            terms = np.where(gamma > 0, np.log(pi), np.log1p(-pi))
        return float(terms.sum())

    def update_gamma_global(self):
        """Block Metropolis update of the shared selection indicators."""
        rng = self.rngs["gamma"]
        self.accept_stats["gamma"][1] += 1
        old = self.sel.gamma_global
        flip = propose_flip_subset(self.L, rng)
        cand = old.copy()
        cand[flip] = 1 - cand[flip]

        rows = np.arange(self.n)
        G_cand = np.tile(cand.astype(float), (self.H, 1))
        W_cand = self._weight_matrix(gamma_matrix=G_cand)
        denom_cur = self.current_denom_sum()
        M = W_cand + self.logw[None, :]
        m = M.max(axis=1)
        denom_cand = float(m.sum() + np.log(np.exp(M - m[:, None]).sum(axis=1)).sum())

        go = np.tile(old.astype(float), (self.H, 1))
        cur = (self.W[rows, self.s].sum() - denom_cur + self._gamma_log_prior(old)
               + self._batch_collapsed_scores(go))
        new = (W_cand[rows, self.s].sum() - denom_cand + self._gamma_log_prior(cand)
               + self._batch_collapsed_scores(G_cand))
        if np.log(rng.uniform()) < new - cur:
            self.gamma_switch_counts[flip] += 1
            self.sel.gamma_global = cand
            self.W = W_cand
            self._denomsum = denom_cand
            self._coll_cache = [None] * self.H
            self.accept_stats["gamma"][0] += 1

    def update_gamma_local(self, h: int):
        """Block Metropolis update of component h's selection indicators."""
        rng = self.rngs["gamma"]
        self.accept_stats["gamma"][1] += 1
        old = self.sel.gamma_local[h]
        flip = propose_flip_subset(self.L, rng)
        cand = old.copy()
        cand[flip] = 1 - cand[flip]
        lp_cand = self._gamma_log_prior(cand)
        if not np.isfinite(lp_cand):
            return  # proposal activates a spiked lag
        gc = cand.astype(float)
        col_cand = self._weight_col(h, g=gc)
        denom_cur = self.current_denom_sum()
        denom_cand = self.denom_sum(col=col_cand, h=h)
        idx = self._alloc_index(h)
        cur = (self.W[idx, h].sum() - denom_cur + self._gamma_log_prior(old)
               + self._collapsed_logscore(h))
        new = (col_cand[idx].sum() - denom_cand + lp_cand
               + self._collapsed_logscore(h, g=gc))
        if np.log(rng.uniform()) < new - cur:
            self.gamma_switch_counts[flip] += 1
            self.sel.gamma_local[h] = cand
            self.W[:, h] = col_cand
            self._denomsum = denom_cand
            self._coll_cache[h] = None
            self.accept_stats["gamma"][0] += 1

    def update_base_measure(self):
        """Conjugate refresh of the sampled centering-distribution pieces."""
        rng = self.rngs["base"]
        base = self.base
        H, L = self.H, self.L
        counts = np.bincount(self.s, minlength=H)
        occ = np.flatnonzero(counts > 0)
        n_occ = occ.size

        if not base.fix_y_indexed:
            beta_star = np.column_stack([self.mu_y, self.beta_y])
            inv_s2 = 1.0 / self.sigma2[occ]
            S0_inv = np.linalg.inv(base.S0_star)
            prec1 = inv_s2.sum() * base.prec_beta_star + S0_inv
            S1 = np.linalg.inv(prec1)
            mean1 = S1 @ (S0_inv @ base.b0_star
                          + base.prec_beta_star @ (inv_s2 @ beta_star[occ]))
            base.beta_star0 = rng.multivariate_normal(mean1, S1, method="cholesky")
            dev = beta_star[occ] - base.beta_star0
            scale = base.nu_star * base.Psi0_star + (dev * inv_s2[:, None]).T @ dev
            lam_inv = invwishart.rvs(df=base.nu_star + n_occ, scale=scale,
                                     random_state=rng)
            base.prec_beta_star = np.linalg.inv(np.atleast_2d(lam_inv))
            shape = base.a_s0 + base.nu_sigma2 * n_occ / 2.0
            rate = base.b_s0 + base.nu_sigma2 * inv_s2.sum() / 2.0
            base.s0 = float(rng.gamma(shape, 1.0 / rate))

        # lag-indexed updates always use all H component values
        prec_mu = np.linalg.inv(base.cov_mu_x)
        S0_inv = np.linalg.inv(base.S0_mu_x)
        S1 = np.linalg.inv(H * prec_mu + S0_inv)
        mean1 = S1 @ (S0_inv @ base.m0_x + prec_mu @ self.mu_x.sum(axis=0))
        base.mu0_x = rng.multivariate_normal(mean1, S1, method="cholesky")
        dev = self.mu_x - base.mu0_x
        base.cov_mu_x = np.atleast_2d(invwishart.rvs(
            df=base.nu_mu_x + H,
            scale=base.nu_mu_x * base.Psi0_mu_x + dev.T @ dev,
            random_state=rng,
        ))
        if not self.diagonal:
            for r in range(1, L):
                vals = self.beta_x[:, r - 1, r:]
                prec_b = np.linalg.inv(base.cov_beta_x0[r - 1])
                S0_inv = np.linalg.inv(base.S0_beta_x[r - 1])
                S1 = np.linalg.inv(H * prec_b + S0_inv)
                mean1 = S1 @ (S0_inv @ base.b0_beta_x[r - 1]
                              + prec_b @ vals.sum(axis=0))
                base.beta_x0[r - 1] = rng.multivariate_normal(
                    mean1, S1, method="cholesky")
                dev = vals - base.beta_x0[r - 1]
                base.cov_beta_x0[r - 1] = np.atleast_2d(invwishart.rvs(
                    df=base.nu_beta_x[r - 1] + H,
                    scale=base.nu_beta_x[r - 1] * base.Psi0_beta_x[r - 1]
                    + dev.T @ dev,
                    random_state=rng,
                ))
        shape = base.a_s0_x + base.nu_delta_x * H / 2.0
        rate = base.b_s0_x + base.nu_delta_x * (1.0 / self.delta_x).sum(axis=0) / 2.0
        base.s0_x = rng.gamma(shape, 1.0 / rate)
        self._refresh_base_cache()
        if not base.fix_y_indexed:
            self._coll_cache = [None] * self.H

    def update_alpha(self):
        """Conjugate gamma draw for the concentration parameter."""
        rng = self.rngs["alpha"]
        log_omega_last = float(np.log1p(-self.v).sum())
        rate = self.base.b_alpha - log_omega_last
        self.alpha = float(rng.gamma(self.base.a_alpha + self.H - 1, 1.0 / rate))

    # ------------------------------------------------------------------
    # sweep orchestration
    # ------------------------------------------------------------------
    def sweep(self, tau: np.ndarray, update_gamma: bool = True):
        mode = self.sel.mode
        self.update_allocations()
        self.update_sticks(tau)
        self._prior_scores = self._batch_prior_eta_x()
        for h in range(self.H):
            self.update_component_x(h)
            if mode == "local" and update_gamma:
                self.update_gamma_local(h)
            if mode != "global":
                self.draw_eta_y(h)
        if mode == "global":
            if update_gamma:
                self.update_gamma_global()
            for h in range(self.H):
                self.draw_eta_y(h)
        if mode == "local" and update_gamma:
            update_pi_gamma(self.sel, self.H, self.rngs["gamma"])
        self.update_base_measure()
        self.update_alpha()

    def log_likelihood(self) -> float:
        """Markovian log-likelihood at the current state."""
        if self.n == 0:
            return 0.0
        M = self.logw[None, :] + self.W + self._response_matrix()
        m = M.max(axis=1)
        denom = self.current_denom_sum()
        return float(m.sum() + np.log(np.exp(M - m[:, None]).sum(axis=1)).sum()
                     - denom)

    def current_model_state(self) -> ModelState:
        comps = []
        for h in range(self.H):
            rows = []
            if not self.diagonal:
                rows = [self.beta_x[h, r - 1, r:].copy() for r in range(1, self.L)]
            comps.append(ComponentParams(
                mu_y=float(self.mu_y[h]), beta_y=self.beta_y[h].copy(),
                sigma2=float(self.sigma2[h]), mu_x=self.mu_x[h].copy(),
                delta_x=self.delta_x[h].copy(), beta_x_rows=rows,
                local_gamma=self.sel.gamma_local[h].copy()
                if self.sel.mode == "local" else None,
            ))
        return ModelState(
            comps, self.w.copy(), selection_mode=self.sel.mode,
            gamma_global=self.sel.gamma_global.copy()
            if self.sel.mode == "global" else None,
        )

    def refresh_caches(self):
        """Recompute every derived quantity after direct state mutation."""
        with np.errstate(divide="ignore"):
            self.logw = np.log(self.w)
        self._refresh_base_cache()
        self.W = self._weight_matrix()
        self._denomsum = None
        self._coll_cache = [None] * self.H
        self._gram = [None] * self.H
        self._idx_list = None

    def set_series_values(self, values: np.ndarray):
        """Replace the observed series (same length and lag order)."""
        values = np.asarray(values, dtype=float)
        if values.size != self.series.length:
            raise ValueError("replacement series must keep the same length")
        self.series = SeriesData(values, self.L)
        self.X = self.series.design
        self.y = self.series.responses
        self.W = self._weight_matrix()
        self._denomsum = None
        self._coll_cache = [None] * self.H
        self._gram = [None] * self.H
        self._idx_list = None


def _scale_proposal(ad: AdaptState, h: int, factor: float):
    ad.prop_chol[h] = ad.prop_chol[h] * np.sqrt(factor)


def tune_diag_round(ad: AdaptState, low: float, high: float) -> bool:
    """Scale each component's proposal from its acceptance rate.

    Acceptance above the window means steps are too small: grow the
    proposal. Returns True when every component lies inside the window.
    """
    rates = ad.rates()
    ok = True
    for h, r in enumerate(rates):
        if np.isnan(r):
            continue
        if r > high:
            _scale_proposal(ad, h, 2.0)
            ok = False
        elif r < low:
            _scale_proposal(ad, h, 0.25)
            ok = False
    ad.reset_counts()
    ad.rounds_done += 1
    return ok


def scale_groups(ad: AdaptState, samples: list[np.ndarray], groups):
    """Rescale proposal blocks toward per-group posterior spread.

    Scaling rows and columns of the proposal covariance by a common factor
    per group preserves its correlation structure.
    """
    for h, sample in enumerate(samples):
        if sample.shape[0] < 10:
            continue
        P = ad.prop_chol[h] @ ad.prop_chol[h].T
        cur_var = np.diag(P).copy()
        emp_var = sample.var(axis=0)
        sf = np.ones(cur_var.size)
        for idx in groups.values():
            num = emp_var[idx].mean()
            den = cur_var[idx].mean()
            if num > 0 and den > 0:
                sf[idx] = np.sqrt(np.clip(num / den, 1e-4, 1e4))
        P = P * np.outer(sf, sf)
        ad.prop_chol[h] = np.linalg.cholesky(P)
    ad.reset_counts()


def estimate_covariance(ad: AdaptState, samples: list[np.ndarray]):
    """Replace proposals with scaled empirical covariance factors."""
    for h, sample in enumerate(samples):
        if sample.shape[0] < 2 * sample.shape[1]:
            continue
        d = sample.shape[1]
        emp = np.cov(sample.T)
        emp = np.atleast_2d(emp) + 1e-10 * np.eye(d) * max(np.trace(np.atleast_2d(emp)) / d, 1.0)
        P = (2.38 ** 2 / d) * emp
        try:
            ad.prop_chol[h] = np.linalg.cholesky(P)
        except np.linalg.LinAlgError:
            pass
    ad.reset_counts()


def run_chain(
    series: SeriesData,
    config: SamplerConfig,
    base: BaseMeasureState | None = None,
    pi_gamma: np.ndarray | None = None,
    pi_pi: np.ndarray | None = None,
) -> Chain:
    """Run one chain: tuning (and optional adaptation), burn-in, sampling."""
    t_all = time.perf_counter()
    sampler = GibbsSampler(series, config, base=base,
                           pi_gamma=pi_gamma, pi_pi=pi_pi)
    tau = config.tau_vector()
    ad = sampler.adapt_state
    timings: dict[str, float] = {}

    # --- iterated tuning of diagonal proposal scales -------------------
    t0 = time.perf_counter()
    for rnd in range(config.tune_rounds):
        allow_gamma = rnd >= config.gamma_freeze_rounds
        for _ in range(config.tune_sweeps):
            sampler.sweep(tau, update_gamma=allow_gamma)
        if tune_diag_round(ad, config.accept_low, config.accept_high):
            if rnd >= config.gamma_freeze_rounds:
                break
    timings["tune"] = time.perf_counter() - t0

    # --- optional covariance adaptation --------------------------------
    if config.adapt and config.tune_rounds > 0:
        t0 = time.perf_counter()
        d = _theta_dim(sampler.L, sampler.diagonal)
        groups = _theta_groups(sampler.L, sampler.diagonal)

        def collect(n_sweeps):
            samples = [np.empty((n_sweeps, d)) for _ in range(sampler.H)]
            for i in range(n_sweeps):
                sampler.sweep(tau)
                for h in range(sampler.H):
                    samples[h][i] = _pack_theta(
                        sampler.mu_x[h],
                        None if sampler.diagonal else sampler.beta_x[h],
                        sampler.delta_x[h], sampler.diagonal,
                    )
            return samples

        ad.phase = "scaleGroups"
        scale_groups(ad, collect(config.tune_sweeps), groups)
        ad.phase = "estimateCov"
        estimate_covariance(ad, collect(config.adapt_cov_sweeps))
        ad.phase = "scaleGlobal"
        for _ in range(config.max_adapt_attempts):
            for _ in range(max(config.tune_sweeps // 2, 1)):
                sampler.sweep(tau)
            if tune_diag_round(ad, config.accept_low, config.accept_high):
                break
        timings["adapt"] = time.perf_counter() - t0
    ad.phase = "frozen"

    # --- burn-in --------------------------------------------------------
    t0 = time.perf_counter()
    for _ in range(config.burnin):
        sampler.sweep(tau)
    timings["burnin"] = time.perf_counter() - t0

    # --- sampling -------------------------------------------------------
    for k in sampler.accept_stats:
        sampler.accept_stats[k] = [0.0, 0]
    sampler.gamma_switch_counts[:] = 0
    n_keep = config.iters // config.thin
    H, L, n = sampler.H, sampler.L, sampler.n
    out = Chain(
        L=L, H=H, n=n, selection_mode=config.selection_mode,
        diagonal=sampler.diagonal,
        mu_y=np.empty((n_keep, H)), beta_y=np.empty((n_keep, H, L)),
        sigma2=np.empty((n_keep, H)), mu_x=np.empty((n_keep, H, L)),
        delta_x=np.empty((n_keep, H, L)),
        beta_x=None if sampler.diagonal else np.empty((n_keep, H, L, L)),
        sticks=np.empty((n_keep, H - 1)), weights=np.empty((n_keep, H)),
        alloc=np.empty((n_keep, n), dtype=np.int64),
        alpha=np.empty(n_keep), loglik=np.empty(n_keep),
        n_occupied=np.empty(n_keep, dtype=np.int64),
        omega_last=np.empty(n_keep),
        gamma=np.empty((n_keep, L), dtype=np.int64)
        if config.selection_mode == "global" else None,
        gamma_local=np.empty((n_keep, H, L), dtype=np.int64)
        if config.selection_mode == "local" else None,
        pi_gamma=np.empty((n_keep, L))
        if config.selection_mode == "local" else None,
        xi=np.empty((n_keep, L), dtype=np.int64)
        if config.selection_mode == "local" else None,
        seed=config.seed,
        coefficient_threshold=0.05 * np.ptp(series.values) / 6.0,
    )
    t0 = time.perf_counter()
    kept = 0
    for it in range(config.iters):
        sampler.sweep(tau)
        if (it + 1) % config.thin == 0 and kept < n_keep:
            out.mu_y[kept] = sampler.mu_y
            out.beta_y[kept] = sampler.beta_y
            out.sigma2[kept] = sampler.sigma2
            out.mu_x[kept] = sampler.mu_x
            out.delta_x[kept] = sampler.delta_x
            if out.beta_x is not None:
                out.beta_x[kept] = sampler.beta_x
            out.sticks[kept] = sampler.v
            out.weights[kept] = sampler.w
            out.alloc[kept] = sampler.s
            out.alpha[kept] = sampler.alpha
            out.loglik[kept] = sampler.log_likelihood()
            out.n_occupied[kept] = int(np.count_nonzero(
                np.bincount(sampler.s, minlength=H)))
            out.omega_last[kept] = sampler.w[-1]
            if config.selection_mode == "global":
                out.gamma[kept] = sampler.sel.gamma_global
            elif config.selection_mode == "local":
                out.gamma_local[kept] = sampler.sel.gamma_local
                out.pi_gamma[kept] = sampler.sel.pi_gamma
                out.xi[kept] = sampler.sel.xi
            kept += 1
    timings["sample"] = time.perf_counter() - t0
    timings["total"] = time.perf_counter() - t_all
    if config.iters > 0:
        timings["seconds_per_1000"] = timings["sample"] / config.iters * 1000.0
    out.phase_timings = timings

    acc = {}
    for key, (num, den) in sampler.accept_stats.items():
        acc[key] = num / den if den else float("nan")
    # eta_x tracked as raw counts, alloc as mean per-sweep rate
    acc["eta_x"] = (sampler.accept_stats["eta_x"][0]
                    / max(sampler.accept_stats["eta_x"][1], 1))
    out.accept = acc
    out.gamma_switches = sampler.gamma_switch_counts.copy()
    return out
