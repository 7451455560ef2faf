"""Scoring fitted chains: Monte Carlo K-L divergence, transition-mean MSE,
lag-inclusion summaries, and chain diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cholesky import LOG_2PI
from .lagselect import global_dependence_summaries
from .model import kernel_mean_matrix, weight_kernel_logdensity

# Near the smallest representable log density; replicates scoring below this
# are clamped and counted rather than silently producing non-finite scores.
LOG_FLOOR = -745.0


@dataclass
class ValidationSet:
    """Held-out (response, lag-vector) pairs plus the true-density oracle."""

    y: np.ndarray
    X: np.ndarray
    true_log_density: callable
    conditional_sampler: callable
    replicate_count: int = 2000

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if self.X.shape[0] != self.y.size:
            raise ValueError("y and X must align")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("lag vectors must be finite")
        if self.replicate_count < 100:
            raise ValueError("replicate_count must be at least 100")


@dataclass
class KLResult:
    kl: float
    clamp_count: int
    n_draws_used: int
    per_point: np.ndarray = field(repr=False, default=None)


def _draw_indices(n_draws: int, max_draws: int | None) -> np.ndarray:
    """Deterministic stride subset of retained draws, for reproducibility."""
    if max_draws is None or n_draws <= max_draws:
        return np.arange(n_draws)
    stride = n_draws / max_draws
    return np.unique((np.arange(max_draws) * stride).astype(int))


def _chain_mask(chain, d: int) -> np.ndarray:
    if chain.selection_mode == "global":
        return np.tile(chain.gamma[d].astype(float), (chain.H, 1))
    if chain.selection_mode == "local":
        return chain.gamma_local[d].astype(float)
    return np.ones((chain.H, chain.L))


def _model_log_density_matrix(chain, d: int, X: np.ndarray, ys: np.ndarray):
    """log p_hat(ys[i, r] | X[i]) for draw d; ys is (m, R)."""
    G = _chain_mask(chain, d)
    beta_x = None if chain.beta_x is None else chain.beta_x[d]
    W = weight_kernel_logdensity(X, chain.mu_x[d], chain.delta_x[d], beta_x, G)
    logq = np.log(chain.weights[d])[None, :] + W
    m = logq.max(axis=1, keepdims=True)
    logq = logq - (m + np.log(np.exp(logq - m).sum(axis=1, keepdims=True)))
    means = kernel_mean_matrix(X, chain.mu_y[d], chain.beta_y[d],
                               chain.mu_x[d], G)
    sig2 = chain.sigma2[d]
    # (m, R, H) log kernel ordinates
    z = ys[:, :, None] - means[:, None, :]
    logn = -0.5 * (LOG_2PI + np.log(sig2)[None, None, :]
                   + z * z / sig2[None, None, :])
    M = logq[:, None, :] + logn
    mm = M.max(axis=2)
    return mm + np.log(np.exp(M - mm[:, :, None]).sum(axis=2))


def kl_divergence_mc(
    validation: ValidationSet,
    chain,
    rng: np.random.Generator,
    max_draws: int | None = 200,
    chunk: int = 64,
) -> KLResult:
    """Monte Carlo K-L divergence of the fitted transition density from truth.

    Replicates are drawn once per validation point from the true conditional;
    the log-ratio is averaged over replicates, posterior draws, and points.
    Non-finite model ordinates are clamped at the log floor and counted.
    """
    m = validation.y.size
    R = validation.replicate_count
    reps = np.empty((m, R))
    true_term = np.empty(m)
    for j in range(m):
        x = validation.X[j]
        reps[j] = validation.conditional_sampler(x, R, rng)
        true_term[j] = validation.true_log_density(reps[j], x).mean()

    idx = _draw_indices(chain.n_draws, max_draws)
    model_term = np.zeros(m)
    clamp = 0
    for lo in range(0, m, chunk):
        sl = slice(lo, min(lo + chunk, m))
        acc = np.zeros(sl.stop - sl.start)
        for d in idx:
            lp = _model_log_density_matrix(chain, d, validation.X[sl], reps[sl])
            bad = ~np.isfinite(lp) | (lp < LOG_FLOOR)
            clamp += int(bad.sum())
            lp = np.where(bad, LOG_FLOOR, lp)
            acc += lp.mean(axis=1)
        model_term[sl] = acc / idx.size
    per_point = true_term - model_term
    return KLResult(
        kl=float(per_point.mean()),
        clamp_count=clamp,
        n_draws_used=int(idx.size),
        per_point=per_point,
    )


def mse_transition_mean(
    series,
    chain,
    true_mean: callable,
    max_draws: int | None = 200,
    region: callable | None = None,
) -> float:
    """Mean squared error of the posterior transition mean at observed lags.

    ``region`` optionally restricts scoring to lag vectors it accepts
    (e.g. ``lambda x: x[1] < 2.5``).
    """
    X = series.design
    if region is not None:
        keep = np.array([bool(region(x)) for x in X])
        X = X[keep]
    if X.shape[0] == 0:
        raise ValueError("region filter removed every observation")
    truth = np.array([true_mean(x) for x in X])
    idx = _draw_indices(chain.n_draws, max_draws)
    total = 0.0
    for d in idx:
        G = _chain_mask(chain, d)
        beta_x = None if chain.beta_x is None else chain.beta_x[d]
        if G.any():
            W = weight_kernel_logdensity(X, chain.mu_x[d], chain.delta_x[d],
                                         beta_x, G)
            logq = np.log(chain.weights[d])[None, :] + W
            mm = logq.max(axis=1, keepdims=True)
            q = np.exp(logq - mm)
            q /= q.sum(axis=1, keepdims=True)
            means = kernel_mean_matrix(X, chain.mu_y[d], chain.beta_y[d],
                                       chain.mu_x[d], G)
        else:
            q = np.tile(chain.weights[d], (X.shape[0], 1))
            means = np.tile(chain.mu_y[d], (X.shape[0], 1))
        est = (q * means).sum(axis=1)
        total += float(np.mean((est - truth) ** 2))
    return total / idx.size


def lag_inclusion_report(chain) -> dict:
    """Posterior per-lag inclusion summaries for a selection-enabled chain."""
    if chain.selection_mode == "global":
        return {
            "mode": "global",
            "inclusion": chain.gamma.mean(axis=0),
            "switch_counts": chain.gamma_switches,
        }
    if chain.selection_mode == "local":
        out = global_dependence_summaries(chain)
        out["mode"] = "local"
        out["switch_counts"] = chain.gamma_switches
        return out
    raise ValueError("chain was fit without lag selection")


def chain_diagnostics(chain) -> dict:
    """Summary record of the monitored traces and runtime."""
    if chain.n_draws == 0:
        raise ValueError("chain holds no draws")

    def stats(a):
        return {
            "mean": float(np.mean(a)), "sd": float(np.std(a)),
            "min": float(np.min(a)), "max": float(np.max(a)),
        }

    out = {
        "n_draws": int(chain.n_draws),
        "loglik": stats(chain.loglik),
        "n_occupied": stats(chain.n_occupied),
        "omega_last": stats(chain.omega_last),
        "acceptance": dict(chain.accept),
        "seconds_per_1000": chain.phase_timings.get("seconds_per_1000", float("nan")),
        "phase_timings": dict(chain.phase_timings),
    }
    if chain.gamma_switches is not None:
        out["gamma_switch_counts"] = chain.gamma_switches.tolist()
    return out
