"""Synthetic series generators, their exact conditional oracles, and forecasting.

Three generators are variants of a second-lag population map with additive
normal, multiplicative log-normal, and lag-1-scaled log-normal noise; the
fourth is a linear second-order autoregression. Each exposes its true
transition density and mean as callables so fitted models can be scored
against the truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ModelState, SeriesData
from .cholesky import LOG_2PI

KINDS = ("rickerNormal", "rickerLogNormal1", "rickerLogNormal2", "ar2")

_DEFAULTS = {
    "rickerNormal": {"growth": 2.6, "noise_sd": 0.09},
    "rickerLogNormal1": {"growth": 2.6, "noise_sd": 0.09},
    "rickerLogNormal2": {"growth": 2.6, "noise_sd": 0.09},
    "ar2": {"mean": 2.5, "phi1": 1.2, "phi2": -0.7, "sigma2": 1.0},
}


@dataclass
class SimSpec:
    """What to simulate: generator kind, length, burn-in, seed, parameters."""

    kind: str
    length: int
    burn: int = 500
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown simulation kind: {self.kind}")
        if self.length <= 0:
            raise ValueError("length must be positive")
        merged = dict(_DEFAULTS[self.kind])
        merged.update(self.params)
        self.params = merged


def _map_step(y2: float, growth: float) -> float:
    return y2 * np.exp(growth - y2)


def _gen_values(spec: SimSpec, rng: np.random.Generator) -> np.ndarray:
    p = spec.params
    total = spec.length + spec.burn
    y = np.empty(total + 2)
    init = p.get("init")
    if spec.kind == "ar2":
        y[0] = y[1] = p["mean"]
        if init is not None:
            y[0], y[1] = init
        sd = np.sqrt(p["sigma2"])
        eps = rng.normal(0.0, 1.0, size=total) * sd
        for t in range(2, total + 2):
            y[t] = (p["mean"] + p["phi1"] * (y[t - 1] - p["mean"])
                    + p["phi2"] * (y[t - 2] - p["mean"]) + eps[t - 2])
    else:
        y[0], y[1] = rng.uniform(0.5, 4.0, size=2) if init is None else init
        g, sd = p["growth"], p["noise_sd"]
        eps = rng.normal(size=total)
        for t in range(2, total + 2):
            m = _map_step(y[t - 2], g)
            if spec.kind == "rickerNormal":
                y[t] = m + sd * eps[t - 2]
            elif spec.kind == "rickerLogNormal1":
                y[t] = y[t - 2] * np.exp(g - y[t - 2] + sd * eps[t - 2])
            else:  # rickerLogNormal2: log-scale grows with lag 1
                y[t] = y[t - 2] * np.exp(g - y[t - 2] + sd * y[t - 1] * eps[t - 2])
            if not np.isfinite(y[t]) or abs(y[t]) > 1e12:
                raise FloatingPointError("simulated series blew up")
    return y[-spec.length:]


def generate_series(spec: SimSpec, max_lag: int | None = None) -> SeriesData:
    """Simulate one series; burn-in is discarded before returning."""
    rng = np.random.default_rng(spec.seed)
    values = _gen_values(spec, rng)
    L = max_lag if max_lag is not None else 2
    return SeriesData(values, L)


def gen_ricker_normal(spec: SimSpec, max_lag: int | None = None) -> SeriesData:
    if spec.kind != "rickerNormal":
        raise ValueError("spec kind mismatch")
    return generate_series(spec, max_lag)


def gen_ricker_lognormal1(spec: SimSpec, max_lag: int | None = None) -> SeriesData:
    if spec.kind != "rickerLogNormal1":
        raise ValueError("spec kind mismatch")
    return generate_series(spec, max_lag)


def gen_ricker_lognormal2(spec: SimSpec, max_lag: int | None = None) -> SeriesData:
    if spec.kind != "rickerLogNormal2":
        raise ValueError("spec kind mismatch")
    return generate_series(spec, max_lag)


def gen_ar2(spec: SimSpec, max_lag: int | None = None) -> SeriesData:
    if spec.kind != "ar2":
        raise ValueError("spec kind mismatch")
    return generate_series(spec, max_lag)


def true_transition_log_density(kind: str, params: dict | None = None):
    """Exact conditional log density of a generator, as log p(y_vec | x).

    Returned callable takes an array of response values and one lag vector
    (lag 1 first) and is vectorized over the responses.
    """
    p = dict(_DEFAULTS[kind])
    if params:
        p.update(params)

    if kind == "ar2":
        sd = np.sqrt(p["sigma2"])

        def logpdf(ys, x):
            m = (p["mean"] + p["phi1"] * (x[0] - p["mean"])
                 + p["phi2"] * (x[1] - p["mean"]))
            z = (np.asarray(ys, dtype=float) - m) / sd
            return -0.5 * (LOG_2PI + z * z) - np.log(sd)

        return logpdf

    g, sd0 = p["growth"], p["noise_sd"]
    if kind == "rickerNormal":

        def logpdf(ys, x):
            m = _map_step(x[1], g)
            z = (np.asarray(ys, dtype=float) - m) / sd0
            return -0.5 * (LOG_2PI + z * z) - np.log(sd0)

        return logpdf

    def logpdf(ys, x):
        ys = np.asarray(ys, dtype=float)
        m = np.log(x[1]) + g - x[1]
        sd = sd0 if kind == "rickerLogNormal1" else sd0 * x[0]
        out = np.full(ys.shape, -np.inf)
        ok = ys > 0
        if sd <= 0:
            return out
        z = (np.log(ys[ok]) - m) / sd
        out[ok] = -0.5 * (LOG_2PI + z * z) - np.log(sd) - np.log(ys[ok])
        return out

    return logpdf


def true_transition_density(kind: str, params: dict | None = None):
    logpdf = true_transition_log_density(kind, params)

    def pdf(ys, x):
        return np.exp(logpdf(ys, x))

    return pdf


def true_transition_mean(kind: str, params: dict | None = None):
    """Exact conditional mean of a generator as a callable of the lag vector."""
    p = dict(_DEFAULTS[kind])
    if params:
        p.update(params)
    if kind == "ar2":
        def mean(x):
            return (p["mean"] + p["phi1"] * (x[0] - p["mean"])
                    + p["phi2"] * (x[1] - p["mean"]))
        return mean
    g, sd0 = p["growth"], p["noise_sd"]
    if kind == "rickerNormal":
        return lambda x: _map_step(x[1], g)
    if kind == "rickerLogNormal1":
        return lambda x: _map_step(x[1], g) * np.exp(0.5 * sd0 ** 2)
    return lambda x: _map_step(x[1], g) * np.exp(0.5 * (sd0 * x[0]) ** 2)


def conditional_sampler(kind: str, params: dict | None = None):
    """Draws from the generator's exact conditional given one lag vector."""
    p = dict(_DEFAULTS[kind])
    if params:
        p.update(params)
    if kind == "ar2":
        sd = np.sqrt(p["sigma2"])

        def draw(x, size, rng):
            m = (p["mean"] + p["phi1"] * (x[0] - p["mean"])
                 + p["phi2"] * (x[1] - p["mean"]))
            return m + sd * rng.normal(size=size)

        return draw
    g, sd0 = p["growth"], p["noise_sd"]

    def draw(x, size, rng):
        if kind == "rickerNormal":
            return _map_step(x[1], g) + sd0 * rng.normal(size=size)
        sd = sd0 if kind == "rickerLogNormal1" else sd0 * x[0]
        return x[1] * np.exp(g - x[1] + sd * rng.normal(size=size))

    return draw


def fit_and_validation_split(
    kind: str,
    fit_length: int,
    val_size: int,
    max_lag: int,
    seed: int = 0,
    params: dict | None = None,
    reserve: int = 1000,
    pool: int = 9000,
):
    """Reproduce the benchmark protocol: a reserved fitting block followed by
    a validation sample drawn from the next ``pool`` observations.

    Returns (fit SeriesData of ``fit_length`` values, validation responses,
    validation lag matrix).
    """
    if fit_length > reserve:
        raise ValueError("fit_length cannot exceed the reserved block")
    spec = SimSpec(kind=kind, length=reserve + pool, seed=seed,
                   params=params or {})
    values = _gen_values(spec, np.random.default_rng(spec.seed))
    fit = SeriesData(values[:fit_length], max_lag)
    rng = np.random.default_rng(spec.seed + 1)
    positions = rng.choice(np.arange(reserve, reserve + pool), size=val_size,
                           replace=False)
    y_val = values[positions]
    X_val = np.column_stack([values[positions - k] for k in range(1, max_lag + 1)])
    return fit, y_val, X_val


def draw_path(
    state: ModelState,
    lags: np.ndarray,
    K: int,
    rng: np.random.Generator,
):
    """Simulate K steps ahead from one draw: allocation then response.

    ``lags`` holds the most recent values, lag 1 first. Returns the
    response path and the allocation path.
    """
    from .model import _evaluation_arrays

    x = np.asarray(lags, dtype=float).copy()
    ys = np.empty(K)
    ss = np.empty(K, dtype=np.int64)
    for k in range(K):
        q, means, sds = _evaluation_arrays(state, x)
        h = int(rng.choice(q.size, p=q / q.sum()))
        y = rng.normal(means[h], sds[h])
        ys[k] = y
        ss[k] = h
        x = np.concatenate(([y], x[:-1]))
    return ys, ss


def forecast_k_steps(
    chain,
    series_tail: np.ndarray,
    K: int,
    n_paths: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Posterior forecast ensemble, cycling retained draws across paths."""
    if K < 1:
        raise ValueError("K must be at least 1")
    lags = np.asarray(series_tail, dtype=float)
    if lags.size != chain.L:
        raise ValueError("series tail must supply one value per lag")
    paths = np.empty((n_paths, K))
    n_draws = chain.n_draws
    state_cache: dict[int, ModelState] = {}
    for i in range(n_paths):
        d = i % n_draws
        if d not in state_cache:
            state_cache[d] = chain.state_at(d)
        paths[i], _ = draw_path(state_cache[d], lags, K, rng)
    return paths
