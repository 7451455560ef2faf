"""Configuration, data ingestion, chain persistence, and grid export.

Formats are deliberately plain text: sectioned key=value configuration,
one-value-per-line series files with ``#`` comments, JSON-lines chain files
with a versioned header record, and whitespace-separated grid exports. All
numeric serialization round-trips exactly through repr-based JSON floats.
Every output file is accompanied by a manifest sufficient to replay the run.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .model import SeriesData
from .priors import default_hyperparams, pi_gamma_defaults
from .sampler import Chain, SamplerConfig, run_chain

CHAIN_SCHEMA = "mixar-chain"
CHAIN_VERSION = 1


class ConfigError(ValueError):
    """Unknown key, bad section, or out-of-domain configuration value."""


@dataclass
class ResolvedConfig:
    """Every knob of a fit, with defaults applied and echoed."""

    L: int = 2
    H: int = 40
    diagonal_sigma_x: bool = True
    selection_mode: str = "none"
    snr: float = 5.0
    a_alpha: float = 10.0
    b_alpha: float = 1.0
    nu_sigma2: float = 5.0
    fix_y_indexed: bool = True
    center: float | None = None
    spread: float | None = None
    pi_gamma: list[float] | None = None
    pi_pi: list[float] | None = None
    iters: int = 5000
    burnin: int = 5000
    thin: int = 1
    seed: int = 0
    tune_rounds: int = 3
    tune_sweeps: int = 2000
    adapt: bool = False
    adapt_cov_sweeps: int = 2000
    max_adapt_attempts: int = 10
    accept_low: float = 0.02
    accept_high: float = 0.20
    tau_slice: float = 1.0
    gamma_freeze_rounds: int = 1
    gamma_init: str = "allOn"
    gamma_init_values: list[int] | None = None
    log_transform: bool = False
    skip_header: bool = False

    def resolve_selection_defaults(self):
        if self.selection_mode != "none":
            if self.pi_gamma is None:
                self.pi_gamma = pi_gamma_defaults(self.L).tolist()
            if self.selection_mode == "local" and self.pi_pi is None:
                self.pi_pi = pi_gamma_defaults(self.L).tolist()

    def echo(self) -> dict:
        return asdict(self)

    def sampler_config(self, seed: int | None = None,
                       gamma_init: str | None = None) -> SamplerConfig:
        return SamplerConfig(
            H=self.H,
            iters=self.iters,
            burnin=self.burnin,
            thin=self.thin,
            seed=self.seed if seed is None else seed,
            tau_slice=self.tau_slice,
            accept_low=self.accept_low,
            accept_high=self.accept_high,
            adapt=self.adapt,
            max_adapt_attempts=self.max_adapt_attempts,
            tune_rounds=self.tune_rounds,
            tune_sweeps=self.tune_sweeps,
            adapt_cov_sweeps=self.adapt_cov_sweeps,
            gamma_freeze_rounds=self.gamma_freeze_rounds,
            diagonal_sigma_x=self.diagonal_sigma_x,
            selection_mode=self.selection_mode,
            gamma_init=self.gamma_init if gamma_init is None else gamma_init,
            gamma_init_values=self.gamma_init_values,
        )

    def build_base(self, series: SeriesData):
        return default_hyperparams(
            series, self.L, snr=self.snr, a_alpha=self.a_alpha,
            b_alpha=self.b_alpha, nu_sigma2=self.nu_sigma2,
            diagonal=self.diagonal_sigma_x, fix_y_indexed=self.fix_y_indexed,
            center=self.center, spread=self.spread,
        )


_SCHEMA = {
    "model": {
        "l": ("L", int),
        "h": ("H", int),
        "diagonalsigmax": ("diagonal_sigma_x", "bool"),
        "selectionmode": ("selection_mode", str),
    },
    "prior": {
        "snr": ("snr", float),
        "aalpha": ("a_alpha", float),
        "balpha": ("b_alpha", float),
        "nusigma2": ("nu_sigma2", float),
        "fixyindexed": ("fix_y_indexed", "bool"),
        "center": ("center", float),
        "spread": ("spread", float),
        "pigamma": ("pi_gamma", "floatlist"),
        "pipi": ("pi_pi", "floatlist"),
    },
    "sampler": {
        "iters": ("iters", int),
        "burnin": ("burnin", int),
        "thin": ("thin", int),
        "seed": ("seed", int),
        "tunerounds": ("tune_rounds", int),
        "tunesweeps": ("tune_sweeps", int),
        "adapt": ("adapt", "bool"),
        "adaptcovsweeps": ("adapt_cov_sweeps", int),
        "maxadaptattempts": ("max_adapt_attempts", int),
        "acceptlow": ("accept_low", float),
        "accepthigh": ("accept_high", float),
        "tauslice": ("tau_slice", float),
        "gammafreezerounds": ("gamma_freeze_rounds", int),
    },
    "selection": {
        "gammainit": ("gamma_init", str),
        "gammainitvalues": ("gamma_init_values", "intlist"),
    },
    "data": {
        "logtransform": ("log_transform", "bool"),
        "skipheader": ("skip_header", "bool"),
    },
}


def _convert(raw: str, kind, where: str):
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind == "floatlist":
            return [float(x) for x in raw.replace(",", " ").split()]
        if kind == "intlist":
            return [int(x) for x in raw.replace(",", " ").split()]
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {where}: {raw!r}") from exc


def parse_config(path: str) -> ResolvedConfig:
    """Parse a sectioned key=value file into a fully resolved configuration.

    Unknown sections or keys are hard errors; missing keys take defaults,
    which are echoed back in the result.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str  # keep user casing for error messages
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", None)
        loc = f" at line {lineno}" if lineno else ""
        raise ConfigError(f"cannot parse {path}{loc}: {exc.message}") from exc
    cfg = ResolvedConfig()
    for section in parser.sections():
        key_map = _SCHEMA.get(section.lower())
        if key_map is None:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            entry = key_map.get(key.lower().replace("_", ""))
            if entry is None:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            attr, kind = entry
            setattr(cfg, attr, _convert(raw, kind, f"[{section}] {key}"))
    _validate_config(cfg)
    cfg.resolve_selection_defaults()
    return cfg


def _validate_config(cfg: ResolvedConfig):
    if cfg.L < 1:
        raise ConfigError("L must be at least 1")
    if cfg.H < 2:
        raise ConfigError("H must be at least 2")
    if cfg.selection_mode not in ("none", "global", "local"):
        raise ConfigError("selectionMode must be none, global, or local")
    if cfg.gamma_init not in ("allOn", "allOff", "custom"):
        raise ConfigError("gammaInit must be allOn, allOff, or custom")
    if cfg.snr <= 0:
        raise ConfigError("snr must be positive")
    if cfg.thin < 1:
        raise ConfigError("thin must be at least 1")
    if cfg.iters < 0 or cfg.burnin < 0:
        raise ConfigError("iters and burnin must be nonnegative")
    if cfg.burnin + cfg.iters <= 0:
        raise ConfigError("burnin + iters must be positive")
    if not 0.0 < cfg.accept_low < cfg.accept_high < 1.0:
        raise ConfigError("acceptance window must sit inside (0, 1)")
    if cfg.pi_gamma is not None and not all(0 <= p <= 1 for p in cfg.pi_gamma):
        raise ConfigError("piGamma entries must lie in [0, 1]")


def series_digest(values: np.ndarray) -> str:
    """Content hash of a series, independent of file formatting."""
    canon = "\n".join(repr(float(v)) for v in np.asarray(values, float).ravel())
    return hashlib.sha256(canon.encode()).hexdigest()


def read_series(path: str, log_transform: bool = False,
                skip_header: bool = False) -> np.ndarray:
    """Read one real per line; ``#`` starts a comment; blank lines skipped."""
    values = []
    header_pending = skip_header
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if header_pending:
                header_pending = False
                continue
            try:
                values.append(float(text))
            except ValueError as exc:
                raise ValueError(
                    f"non-numeric series entry at line {lineno}: {text!r}"
                ) from exc
    if not values:
        raise ValueError(f"series file {path} holds no values")
    out = np.array(values)
    if log_transform:
        if np.any(out <= 0):
            raise ValueError("log transform requires positive values")
        out = np.log(out)
    return out


def write_series(path: str, values: np.ndarray, comment: str | None = None):
    lines = []
    if comment:
        lines.append(f"# {comment}")
    lines += [repr(float(v)) for v in np.asarray(values, float).ravel()]
    _atomic_write(path, "\n".join(lines) + "\n")


@dataclass
class RunManifest:
    """Reproducibility record written alongside every output file."""

    config_echo: dict
    seed: int
    data_digest: str
    software_version: str = __version__
    phase_timings: dict = field(default_factory=dict)
    acceptance_summary: dict = field(default_factory=dict)
    command: str = ""
    data_path: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))


def manifest_path(out_path: str) -> str:
    return out_path + ".manifest.json"


def write_manifest(out_path: str, manifest: RunManifest):
    _atomic_write(manifest_path(out_path), manifest.to_json() + "\n")


def read_manifest(out_path_or_manifest: str) -> RunManifest:
    path = out_path_or_manifest
    if not path.endswith(".manifest.json"):
        path = manifest_path(path)
    with open(path, "r", encoding="utf-8") as fh:
        return RunManifest.from_json(fh.read())


def _atomic_write(path: str, text: str):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_chain(path: str, chain: Chain):
    """Write a chain: versioned JSON header, one JSON record per draw."""
    header = {
        "schema": CHAIN_SCHEMA,
        "version": CHAIN_VERSION,
        "L": chain.L, "H": chain.H, "n": chain.n,
        "selectionMode": chain.selection_mode,
        "diagonal": chain.diagonal,
        "nDraws": chain.n_draws,
        "seed": chain.seed,
        "coefficientThreshold": chain.coefficient_threshold,
        "accept": chain.accept,
        "gammaSwitches": None if chain.gamma_switches is None
        else chain.gamma_switches.tolist(),
        # wall-clock timings vary between runs and live in the manifest,
        # keeping chain files bit-identical under replay
    }
    lines = [json.dumps(header, sort_keys=True)]
    for d in range(chain.n_draws):
        rec = {
            "muY": chain.mu_y[d].tolist(),
            "betaY": chain.beta_y[d].tolist(),
            "sigma2": chain.sigma2[d].tolist(),
            "muX": chain.mu_x[d].tolist(),
            "deltaX": chain.delta_x[d].tolist(),
            "sticks": chain.sticks[d].tolist(),
            "weights": chain.weights[d].tolist(),
            "alloc": chain.alloc[d].tolist(),
            "alpha": chain.alpha[d],
            "loglik": chain.loglik[d],
            "nOccupied": int(chain.n_occupied[d]),
            "omegaLast": chain.omega_last[d],
        }
        if chain.beta_x is not None:
            rec["betaX"] = chain.beta_x[d].tolist()
        if chain.gamma is not None:
            rec["gamma"] = chain.gamma[d].tolist()
        if chain.gamma_local is not None:
            rec["gammaLocal"] = chain.gamma_local[d].tolist()
            rec["piGamma"] = chain.pi_gamma[d].tolist()
            rec["xi"] = chain.xi[d].tolist()
        lines.append(json.dumps(rec, sort_keys=True))
    _atomic_write(path, "\n".join(lines) + "\n")


class ChainFileError(ValueError):
    """Schema mismatch or corrupt record in a chain file."""


def read_chain(path: str) -> Chain:
    """Read a chain file back; values round-trip exactly."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ChainFileError(f"{path}: empty chain file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ChainFileError(f"{path}: unreadable header") from exc
    if header.get("schema") != CHAIN_SCHEMA:
        raise ChainFileError(f"{path}: not a chain file")
    if header.get("version") != CHAIN_VERSION:
        raise ChainFileError(
            f"{path}: schema version {header.get('version')} unsupported"
        )
    nd, H, L, n = header["nDraws"], header["H"], header["L"], header["n"]
    records = []
    for i, line in enumerate(lines[1:], start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ChainFileError(f"{path}: corrupt record {i}") from exc
    if len(records) != nd:
        raise ChainFileError(
            f"{path}: header promises {nd} records, found {len(records)}"
        )
    sel = header["selectionMode"]
    chain = Chain(
        L=L, H=H, n=n, selection_mode=sel, diagonal=header["diagonal"],
        mu_y=np.array([r["muY"] for r in records]).reshape(nd, H),
        beta_y=np.array([r["betaY"] for r in records]).reshape(nd, H, L),
        sigma2=np.array([r["sigma2"] for r in records]).reshape(nd, H),
        mu_x=np.array([r["muX"] for r in records]).reshape(nd, H, L),
        delta_x=np.array([r["deltaX"] for r in records]).reshape(nd, H, L),
        beta_x=np.array([r["betaX"] for r in records]).reshape(nd, H, L, L)
        if records and "betaX" in records[0] else None,
        sticks=np.array([r["sticks"] for r in records]).reshape(nd, H - 1),
        weights=np.array([r["weights"] for r in records]).reshape(nd, H),
        alloc=np.array([r["alloc"] for r in records], dtype=np.int64).reshape(nd, n),
        alpha=np.array([r["alpha"] for r in records]),
        loglik=np.array([r["loglik"] for r in records]),
        n_occupied=np.array([r["nOccupied"] for r in records], dtype=np.int64),
        omega_last=np.array([r["omegaLast"] for r in records]),
        gamma=np.array([r["gamma"] for r in records], dtype=np.int64).reshape(nd, L)
        if sel == "global" and records else None,
        gamma_local=np.array([r["gammaLocal"] for r in records],
                             dtype=np.int64).reshape(nd, H, L)
        if sel == "local" and records else None,
        pi_gamma=np.array([r["piGamma"] for r in records]).reshape(nd, L)
        if sel == "local" and records else None,
        xi=np.array([r["xi"] for r in records], dtype=np.int64).reshape(nd, L)
        if sel == "local" and records else None,
        accept=header.get("accept", {}),
        gamma_switches=None if header.get("gammaSwitches") is None
        else np.array(header["gammaSwitches"], dtype=np.int64),
        coefficient_threshold=header.get("coefficientThreshold", 0.0),
        seed=header.get("seed", 0),
    )
    if nd == 0 and sel == "global":
        chain.gamma = np.empty((0, L), dtype=np.int64)
    if nd == 0 and sel == "local":
        chain.gamma_local = np.empty((0, H, L), dtype=np.int64)
        chain.pi_gamma = np.empty((0, L))
        chain.xi = np.empty((0, L), dtype=np.int64)
    return chain


def fit_series(values: np.ndarray, cfg: ResolvedConfig,
               seed: int | None = None,
               gamma_init: str | None = None) -> Chain:
    """Build the series, derive the base measure, and run one chain."""
    series = SeriesData(values, cfg.L)
    base = cfg.build_base(series)
    pi_gamma = None if cfg.pi_gamma is None else np.asarray(cfg.pi_gamma)
    pi_pi = None if cfg.pi_pi is None else np.asarray(cfg.pi_pi)
    return run_chain(series, cfg.sampler_config(seed=seed, gamma_init=gamma_init),
                     base=base, pi_gamma=pi_gamma, pi_pi=pi_pi)


def fit_manifest(cfg: ResolvedConfig, chain: Chain, values: np.ndarray,
                 command: str = "fit", data_path: str = "") -> RunManifest:
    return RunManifest(
        config_echo=cfg.echo(),
        seed=chain.seed,
        data_digest=series_digest(values),
        phase_timings=chain.phase_timings,
        acceptance_summary=chain.accept,
        command=command,
        data_path=data_path,
    )


# ---------------------------------------------------------------------------
# grid export
# ---------------------------------------------------------------------------

def _grid_points(chain, vary, fixed, policy, data_range, rng):
    """Build the (n_grid, L) lag matrix and coordinate columns for a draw."""
    L = chain.L
    axes = [np.asarray(vals, dtype=float) for _, vals in vary]
    if len(axes) == 0:
        mesh = [np.zeros((1, 0))]
        n_grid = 1
        coords = np.zeros((1, 0))
    else:
        grids = np.meshgrid(*axes, indexing="ij")
        coords = np.column_stack([g.ravel() for g in grids])
        n_grid = coords.shape[0]
    X = np.empty((n_grid, L))
    varied = {lag for lag, _ in vary}
    for lag in range(1, L + 1):
        if lag in varied:
            continue
        if policy == "uniformRandom":
            X[:, lag - 1] = rng.uniform(data_range[0], data_range[1],
                                        size=n_grid)
        else:
            X[:, lag - 1] = fixed.get(lag, fixed.get(0, 0.0))
    for k, (lag, _) in enumerate(vary):
        X[:, lag - 1] = coords[:, k]
    return X, coords


def _quantiles_vectorized(q, means, sds, u):
    """Row-wise mixture quantiles by bisection (vectorized over rows)."""
    from scipy.special import ndtr
    span = 10.0 * sds.max()
    lo = np.full(means.shape[0], means.min() - span)
    hi = np.full(means.shape[0], means.max() + span)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        cdf = np.einsum("gh,gh->g", q,
                        ndtr((mid[:, None] - means) / sds[None, :]))
        below = cdf <= u
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def export_grid(
    chain: Chain,
    functional: str,
    vary: list[tuple[int, np.ndarray]] | None = None,
    y_values: np.ndarray | None = None,
    u: float | None = None,
    fixed: dict[int, float] | None = None,
    policy: str = "fixAtValue",
    data_range: tuple[float, float] | None = None,
    rng: np.random.Generator | None = None,
    max_draws: int | None = 200,
):
    """Posterior summaries of a functional over a lag grid.

    Returns (column names, array) with one row per grid point: coordinates,
    then posterior mean and pointwise 2.5/97.5 percentiles across draws.
    Non-varied lags are fixed at supplied values or, under the
    ``uniformRandom`` policy, redrawn uniformly over ``data_range`` for each
    posterior draw.
    """
    from .evaluate import _chain_mask, _draw_indices
    from .model import kernel_mean_matrix, weight_kernel_logdensity
    from .cholesky import LOG_2PI

    vary = vary or []
    fixed = fixed or {}
    if functional not in ("density", "mean", "quantile"):
        raise ValueError("functional must be density, mean, or quantile")
    if len(vary) > 2:
        raise ValueError("at most two varied lags are supported")
    if functional == "density":
        if y_values is None:
            raise ValueError("density export needs y_values")
        if len(vary) > 1:
            raise ValueError("density export supports at most one varied lag")
    if functional == "quantile" and (u is None or not 0 < u < 1):
        raise ValueError("quantile export needs u in (0, 1)")
    if policy not in ("fixAtValue", "uniformRandom"):
        raise ValueError("policy must be fixAtValue or uniformRandom")
    if policy == "uniformRandom":
        if data_range is None:
            raise ValueError("uniformRandom policy needs data_range")
        if rng is None:
            rng = np.random.default_rng(0)

    idx = _draw_indices(chain.n_draws, max_draws)
    samples = None
    for k, d in enumerate(idx):
        X, coords = _grid_points(chain, vary, fixed, policy, data_range, rng)
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
        sds = np.sqrt(chain.sigma2[d])
        if functional == "mean":
            vals = (q * means).sum(axis=1)
        elif functional == "quantile":
            vals = _quantiles_vectorized(q, means, sds, u)
        else:
            ys = np.asarray(y_values, dtype=float)
            z = ys[None, :, None] - means[:, None, :]
            logn = -0.5 * (LOG_2PI + np.log(chain.sigma2[d])[None, None, :]
                           + z * z / chain.sigma2[d][None, None, :])
            M = np.log(q)[:, None, :] + logn
            mm = M.max(axis=2, keepdims=True)
            vals = (np.exp(M - mm).sum(axis=2) * np.exp(mm[:, :, 0])).ravel()
        if samples is None:
            samples = np.empty((idx.size, vals.size))
        samples[k] = vals

    if functional == "density":
        ys = np.asarray(y_values, dtype=float)
        base_coords, names = [], []
        if vary:
            lag, lag_vals = vary[0]
            names.append(f"lag{lag}")
            base_coords.append(np.repeat(np.asarray(lag_vals, float), ys.size))
            names.append("y")
            base_coords.append(np.tile(ys, len(lag_vals)))
        else:
            names.append("y")
            base_coords.append(ys)
        coords_out = np.column_stack(base_coords)
    else:
        names = [f"lag{lag}" for lag, _ in vary]
        _, coords_out = _grid_points(chain, vary, fixed, "fixAtValue",
                                     None, None)
    mean = samples.mean(axis=0)
    lo = np.percentile(samples, 2.5, axis=0)
    hi = np.percentile(samples, 97.5, axis=0)
    table = np.column_stack([coords_out, mean, lo, hi])
    names += ["mean", "q025", "q975"]
    return names, table


def write_grid(path: str, names: list[str], table: np.ndarray):
    lines = [" ".join(names)]
    for row in table:
        lines.append(" ".join(repr(float(v)) for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")
