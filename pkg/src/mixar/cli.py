"""Command-line interface: simulate, fit, estimate, forecast, evaluate, summarize.

Every output file is written with a manifest carrying the resolved
configuration, seed, and data digest, sufficient to replay the run
bit-exactly. Multi-chain fits dispatch one worker per chain; the pool size
is capped by the MIXAR_WORKERS environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .chainio import (
    ConfigError,
    ResolvedConfig,
    RunManifest,
    fit_manifest,
    fit_series,
    export_grid,
    manifest_path,
    parse_config,
    read_chain,
    read_manifest,
    read_series,
    series_digest,
    write_chain,
    write_grid,
    write_manifest,
    write_series,
)
from .evaluate import (
    ValidationSet,
    chain_diagnostics,
    kl_divergence_mc,
    lag_inclusion_report,
    mse_transition_mean,
)
from .model import SeriesData
from .simulate import (
    KINDS,
    SimSpec,
    conditional_sampler,
    fit_and_validation_split,
    forecast_k_steps,
    generate_series,
    true_transition_log_density,
    true_transition_mean,
)


def _parse_kv_params(pairs):
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ValueError(f"--param expects name=value, got {pair!r}")
        k, v = pair.split("=", 1)
        out[k.strip()] = float(v)
    return out


def _cmd_simulate(args) -> int:
    spec = SimSpec(kind=args.kind, length=args.length, burn=args.burn,
                   seed=args.seed, params=_parse_kv_params(args.param))
    series = generate_series(spec)
    write_series(args.out, series.values,
                 comment=f"mixar simulate kind={args.kind} seed={args.seed}")
    manifest = RunManifest(
        config_echo={"kind": args.kind, "length": args.length,
                     "burn": args.burn, "params": spec.params},
        seed=args.seed,
        data_digest=series_digest(series.values),
        command="simulate",
    )
    write_manifest(args.out, manifest)
    print(f"wrote {args.out} ({args.length} values) and {manifest_path(args.out)}")
    return 0


def _chain_path(out_dir: str, index: int) -> str:
    return os.path.join(out_dir, f"chain{index:02d}.jsonl")


def _fit_worker(task):
    values, cfg_dict, seed, gamma_init, out_path, data_path = task
    cfg = ResolvedConfig(**cfg_dict)
    chain = fit_series(np.asarray(values), cfg, seed=seed,
                       gamma_init=gamma_init)
    write_chain(out_path, chain)
    echo = cfg.echo()
    echo["seed"] = seed
    if gamma_init is not None:
        echo["gamma_init"] = gamma_init
    manifest = fit_manifest(cfg, chain, np.asarray(values),
                            command="fit", data_path=data_path)
    manifest.config_echo = echo
    write_manifest(out_path, manifest)
    return out_path


def _cmd_fit(args) -> int:
    if args.replay:
        manifest = read_manifest(args.replay)
        cfg = ResolvedConfig(**{k: v for k, v in manifest.config_echo.items()
                                if k in ResolvedConfig.__dataclass_fields__})
        data_path = args.data or manifest.data_path
        values = read_series(data_path, log_transform=cfg.log_transform,
                             skip_header=cfg.skip_header)
        if series_digest(values) != manifest.data_digest:
            raise ValueError("data digest does not match the manifest")
        seeds = [manifest.config_echo.get("seed", manifest.seed)]
        inits = [manifest.config_echo.get("gamma_init")]
    else:
        cfg = parse_config(args.config)
        values = read_series(args.data, log_transform=cfg.log_transform,
                             skip_header=cfg.skip_header)
        data_path = args.data
        seed_base = cfg.seed if args.seed_base is None else args.seed_base
        seeds = [seed_base + i for i in range(args.chains)]
        if args.init_split:
            if cfg.selection_mode == "none":
                raise ValueError("--init-split requires a selection mode")
            half = len(seeds) // 2
            inits = ["allOff" if i < half else "allOn"
                     for i in range(len(seeds))]
        else:
            inits = [None] * len(seeds)
    os.makedirs(args.out_dir, exist_ok=True)
    tasks = [
        (values.tolist(), cfg.echo(), seeds[i], inits[i],
         _chain_path(args.out_dir, i), data_path)
        for i in range(len(seeds))
    ]
    workers = int(os.environ.get("MIXAR_WORKERS", os.cpu_count() or 1))
    if len(tasks) == 1 or workers <= 1:
        paths = [_fit_worker(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            paths = list(pool.map(_fit_worker, tasks))
    for p in paths:
        print(f"wrote {p}")
    return 0


def _parse_vary(specs):
    out = []
    for spec in specs or []:
        parts = spec.split(":")
        if len(parts) != 4:
            raise ValueError(f"--vary expects lag:lo:hi:count, got {spec!r}")
        lag, lo, hi, count = int(parts[0]), float(parts[1]), float(parts[2]), int(parts[3])
        out.append((lag, np.linspace(lo, hi, count)))
    return out


def _parse_fixed(text):
    out = {}
    if not text:
        return out
    for pair in text.split(","):
        lag, val = pair.split("=")
        out[int(lag)] = float(val)
    return out


def _cmd_estimate(args) -> int:
    chain = read_chain(args.chain)
    vary = _parse_vary(args.vary)
    y_values = None
    if args.y:
        lo, hi, count = args.y.split(":")
        y_values = np.linspace(float(lo), float(hi), int(count))
    data_range = None
    if args.policy == "uniformRandom":
        if not args.data:
            raise ValueError("uniformRandom policy needs --data for the range")
        vals = read_series(args.data)
        data_range = (float(vals.min()), float(vals.max()))
    names, table = export_grid(
        chain, args.functional, vary=vary, y_values=y_values, u=args.u,
        fixed=_parse_fixed(args.fixed), policy=args.policy,
        data_range=data_range, rng=np.random.default_rng(args.seed),
        max_draws=args.max_draws,
    )
    write_grid(args.out, names, table)
    manifest = RunManifest(
        config_echo={"chain": args.chain, "functional": args.functional,
                     "vary": args.vary, "y": args.y, "u": args.u,
                     "fixed": args.fixed, "policy": args.policy,
                     "maxDraws": args.max_draws},
        seed=args.seed,
        data_digest="",
        command="estimate",
    )
    write_manifest(args.out, manifest)
    print(f"wrote {args.out}")
    return 0


def _cmd_forecast(args) -> int:
    chain = read_chain(args.chain)
    values = read_series(args.data)
    series = SeriesData(values, chain.L)
    rng = np.random.default_rng(args.seed)
    paths = forecast_k_steps(chain, series.tail_lags(), args.k, args.paths, rng)
    names = [f"step{k + 1}" for k in range(args.k)]
    write_grid(args.out, names, paths)
    manifest = RunManifest(
        config_echo={"chain": args.chain, "k": args.k, "paths": args.paths},
        seed=args.seed,
        data_digest=series_digest(values),
        command="forecast",
        data_path=args.data,
    )
    write_manifest(args.out, manifest)
    print(f"wrote {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    fit, y_val, X_val = fit_and_validation_split(
        args.oracle, fit_length=args.fit_length, val_size=args.val_size,
        max_lag=args.max_lag, seed=args.data_seed)
    validation = ValidationSet(
        y=y_val, X=X_val,
        true_log_density=true_transition_log_density(args.oracle),
        conditional_sampler=conditional_sampler(args.oracle),
        replicate_count=args.replicates,
    )
    scores = {"oracle": args.oracle, "chains": []}
    for path in args.chains:
        chain = read_chain(path)
        rng = np.random.default_rng(args.seed)
        res = kl_divergence_mc(validation, chain, rng,
                               max_draws=args.max_draws)
        entry = {
            "chain": path,
            "kl": res.kl,
            "clamp_count": res.clamp_count,
            "n_draws_used": res.n_draws_used,
            "runtime_seconds_per_1000": chain.phase_timings.get(
                "seconds_per_1000"),
        }
        if chain.L >= 2:
            fit_l = SeriesData(fit.values, chain.L)
            entry["mse_transition_mean"] = mse_transition_mean(
                fit_l, chain, true_transition_mean(args.oracle),
                max_draws=args.max_draws)
        if chain.selection_mode != "none":
            rep = lag_inclusion_report(chain)
            entry["lag_inclusion"] = {
                k: (v.tolist() if isinstance(v, np.ndarray) else v)
                for k, v in rep.items()
            }
        scores["chains"].append(entry)
    text = json.dumps(scores, indent=1, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        manifest = RunManifest(
            config_echo={"oracle": args.oracle, "chains": args.chains,
                         "valSize": args.val_size,
                         "replicates": args.replicates,
                         "fitLength": args.fit_length},
            seed=args.seed,
            data_digest="",
            command="evaluate",
        )
        write_manifest(args.out, manifest)
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def _cmd_summarize(args) -> int:
    chain = read_chain(args.chain)
    try:  # timings live in the manifest, not the chain file
        chain.phase_timings = read_manifest(args.chain).phase_timings
    except OSError:
        pass
    out = {"diagnostics": chain_diagnostics(chain)}
    if chain.selection_mode != "none":
        rep = lag_inclusion_report(chain)
        out["lag_inclusion"] = {
            k: (v.tolist() if isinstance(v, np.ndarray) else v)
            for k, v in rep.items()
        }
    text = json.dumps(out, indent=1, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixar",
        description="Mixture autoregression: fit, score, and forecast "
                    "transition densities with lag selection.",
    )
    parser.add_argument("--version", action="version",
                        version=f"mixar {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a benchmark series")
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--length", required=True, type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--burn", type=int, default=500)
    p.add_argument("--param", action="append",
                   help="override a generator parameter, name=value")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="run MCMC chains on a series")
    p.add_argument("--data", help="series file, one value per line")
    p.add_argument("--config", help="sectioned key=value configuration file")
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--seed-base", type=int, default=None,
                   help="seed for chain 0; chain i uses seed-base + i")
    p.add_argument("--init-split", action="store_true",
                   help="initialize half the chains with all lags off and "
                        "half with all lags on")
    p.add_argument("--replay", help="manifest file to reproduce a prior run")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("estimate", help="export functional grids from a chain")
    p.add_argument("--chain", required=True)
    p.add_argument("--functional", required=True,
                   choices=("density", "mean", "quantile"))
    p.add_argument("--vary", action="append",
                   help="varied lag as lag:lo:hi:count (repeatable, max 2)")
    p.add_argument("--y", help="response grid lo:hi:count (density only)")
    p.add_argument("--u", type=float, help="quantile level in (0,1)")
    p.add_argument("--fixed", help="fixed lag values, e.g. 1=2.5,3=2.0")
    p.add_argument("--policy", default="fixAtValue",
                   choices=("fixAtValue", "uniformRandom"))
    p.add_argument("--data", help="series file (range for uniformRandom)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-draws", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("forecast", help="simulate forecast paths from a chain")
    p.add_argument("--chain", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--paths", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_forecast)

    p = sub.add_parser("evaluate", help="score chains against an oracle")
    p.add_argument("--chains", nargs="+", required=True)
    p.add_argument("--oracle", required=True, choices=KINDS)
    p.add_argument("--fit-length", type=int, required=True)
    p.add_argument("--val-size", type=int, default=1000)
    p.add_argument("--replicates", type=int, default=2000)
    p.add_argument("--max-lag", type=int, default=5)
    p.add_argument("--data-seed", type=int, default=0,
                   help="seed that generated the fitted series")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for replicate draws")
    p.add_argument("--max-draws", type=int, default=200)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("summarize", help="diagnostics and lag inclusion")
    p.add_argument("--chain", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_summarize)
    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "fit" and not args.replay:
        if not args.data or not args.config:
            parser.error("fit needs --data and --config (or --replay)")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"mixar: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()
