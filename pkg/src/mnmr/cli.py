"""Command-line interface: ``mnmr <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 fit failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .data import (
    DataError,
    Dataset,
    WindowSet,
    downsample,
    file_sha256,
    filter_pairs,
    ingest_highd,
    load_dataset,
    split,
    synth_generate,
    write_manifest,
    write_trajectories,
)
from .evaluation import NLL_CONVENTION, evaluate_model, export_interpretability, fit_model, point_forecasts, run_grid
from .linalg import NotPositiveDefiniteError
from .mixture import FitConfig, FitError, PriorConfig, load_model, save_model
from .windows import NonFiniteError, WindowSpec, ZeroVarianceError

log = logging.getLogger("mnmr")

EXIT_CONFIG, EXIT_DATA, EXIT_FIT = 2, 3, 4


class ConfigError(ValueError):
    pass


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="single source of randomness")
    p.add_argument("--config", type=Path, help="JSON file with option defaults and 'prior'/'fit' sections")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _fit_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--rel-tol", type=float, default=None)
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--flip-flop-iters", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None, help="Dirichlet concentration")
    p.add_argument("--shrink-gamma", type=float, default=None)
    p.add_argument("--stride", type=int, default=1, help="window stride for trajectory data")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="mnmr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    parser.subcommands = sub.choices

    p = sub.add_parser("ingest", parents=[common], help="HighD tracks -> canonical trajectory dataset")
    p.add_argument("--tracks", type=Path, nargs="+", required=True, help="XX_tracks.csv files")
    p.add_argument("--meta", type=Path, nargs="+", required=True, help="matching XX_tracksMeta.csv files")
    p.add_argument("--downsample", type=int, default=5)
    p.add_argument("--min-duration", type=float, default=50.0)
    p.add_argument("--train-fraction", type=float, default=0.75)

    p = sub.add_parser("synth", parents=[common], help="sample a ground-truth model and windows")
    p.add_argument("--K", type=int, default=3)
    p.add_argument("--T", type=int, default=5)
    p.add_argument("--dT", type=int, default=3)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--temporal-decay", type=float, default=None, help="multiply temporal correlations by rho^|lag|")
    p.add_argument("--unit-temporal-scale", action="store_true", help="no per-step scales in the temporal covariance")

    p = sub.add_parser("fit", parents=[common], help="fit a mixture model")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--K", type=int, default=5)
    p.add_argument("--T", type=int, default=None)
    p.add_argument("--dT", type=int, default=None)
    _fit_options(p)

    for name, help_ in (("predict", "write per-window predictions"), ("evaluate", "compute metrics")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--model", type=Path, required=True)
        p.add_argument("--data", type=Path, required=True)
        p.add_argument("--split", choices=["train", "test"], default="test")
        p.add_argument("--stride", type=int, default=1)

    p = sub.add_parser("grid", parents=[common], help="run the (T, dT, K) experiment grid")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--T-set", type=int, nargs="+", default=[1, 3, 5, 7, 9])
    p.add_argument("--dT-set", type=int, nargs="+", default=[1, 3, 5, 7, 9])
    p.add_argument("--K-set", type=int, nargs="+", default=[5, 10, 20, 40, 60])
    p.add_argument("--timing", action="store_true", help="record fit_seconds (makes output non-reproducible)")
    _fit_options(p)

    p = sub.add_parser("inspect", parents=[common], help="export interpretability files")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--pairs", nargs="+", default=None, help="pair ids (default: first two test pairs)")
    p.add_argument("--top-n", type=int, default=5)
    return parser


def _apply_config(args, parser) -> dict:
    if args.config is None:
        return {}
    try:
        cfg = json.loads(args.config.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    defaults = {a.dest: a.default for a in parser.subcommands[args.command]._actions}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest in ("prior", "fit"):
            continue
        if dest not in defaults:
            raise ConfigError(f"unknown config key {key!r} for command {args.command}")
        # command-line values win over the config file
        if getattr(args, dest) == defaults[dest]:
            setattr(args, dest, value)
    return cfg


def _prior(args, cfg) -> PriorConfig:
    d = dict(cfg.get("prior", {}))
    for key in ("alpha", "eta", "shrink_gamma"):
        if getattr(args, key, None) is not None:
            d[key] = getattr(args, key)
    try:
        return PriorConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad prior configuration: {exc}") from None


def _fit_config(args, cfg) -> FitConfig:
    d = dict(cfg.get("fit", {}))
    for f in fields(FitConfig):
        v = getattr(args, f.name, None)
        if v is not None and f.name != "seed":
            d[f.name] = v
    d["seed"] = args.seed
    try:
        return FitConfig(**d)
    except TypeError as exc:
        raise ConfigError(f"bad fit configuration: {exc}") from None


def _window_lengths(args, dataset):
    if isinstance(dataset, WindowSet):
        return args.T or dataset.spec.T, args.dT or dataset.spec.dT
    if args.T is None or args.dT is None:
        raise ConfigError("--T and --dT are required for trajectory datasets")
    return args.T, args.dT


def _spec_for(dataset, T, dT) -> WindowSpec:
    if isinstance(dataset, WindowSet):
        return WindowSpec(T=T, dT=dT, D_x=dataset.spec.D_x, D_y=dataset.spec.D_y,
                          step_seconds=dataset.spec.step_seconds)
    return WindowSpec(T=T, dT=dT, step_seconds=dataset._step())


def cmd_ingest(args, cfg):
    if len(args.tracks) != len(args.meta):
        raise ConfigError("--tracks and --meta must be given in matching numbers")
    pairs, reports = [], {}
    for tracks, meta in zip(args.tracks, args.meta):
        got, report = ingest_highd(tracks, meta)
        pairs.extend(got)
        reports[tracks.name] = {k: v for k, v in asdict(report).items() if k != "per_pair"}
    n_raw = len(pairs)
    pairs = filter_pairs([downsample(p, args.downsample) for p in pairs], args.min_duration)
    if len(pairs) < 2:
        raise DataError(f"only {len(pairs)} pairs survive the {args.min_duration} s filter")
    ds = split(pairs, args.train_fraction, args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    traj = args.out / "trajectories.csv"
    write_trajectories(ds.train + ds.test, traj)
    manifest = {
        "kind": "trajectories",
        "files": {"trajectories": traj.name},
        "checksums": {traj.name: file_sha256(traj)},
        "sources": [str(p.name) for p in args.tracks + args.meta],
        "seed": args.seed,
        "downsample_factor": args.downsample,
        "min_duration_s": args.min_duration,
        "train_fraction": args.train_fraction,
        "split_rounding": "ceil",
        "gap_convention": "positive bumper-to-bumper distance",
        "counts": {"pairs_raw": n_raw, "pairs_kept": len(pairs), "train": len(ds.train), "test": len(ds.test)},
        "ingest_reports": reports,
        "train_ids": [p.pair_id for p in ds.train],
        "test_ids": [p.pair_id for p in ds.test],
    }
    write_manifest(args.out / "manifest.json", manifest)
    print(f"{len(pairs)} pairs ({len(ds.train)} train / {len(ds.test)} test) -> {args.out}")


def cmd_synth(args, cfg):
    prior = _prior(args, cfg)
    spec = WindowSpec(T=args.T, dT=args.dT)
    synth_generate(spec, args.K, prior, args.n_train, args.n_test, args.seed, out_dir=args.out,
                   temporal_decay=args.temporal_decay, unit_temporal_scale=args.unit_temporal_scale)
    print(f"synthetic dataset K={args.K} T={args.T} dT={args.dT} -> {args.out}")


def cmd_fit(args, cfg):
    dataset = load_dataset(args.data)
    T, dT = _window_lengths(args, dataset)
    spec = _spec_for(dataset, T, dT)
    train, _ = dataset.windows(T, dT, args.stride)
    if len(train) < max(2, args.K):
        raise DataError(f"only {len(train)} training windows for K={args.K}")
    model, trace = fit_model(train, spec, args.K, _prior(args, cfg), _fit_config(args, cfg))
    args.out.mkdir(parents=True, exist_ok=True)
    save_model(model, args.out / "model.json")
    with open(args.out / "fit_trace.csv", "w", encoding="utf-8") as fh:
        fh.write("iteration,objective\n")
        for i, v in enumerate(trace):
            fh.write(f"{i},{v!r}\n")
    print(f"fitted K={args.K} on {len(train)} windows: objective {trace[-1]:.6f} "
          f"after {len(trace)} iterations (restart {model.fit_metadata.restart})")


def _model_and_windows(args):
    model = load_model(args.model)
    dataset = load_dataset(args.data)
    spec = model.window_spec
    train, test = dataset.windows(spec.T, spec.dT, args.stride)
    return model, dataset, spec, train, test


def cmd_predict(args, cfg):
    model, dataset, spec, train, test = _model_and_windows(args)
    windows = test if args.split == "test" else train
    index = dataset.window_index(spec.T, spec.dT, args.split, args.stride)
    mean, std, _, weights = point_forecasts(model, windows, spec)
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "predictions.jsonl", "w", encoding="utf-8") as fh:
        for (pid, t), mu, sd, w in zip(index, mean, std, weights):
            top = np.argsort(-w, kind="stable")[:3]
            rec = {"pair_id": pid, "t_predict": t, "forecast": mu.tolist(), "std": sd.tolist(),
                   "top_components": [[int(k), float(w[k])] for k in top]}
            fh.write(json.dumps(rec) + "\n")
    print(f"{len(windows)} predictions -> {args.out / 'predictions.jsonl'}")


def cmd_evaluate(args, cfg):
    model, _, spec, train, test = _model_and_windows(args)
    metrics = evaluate_model(model, train, test, spec)
    metrics.update({"T": spec.T, "dT": spec.dT, "K": model.K, "nll_convention": NLL_CONVENTION})
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "metrics.json").write_text(json.dumps(metrics, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"rmse={metrics['rmse']:.4f} mae={metrics['mae']:.4f} train_nll={metrics['train_nll']:.4f}")


def cmd_grid(args, cfg):
    dataset = load_dataset(args.data)
    args.out.mkdir(parents=True, exist_ok=True)
    result = run_grid(dataset, args.T_set, args.dT_set, args.K_set, _prior(args, cfg), _fit_config(args, cfg),
                      cache_dir=args.out / "cache", stride=args.stride)
    result.write_csv(args.out / "grid_results.csv", include_timing=args.timing)
    tables = [NLL_CONVENTION, ""] + [result.table(m) + "\n" for m in ("rmse", "mae", "train_nll")]
    (args.out / "grid_table.txt").write_text("\n".join(tables), encoding="utf-8")
    print(f"{len(result.reports)} grid cells ({result.n_fitted} fitted) -> {args.out}")


def cmd_inspect(args, cfg):
    model = load_model(args.model)
    dataset = load_dataset(args.data)
    if not isinstance(dataset, Dataset):
        raise DataError("inspect needs a trajectory dataset (pair time series)")
    pair_ids = args.pairs or [p.pair_id for p in dataset.test[:2]]
    try:
        summary = export_interpretability(model, dataset, pair_ids, args.out, args.top_n)
    except KeyError as exc:
        raise DataError(str(exc)) from None
    print(f"dominant components {summary['top_components']} -> {args.out}")


COMMANDS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "grid": cmd_grid,
    "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_config(args, parser)
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ZeroVarianceError, NonFiniteError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FitError, NotPositiveDefiniteError) as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    return 0


if __name__ == "__main__":
    sys.exit(main())
