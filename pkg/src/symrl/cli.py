"""Command-line entry point: ``symrl {run, baseline, evaluate, simulate, dataset}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .dataset import write_dataset_csv
from .evaluation import simulate, write_trajectory_csv
from .experiment import (
    PRESETS,
    ConfigError,
    dataset_for,
    evaluate_model,
    load_config,
    load_vfunction,
    run_baseline,
    run_experiment,
    with_overrides,
)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--preset", choices=sorted(PRESETS), help="built-in benchmark settings")
    p.add_argument("--seed", type=int, help="base seed (run r uses seed + r)")
    p.add_argument("--runs", type=int, help="number of runs n_r")
    p.add_argument("--out", help="output file or directory")
    p.add_argument("--threads", type=int, default=1, help="worker threads")
    p.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override a config entry, e.g. solver.gp.n_g=100 (repeatable)",
    )
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="symrl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="multi-run solver campaign")
    _common(p)

    p = sub.add_parser("baseline", help="fuzzy V-iteration baseline")
    _common(p)

    p = sub.add_parser("evaluate", help="BE, R_gamma, S and parameter count of a model file")
    _common(p)
    p.add_argument("model", help="model .json or baseline .csv")
    p.add_argument("--trajectories", metavar="DIR", help="write one trajectory CSV per initial state")
    p.add_argument("--surface", metavar="CSV", help="write V on a state grid")
    p.add_argument("--surface-counts", type=int, nargs="+", help="surface grid (default: dataset grid)")

    p = sub.add_parser("simulate", help="closed-loop trajectory of a model")
    _common(p)
    p.add_argument("model", help="model .json or baseline .csv")
    p.add_argument("--x0", type=float, nargs="+", help="initial state (default: every configured one)")
    p.add_argument("--t-sim", type=float, help="simulation time (default: config)")

    p = sub.add_parser("dataset", help="write the training transitions as CSV")
    _common(p)
    return parser


def _config(args):
    cfg = load_config(args.config, args.preset)
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected KEY=VALUE")
        k, v = item.split("=", 1)
        overrides[k.strip()] = _parse_value(v)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.runs is not None:
        overrides["n_r"] = args.runs
    if args.out is not None and args.command == "run":
        overrides["out"] = args.out
    return with_overrides(cfg, overrides) if overrides else cfg


def _print(d: dict) -> None:
    for k, v in d.items():
        print(f"{k}: {v}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = _config(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2

    if args.command == "run":
        res = run_experiment(cfg, threads=args.threads)
        print(f"{len(res.histories)} of {cfg.n_r} runs completed; summary in {res.out / 'summary.csv'}")
        return 0 if res.ok else 1

    if args.command == "baseline":
        out = args.out or str(Path(cfg.out) / "baseline")
        res = run_baseline(cfg, out)
        res.pop("approximator")
        _print(res)
        return 0

    if args.command == "evaluate":
        try:
            res = evaluate_model(
                args.model, cfg, args.trajectories, args.surface, args.surface_counts
            )
        except ValueError as e:
            print(f"error: {e}", file=sys.stderr)
            return 2
        _print(res)
        return 0

    if args.command == "simulate":
        env = cfg.make_env()
        try:
            V = load_vfunction(args.model, env)
        except ValueError as e:
            print(f"error: {e}", file=sys.stderr)
            return 2
        sim = cfg.make_sim(env)
        starts = [args.x0] if args.x0 else [list(x) for x in sim.X_init]
        T = sim.T_sim if args.t_sim is None else args.t_sim
        out = Path(args.out or "trajectories")
        for s, x0 in enumerate(starts):
            if len(x0) != env.n:
                print(f"error: --x0 needs {env.n} values", file=sys.stderr)
                return 2
            traj = simulate(env, V, np.asarray(x0, dtype=float), T)
            path = out if (args.x0 and out.suffix == ".csv") else out / f"traj_{s:03d}.csv"
            path.parent.mkdir(parents=True, exist_ok=True)
            write_trajectory_csv(traj, path)
            print(path)
        return 0

    if args.command == "dataset":
        D = dataset_for(cfg)
        out = Path(args.out or f"dataset-{D.env_name}.csv")
        out.parent.mkdir(parents=True, exist_ok=True)
        write_dataset_csv(D, out)
        print(f"{D.n_x} states x {D.n_u} actions -> {out} (sha256 {D.digest()[:16]})")
        return 0
    return 1


if __name__ == "__main__":
    sys.exit(main())
