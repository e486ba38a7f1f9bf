"""Experiment configuration, multi-run campaigns, baseline runs and model evaluation."""
from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import json
import logging
import math
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .baseline import GridSpec, fuzzy_v_iteration, read_baseline_csv, write_baseline_csv
from .dataset import (
    TransitionDataset,
    build_dataset,
    read_dataset_csv,
    sample_state_grid,
    write_dataset_csv,
)
from .envs import PARAM_TYPES, REGISTRY, EnvModel, make_env
from .evaluation import SimSpec, evaluate, run_statistics, write_trajectory_csv
from .gp import GPConfig
from .model import SymbolicModel, count_parameters, load_model, save_model
from .solvers import IterationRecord, SolverConfig, run_solver

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ sections


@dataclass(frozen=True)
class EnvSection:
    name: str = "friction"
    params: dict = field(default_factory=dict)
    dt: float | None = None
    gamma: float = 0.95
    # None keeps the environment's own RK4 substep count
    substeps: int | None = None
    actions: list | None = None
    reward_power: float | None = None


@dataclass(frozen=True)
class DatasetSection:
    counts: tuple[int, ...] = (121,)
    # directory for cached dataset CSVs keyed by a hash of env + grid; None = no cache
    cache_dir: str | None = None


@dataclass(frozen=True)
class SimSection:
    T_sim: float = 1.0
    T_end: float = 0.01
    eps: tuple[float, ...] = (0.05,)
    # explicit initial states; if None they form a grid of ``init_counts``
    X_init: tuple[tuple[float, ...], ...] | None = None
    init_counts: tuple[int, ...] | None = (5,)


@dataclass(frozen=True)
class BaselineSection:
    counts: tuple[int, ...] = (121,)
    wrap_mode: str = "periodic"
    tol: float = 1e-8
    max_sweeps: int = 5000


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvSection = field(default_factory=EnvSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    solver: SolverConfig = field(default_factory=SolverConfig)
    sim: SimSection = field(default_factory=SimSection)
    baseline: BaselineSection = field(default_factory=BaselineSection)
    n_r: int = 30
    seed: int = 0
    out: str = "runs"

    def make_env(self) -> EnvModel:
        e = self.env
        overrides: dict[str, Any] = {"gamma": e.gamma}
        if e.substeps is not None:
            overrides["substeps"] = e.substeps
        if e.dt is not None:
            overrides["dt"] = e.dt
        if e.actions is not None:
            overrides["actions"] = tuple(tuple(float(v) for v in np.atleast_1d(a)) for a in e.actions)
        if e.reward_power is not None:
            overrides["reward_power"] = e.reward_power
        return make_env(e.name, e.params, **overrides)

    def make_sim(self, env: EnvModel | None = None) -> SimSpec:
        env = env or self.make_env()
        s = self.sim
        if s.X_init is not None:
            X = np.asarray(s.X_init, dtype=float)
        else:
            X = sample_state_grid(env.state_bounds, s.init_counts, env.wrap)
        return SimSpec(tuple(map(tuple, X.tolist())), s.T_sim, s.T_end, tuple(s.eps))

    def grid_states(self, env: EnvModel | None = None) -> np.ndarray:
        env = env or self.make_env()
        return sample_state_grid(env.state_bounds, self.dataset.counts, env.wrap)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))


# ------------------------------------------------------------------- presets

_PEND2_INIT = [
    (a1, 0.0, a2, 0.0)
    for a1 in (-math.pi, 0.0, math.pi)
    for a2 in (-math.pi, 0.0, math.pi)
    if (a1, a2) != (0.0, 0.0)
] + [
    (a1, 0.0, a2, 0.0) for a1 in (-math.pi / 2, math.pi / 2) for a2 in (-math.pi / 2, math.pi / 2)
] + [(math.pi / 2, 0.0, 0.0, 0.0)]

PRESETS: dict[str, dict] = {
    "friction": {
        "env": {"name": "friction"},
        "dataset": {"counts": [121]},
        "sim": {"T_sim": 1.0, "T_end": 0.01, "eps": [0.05], "init_counts": [5]},
        "baseline": {"counts": [121]},
    },
    "pend1": {
        "env": {"name": "pend1"},
        "dataset": {"counts": [31, 31]},
        "sim": {"T_sim": 5.0, "T_end": 2.0, "eps": [0.1, 1.0], "init_counts": [4, 4]},
        "baseline": {"counts": [31, 31]},
    },
    "pend2": {
        "env": {"name": "pend2"},
        "dataset": {"counts": [11, 11, 11, 11]},
        "sim": {
            "T_sim": 10.0,
            "T_end": 2.0,
            "eps": [0.1, 1.0, 0.1, 1.0],
            "X_init": [list(x) for x in _PEND2_INIT],
            "init_counts": None,
        },
        "baseline": {"counts": [11, 11, 11, 11], "wrap_mode": "closed"},
    },
    "magman": {
        "env": {"name": "magman"},
        "dataset": {"counts": [27, 27]},
        "sim": {"T_sim": 3.0, "T_end": 1.0, "eps": [0.001, 1.0], "init_counts": [14, 1]},
        "baseline": {"counts": [41, 41]},
    },
}


# ------------------------------------------------------------------- loading


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _tuplify(v):
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


_TUPLE_FIELDS = {"counts", "eps", "X_init", "init_counts", "const_range"}


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{path + '.' if path else ''}{unknown[0]}: unknown key")
    kwargs = {}
    for name, value in data.items():
        key = f"{path}.{name}" if path else name
        sub = _SECTIONS.get((cls, name))
        if sub is not None:
            kwargs[name] = _build(sub, value, key)
        elif name in _TUPLE_FIELDS and value is not None:
            kwargs[name] = _tuplify(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path or '<root>'}: {e}") from e


_SECTIONS = {
    (ExperimentConfig, "env"): EnvSection,
    (ExperimentConfig, "dataset"): DatasetSection,
    (ExperimentConfig, "solver"): SolverConfig,
    (ExperimentConfig, "sim"): SimSection,
    (ExperimentConfig, "baseline"): BaselineSection,
    (SolverConfig, "gp"): GPConfig,
}


def _validate(cfg: ExperimentConfig) -> None:
    def fail(key, msg):
        raise ConfigError(f"{key}: {msg}")

    if cfg.env.name not in REGISTRY:
        fail("env.name", f"unknown environment {cfg.env.name!r}; choose from {sorted(REGISTRY)}")
    if not 0.0 < cfg.env.gamma < 1.0:
        fail("env.gamma", f"must lie in (0, 1), got {cfg.env.gamma}")
    if cfg.solver.gamma is not None and cfg.solver.gamma != cfg.env.gamma:
        fail("solver.gamma", "must be null or equal env.gamma")
    ptype = PARAM_TYPES[cfg.env.name]
    names = {f.name for f in dataclasses.fields(ptype)}
    for k in cfg.env.params:
        if k not in names:
            fail(f"env.params.{k}", "unknown key")
    try:
        env = cfg.make_env()
    except (TypeError, ValueError) as e:
        fail("env", str(e))
    if cfg.env.dt is not None and cfg.env.dt <= 0:
        fail("env.dt", "must be > 0")
    if cfg.n_r < 1:
        fail("n_r", "must be >= 1")
    for key, counts in (("dataset.counts", cfg.dataset.counts), ("baseline.counts", cfg.baseline.counts)):
        if len(counts) != env.n or any(int(c) < 1 for c in counts):
            fail(key, f"need {env.n} positive counts")
    if len(cfg.sim.eps) != env.n or any(e <= 0 for e in cfg.sim.eps):
        fail("sim.eps", f"need {env.n} positive values")
    if cfg.sim.X_init is None:
        if cfg.sim.init_counts is None or len(cfg.sim.init_counts) != env.n:
            fail("sim.init_counts", f"need {env.n} counts when X_init is not given")
    elif any(len(x) != env.n for x in cfg.sim.X_init):
        fail("sim.X_init", f"every initial state needs {env.n} components")
    if cfg.sim.T_end > cfg.sim.T_sim or cfg.sim.T_sim < 0:
        fail("sim.T_end", "need 0 <= T_end <= T_sim")
    try:
        GridSpec.for_env(env, cfg.baseline.counts, cfg.baseline.wrap_mode)
    except ValueError as e:
        fail("baseline.wrap_mode", str(e))


def config_from_dict(data: dict, preset: str | None = None) -> ExperimentConfig:
    data = dict(data)
    file_preset = data.pop("preset", None)
    preset = preset or file_preset
    base: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        base = PRESETS[preset]
    cfg = _build(ExperimentConfig, _merge(base, data), "")
    _validate(cfg)
    return cfg


def load_config(path: str | Path | None = None, preset: str | None = None) -> ExperimentConfig:
    """JSON config file, optionally on top of a preset (``"preset"`` key or argument)."""
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    return config_from_dict(data, preset)


def preset_config(name: str, **changes) -> ExperimentConfig:
    return config_from_dict(changes, name)


def with_overrides(cfg: ExperimentConfig, assignments: dict[str, Any]) -> ExperimentConfig:
    """Apply ``{"solver.gp.n_g": 50, ...}`` style overrides and re-validate."""
    data = cfg.to_dict()
    for dotted, value in assignments.items():
        node = data
        parts = dotted.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"{dotted}: unknown key")
            node = node[p]
        node[parts[-1]] = value
    return config_from_dict(data)


# ------------------------------------------------------------------- dataset


def dataset_for(cfg: ExperimentConfig, env: EnvModel | None = None) -> TransitionDataset:
    """Build the training set, going through the CSV cache if one is configured."""
    env = env or cfg.make_env()
    cache = None
    if cfg.dataset.cache_dir:
        key = json.dumps({"env": asdict(cfg.env), "counts": list(cfg.dataset.counts)}, sort_keys=True)
        digest = hashlib.sha256(key.encode()).hexdigest()[:16]
        cache = Path(cfg.dataset.cache_dir) / f"dataset-{env.name}-{digest}.csv"
        if cache.exists():
            return read_dataset_csv(cache)
    D = build_dataset(env, cfg.grid_states(env))
    if cache is not None:
        cache.parent.mkdir(parents=True, exist_ok=True)
        write_dataset_csv(D, cache)
    return D


# ----------------------------------------------------------------- campaigns

METRIC_COLUMNS = ["run", "iteration", "BE", "R_gamma", "S", "params", "wall_s"]


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


class _MetricsWriter:
    """Appends one metrics row and one model file per iteration as they arrive."""

    def __init__(self, run_dir: Path, run: int):
        self.run = run
        self.dir = run_dir
        (run_dir / "models").mkdir(parents=True, exist_ok=True)
        self.path = run_dir / "metrics.csv"
        with open(self.path, "w", newline="") as fh:
            csv.writer(fh).writerow(METRIC_COLUMNS)

    def __call__(self, rec: IterationRecord) -> None:
        save_model(rec.model, self.dir / "models" / f"iter_{rec.iteration:03d}.json")
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow(
                [self.run, rec.iteration, _fmt(rec.BE), _fmt(rec.R_gamma), _fmt(rec.S), rec.n_params, f"{rec.wall_s:.3f}"]
            )


def read_metrics_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append(
            {
                "run": int(r["run"]),
                "iteration": int(r["iteration"]),
                "BE": float(r["BE"]),
                "R_gamma": float(r["R_gamma"]),
                "S": float(r["S"]),
                "params": int(r["params"]),
                "wall_s": float(r["wall_s"]),
            }
        )
    return out


def run_single(cfg: ExperimentConfig, run: int, D: TransitionDataset | None = None,
               out_dir: Path | None = None, threads: int = 1) -> list[IterationRecord]:
    """One solver run with seed ``cfg.seed + run``."""
    env = cfg.make_env()
    D = D if D is not None else dataset_for(cfg, env)
    sim = cfg.make_sim(env)
    solver = dataclasses.replace(cfg.solver, gp=dataclasses.replace(cfg.solver.gp, seed=cfg.seed + run))
    writer = None
    if out_dir is not None:
        writer = _MetricsWriter(out_dir / f"run_{run:03d}", run)
    records = run_solver(D, solver, env, sim, threads=threads, on_record=writer)
    if out_dir is not None and records:
        summary = run_statistics([records])
        for measure, idx in summary.winners[0].items():
            save_model(records[idx].model, out_dir / f"run_{run:03d}" / f"winner_{measure}.json")
    return records


SUMMARY_COLUMNS = ["method", "n_runs", "n_failed", "count_S100"] + [
    f"{m}_{s}" for m in ("R_gamma", "BE", "S") for s in ("median", "min", "max")
]


def write_summary_csv(path: Path, method: str, histories: list, n_failed: int) -> None:
    row: list[Any] = [method, len(histories), n_failed]
    if histories:
        s = run_statistics(histories)
        row.append(s.count_S100)
        for m in ("R_gamma", "BE", "S"):
            row += [_fmt(s.stats[m][k]) for k in ("median", "min", "max")]
    else:
        row += [0] + ["nan"] * 9
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        w.writerow(row)


@dataclass
class CampaignResult:
    out: Path
    histories: list[list[IterationRecord]]
    failures: dict[int, str]

    @property
    def ok(self) -> bool:
        return bool(self.histories)


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None, threads: int = 1) -> CampaignResult:
    """``n_r`` runs with seeds ``seed + r``; writes per-run output and ``summary.csv``.

    Runs execute concurrently on up to ``threads`` workers; each run evaluates
    its population serially so results do not depend on ``threads``.
    """
    out = Path(out if out is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1) + "\n")
    env = cfg.make_env()
    D = dataset_for(cfg, env)

    def one(run):
        try:
            return run, run_single(cfg, run, D, out), None
        except Exception as e:  # a failed run must not end the campaign
            log.error("run %d failed: %s", run, e)
            msg = traceback.format_exc()
            (out / f"run_{run:03d}").mkdir(parents=True, exist_ok=True)
            (out / f"run_{run:03d}" / "error.txt").write_text(msg)
            return run, None, msg

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(cfg.n_r)))
    else:
        results = [one(r) for r in range(cfg.n_r)]
    histories = [h for _, h, _ in results if h]
    failures = {r: msg for r, h, msg in results if not h}
    write_summary_csv(out / "summary.csv", cfg.solver.method, histories, len(failures))
    return CampaignResult(out, histories, failures)


# ------------------------------------------------------------------ baseline


def run_baseline(cfg: ExperimentConfig, out: str | Path | None = None) -> dict:
    """Fuzzy V-iteration plus BE/R_gamma/S under the configured protocol."""
    env = cfg.make_env()
    b = cfg.baseline
    t0 = time.perf_counter()
    approx = fuzzy_v_iteration(
        env, GridSpec.for_env(env, b.counts, b.wrap_mode), tol=b.tol, max_sweeps=b.max_sweeps
    )
    D = dataset_for(cfg, env)
    m = evaluate(approx, env, D, cfg.make_sim(env))
    result = {
        "BE": m.BE,
        "R_gamma": m.R_gamma,
        "S": m.S,
        "params": approx.n_params,
        "sweeps": len(approx.history),
        "converged": approx.converged,
        "wall_s": time.perf_counter() - t0,
        "approximator": approx,
    }
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        write_baseline_csv(approx, out / "baseline.csv")
        with open(out / "baseline_metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            keys = ["BE", "R_gamma", "S", "params", "sweeps", "converged", "wall_s"]
            w.writerow(keys)
            w.writerow([result[k] if k in ("params", "sweeps", "converged") else _fmt(result[k]) for k in keys])
    return result


# ---------------------------------------------------------------- evaluation


def load_vfunction(path: str | Path, env: EnvModel | None = None):
    """A symbolic model (``.json``) or a baseline table (``.csv``)."""
    path = Path(path)
    if path.suffix == ".csv":
        V = read_baseline_csv(path)
        if env is not None and len(V.axes) != env.n:
            raise ValueError(f"baseline has {len(V.axes)} dimensions, environment {env.name} has {env.n}")
        return V
    V = load_model(path)
    if env is not None and V.n_vars() > env.n:
        raise ValueError(
            f"model uses x{V.n_vars() - 1} but environment {env.name} has only {env.n} state variables"
        )
    return V


def write_surface_csv(V, env: EnvModel, counts, path: str | Path) -> None:
    X = sample_state_grid(env.state_bounds, counts, env.wrap)
    v = np.asarray(V(X), dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(env.n)] + ["V"])
        for x, val in zip(X, v):
            w.writerow([repr(float(c)) for c in x] + [repr(float(val))])


def evaluate_model(
    model_path: str | Path,
    cfg: ExperimentConfig,
    trajectories: str | Path | None = None,
    surface: str | Path | None = None,
    surface_counts=None,
) -> dict:
    env = cfg.make_env()
    V = load_vfunction(model_path, env)
    D = dataset_for(cfg, env)
    m, trajs = evaluate(V, env, D, cfg.make_sim(env), return_trajectories=True)
    params = count_parameters(V) if isinstance(V, SymbolicModel) else V.n_params
    if trajectories is not None:
        tdir = Path(trajectories)
        tdir.mkdir(parents=True, exist_ok=True)
        for s, traj in enumerate(trajs):
            write_trajectory_csv(traj, tdir / f"traj_{s:03d}.csv")
    if surface is not None:
        write_surface_csv(V, env, surface_counts or cfg.dataset.counts, surface)
    return {"BE": m.BE, "R_gamma": m.R_gamma, "S": m.S, "params": params}
