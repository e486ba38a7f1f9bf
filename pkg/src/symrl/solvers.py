"""Symbolic solvers of the Bellman optimality equation.

Three ways of turning the equation into symbolic-regression problems:

* ``direct``: minimize the squared Bellman residual of the evolved V itself;
* ``svi`` (value iteration): regress V_l on ``max_j r_ij + gamma V_{l-1}(x_ij)``;
* ``spi`` (policy iteration): fix the greedy action of V_{l-1} and fit the
  policy's one-step Bellman residual.

Each solver returns one :class:`IterationRecord` per iteration (per checkpoint
for ``direct``), carrying the model and its BE, R_gamma and S.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dataset import TransitionDataset
from .envs import EnvModel
from .evaluation import SimSpec, evaluate, first_argmax, mean_squared_bellman_residual
from .gp import FeatureCache, GPConfig, evolve, init_population
from .model import SymbolicModel, count_parameters, fit_columns, usable_columns

log = logging.getLogger(__name__)

METHODS = ("direct", "svi", "spi")
DEFAULT_ITERATIONS = {"direct": 50, "svi": 50, "spi": 30}


# --------------------------------------------------------- targets / samples


def _q_values(D: TransitionDataset, V, gamma: float) -> np.ndarray:
    """``r_ij + gamma V(x_ij)``, non-finite entries replaced by -inf."""
    n = D.states.shape[1]
    with np.errstate(all="ignore"):
        v_next = np.asarray(V(D.next_states.reshape(-1, n)), dtype=float).reshape(D.n_x, D.n_u)
        q = D.rewards + gamma * v_next
    q = np.where(np.isfinite(q), q, -np.inf)
    bad = np.all(q == -np.inf, axis=1)
    if bad.any():
        i = int(np.argmax(bad))
        raise FloatingPointError(f"V is non-finite at every next state of x_{i} = {D.states[i]}")
    return q


def compute_svi_targets(D: TransitionDataset, V_prev, gamma: float | None = None) -> np.ndarray:
    """``t_i = max_j (r_ij + gamma V_prev(x_ij))``."""
    gamma = D.gamma if gamma is None else gamma
    return _q_values(D, V_prev, gamma).max(axis=1)


@dataclass(frozen=True)
class PolicySamples:
    """Greedy action index ``j*`` per state with its next state and reward."""

    states: np.ndarray
    j_star: np.ndarray
    next_states: np.ndarray
    rewards: np.ndarray


def select_spi_samples(D: TransitionDataset, V_prev, gamma: float | None = None) -> PolicySamples:
    gamma = D.gamma if gamma is None else gamma
    j = first_argmax(_q_values(D, V_prev, gamma))
    i = np.arange(D.n_x)
    return PolicySamples(D.states, j, D.next_states[i, j], D.rewards[i, j])


# ---------------------------------------------------------------- fitnesses


def _finite_or_inf(j: float) -> float:
    return j if math.isfinite(j) else math.inf


def svi_fitness(model, states, targets) -> float:
    """Mean squared deviation from the value-iteration targets."""
    with np.errstate(all="ignore"):
        v = np.asarray(model(np.atleast_2d(states)), dtype=float)
        return _finite_or_inf(float(np.mean((np.asarray(targets) - v) ** 2)))


def spi_fitness(model, samples: PolicySamples, gamma: float) -> float:
    """Mean squared one-step Bellman residual of the fixed greedy policy."""
    with np.errstate(all="ignore"):
        v = np.asarray(model(samples.states), dtype=float)
        v_star = np.asarray(model(samples.next_states), dtype=float)
        return _finite_or_inf(float(np.mean((samples.rewards - (v - gamma * v_star)) ** 2)))


def direct_fitness(model, D: TransitionDataset, gamma: float | None = None) -> float:
    """Mean squared Bellman residual, i.e. ``BE**2``."""
    return mean_squared_bellman_residual(model, D, gamma)


# --------------------------------------------------------------- objectives


class SVIObjective:
    def __init__(self, states, targets, ridge=1e-8, solver="cholesky"):
        self.points = np.asarray(states, dtype=float)
        self.targets = np.asarray(targets, dtype=float)
        self.ridge, self.solver = ridge, solver
        self.key = object()

    def fit(self, values):
        return fit_columns(values, self.targets, self.ridge, self.solver)


def _fit_policy_residual(Fx, Fs, r, gamma, ridge, solver):
    """Least squares of ``r`` on ``phi(x) - gamma phi(x*)``.

    ``V(x) - gamma V(x*)`` is linear in beta, with the model intercept entering
    as ``(1 - gamma) b0``; returns ``(b0, beta, mse)``.
    """
    with np.errstate(all="ignore"):
        Psi = Fx - gamma * Fs
    c, beta, mse = fit_columns(Psi, r, ridge, solver)
    return c / (1.0 - gamma), beta, mse


class SPIObjective:
    def __init__(self, samples: PolicySamples, gamma, ridge=1e-8, solver="cholesky"):
        self.samples = samples
        self.n_x = samples.states.shape[0]
        self.points = np.vstack([samples.states, samples.next_states])
        self.gamma, self.ridge, self.solver = gamma, ridge, solver
        self.key = object()

    def fit(self, values):
        return _fit_policy_residual(
            values[: self.n_x], values[self.n_x :], self.samples.rewards,
            self.gamma, self.ridge, self.solver,
        )


class DirectObjective:
    """Bellman residual minimization with coefficients from policy-residual fits.

    The residual is not linear in beta because of the max over actions. The
    fit alternates: fix the greedy action of the current coefficients (starting
    from the greedy-reward action), solve the resulting linear least-squares
    problem, re-select actions. The coefficients with the lowest true residual
    over ``rounds`` passes are kept.
    """

    def __init__(self, D: TransitionDataset, gamma, ridge=1e-8, solver="cholesky", rounds=3):
        self.D = D
        n = D.states.shape[1]
        self.points = np.vstack([D.states, D.next_states.reshape(-1, n)])
        self.gamma, self.ridge, self.solver, self.rounds = gamma, ridge, solver, rounds
        self.key = object()

    def fit(self, values):
        D, g = self.D, self.gamma
        n_x, n_u, k = D.n_x, D.n_u, values.shape[1]
        beta_full = np.zeros(k)
        ok = usable_columns(values)
        if not ok.any():
            b0 = float(np.mean(D.rewards.max(axis=1))) / (1.0 - g)
            v = np.full(n_x, b0)
            return b0, beta_full, float(np.mean((D.rewards.max(axis=1) + g * b0 - v) ** 2))
        A = values[:, ok]
        Fx, Fn = A[:n_x], A[n_x:].reshape(n_x, n_u, -1)
        rows = np.arange(n_x)
        j = first_argmax(D.rewards)
        best = (math.inf, 0.0, None)
        for _ in range(max(self.rounds, 1)):
            b0, beta, _ = _fit_policy_residual(
                Fx, Fn[rows, j], D.rewards[rows, j], g, self.ridge, self.solver
            )
            vx = b0 + Fx @ beta
            q = D.rewards + g * (b0 + Fn @ beta)
            J = float(np.mean((q.max(axis=1) - vx) ** 2))
            if J < best[0]:
                best = (J, b0, beta)
            j_new = first_argmax(q)
            if np.array_equal(j_new, j):
                break
            j = j_new
        J, b0, beta = best
        if beta is None:
            return 0.0, beta_full, math.inf
        beta_full[ok] = beta
        return b0, beta_full, J


# ------------------------------------------------------------------ solvers


@dataclass(frozen=True)
class SolverConfig:
    method: str = "svi"
    n_i: int | None = None
    eps: float | None = None
    gamma: float | None = None
    warm_start: bool = True
    direct_rounds: int = 3
    gp: GPConfig = field(default_factory=GPConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.n_i is not None and self.n_i < 1:
            raise ValueError("n_i must be >= 1")
        if self.gamma is not None and not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")

    @property
    def iterations(self) -> int:
        return DEFAULT_ITERATIONS[self.method] if self.n_i is None else self.n_i


@dataclass
class IterationRecord:
    iteration: int
    model: SymbolicModel
    BE: float
    R_gamma: float
    S: float
    wall_s: float
    fitness: float
    n_params: int
    # best-so-far GP fitness per generation of this iteration's GP call
    fitness_history: list[float] = field(default_factory=list)


RecordCallback = Callable[[IterationRecord], None]


def _record(ell, model, D, env, sim, gamma, t0, res) -> IterationRecord:
    if env is not None and sim is not None:
        m = evaluate(model, env, D, sim, gamma)
        be, R, S = m.BE, m.R_gamma, m.S
    else:
        from .evaluation import bellman_error

        be, R, S = bellman_error(model, D, gamma), math.nan, math.nan
    return IterationRecord(
        iteration=ell,
        model=model,
        BE=be,
        R_gamma=R,
        S=S,
        wall_s=time.perf_counter() - t0,
        fitness=res.best_fitness,
        n_params=count_parameters(model),
        fitness_history=list(res.history),
    )


def _iterate(D, config, env, sim, threads, on_record, make_objective, cache):
    gp = config.gp
    gamma = D.gamma if config.gamma is None else config.gamma
    n = D.states.shape[1]
    pop = init_population(gp, n)
    V_prev = SymbolicModel.zero()
    v_prev = np.zeros(D.n_x)
    records = []
    for ell in range(1, config.iterations + 1):
        t0 = time.perf_counter()
        try:
            objective = make_objective(V_prev, gamma)
            if not config.warm_start and ell > 1:
                pop = init_population(gp, n, stream=ell - 1)
            res = evolve(pop, objective, gp, n, (ell - 1) * gp.n_g, threads, cache)
        except FloatingPointError as e:
            raise FloatingPointError(f"{config.method} iteration {ell}: {e}") from e
        rec = _record(ell, res.best, D, env, sim, gamma, t0, res)
        records.append(rec)
        log.info(
            "%s iter %d: J=%.4g BE=%.4g R=%.4f S=%.1f (%.1fs)",
            config.method, ell, rec.fitness, rec.BE, rec.R_gamma, rec.S, rec.wall_s,
        )
        if on_record is not None:
            on_record(rec)
        with np.errstate(all="ignore"):
            v = res.best(D.states)
        if config.eps is not None and np.max(np.abs(v - v_prev)) <= config.eps:
            break
        V_prev, v_prev, pop = res.best, v, res.population
    return records


def run_svi(
    D: TransitionDataset,
    config: SolverConfig,
    env: EnvModel | None = None,
    sim: SimSpec | None = None,
    threads: int = 1,
    on_record: RecordCallback | None = None,
) -> list[IterationRecord]:
    """Value iteration: V_0 = 0, then regress each V_l on targets built from V_{l-1}."""
    gp = config.gp
    # the regression points never change, so feature values survive iterations
    cache = FeatureCache(D.states)

    def make_objective(V_prev, gamma):
        return SVIObjective(D.states, compute_svi_targets(D, V_prev, gamma), gp.ridge, gp.solver)

    return _iterate(D, config, env, sim, threads, on_record, make_objective, cache)


def run_spi(
    D: TransitionDataset,
    config: SolverConfig,
    env: EnvModel | None = None,
    sim: SimSpec | None = None,
    threads: int = 1,
    on_record: RecordCallback | None = None,
) -> list[IterationRecord]:
    """Policy iteration: fix the greedy actions of V_{l-1}, fit that policy's V_l."""
    gp = config.gp

    def make_objective(V_prev, gamma):
        return SPIObjective(select_spi_samples(D, V_prev, gamma), gamma, gp.ridge, gp.solver)

    return _iterate(D, config, env, sim, threads, on_record, make_objective, None)


def run_direct(
    D: TransitionDataset,
    config: SolverConfig,
    env: EnvModel | None = None,
    sim: SimSpec | None = None,
    threads: int = 1,
    on_record: RecordCallback | None = None,
) -> list[IterationRecord]:
    """One GP run on the Bellman residual, checkpointed every ``n_g`` generations."""
    gp = config.gp
    gamma = D.gamma if config.gamma is None else config.gamma
    n = D.states.shape[1]
    objective = DirectObjective(D, gamma, gp.ridge, gp.solver, config.direct_rounds)
    cache = FeatureCache(objective.points)
    pop = init_population(gp, n)
    records = []
    for ell in range(1, config.iterations + 1):
        t0 = time.perf_counter()
        res = evolve(pop, objective, gp, n, (ell - 1) * gp.n_g, threads, cache)
        rec = _record(ell, res.best, D, env, sim, gamma, t0, res)
        records.append(rec)
        log.info("direct checkpoint %d: J=%.4g BE=%.4g R=%.4f S=%.1f", ell, rec.fitness, rec.BE, rec.R_gamma, rec.S)
        if on_record is not None:
            on_record(rec)
        pop = res.population
    return records


SOLVERS = {"svi": run_svi, "spi": run_spi, "direct": run_direct}


def run_solver(D, config: SolverConfig, env=None, sim=None, threads=1, on_record=None):
    return SOLVERS[config.method](D, config, env, sim, threads, on_record)
