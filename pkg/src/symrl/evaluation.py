"""Performance measures for V-functions: Bellman error, discounted return, success rate.

A V-function is any callable mapping a batch of states ``(N, n)`` to values
``(N,)``; both :class:`~symrl.model.SymbolicModel` and
:class:`~symrl.baseline.FuzzyApproximator` qualify.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataset import TransitionDataset
from .envs import EnvModel

VFunction = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SimSpec:
    """Closed-loop evaluation protocol: initial states, horizon, goal box."""

    X_init: tuple[tuple[float, ...], ...]
    T_sim: float
    T_end: float
    eps: tuple[float, ...]

    def __post_init__(self):
        if self.T_end > self.T_sim:
            raise ValueError("T_end must not exceed T_sim")

    @property
    def n_s(self) -> int:
        return len(self.X_init)


@dataclass
class Trajectory:
    states: np.ndarray  # (K+1, n)
    inputs: np.ndarray  # (K, m)
    rewards: np.ndarray  # (K,)
    dt: float
    # reward of the greedy action in the last state; the return sums K+1 terms
    final_reward: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.states))


@dataclass(frozen=True)
class Metrics:
    BE: float
    R_gamma: float
    S: float


def _values(V: VFunction, X: np.ndarray) -> np.ndarray:
    shape = X.shape[:-1]
    with np.errstate(all="ignore"):
        return np.asarray(V(X.reshape(-1, X.shape[-1])), dtype=float).reshape(shape)


def action_values(V: VFunction, env: EnvModel, X: np.ndarray, gamma=None) -> np.ndarray:
    """``rho(x, u_j, f(x, u_j)) + gamma V(f(x, u_j))`` for every action, ``(B, n_u)``."""
    gamma = env.gamma if gamma is None else gamma
    X = np.atleast_2d(np.asarray(X, dtype=float))
    U = env.action_array()
    xs = np.repeat(X[:, None, :], env.n_u, axis=1)
    us = np.broadcast_to(U[None], (X.shape[0], env.n_u, env.m))
    x_next = env.transition(xs, us)
    q = env.reward(xs, us, x_next) + gamma * _values(V, x_next)
    return np.where(np.isfinite(q), q, -np.inf)


# action values within this many units in the last place of the row maximum
# count as tied: rounding noise, e.g. from adding a constant to V, is ignored
TIE_ULPS = 8


def first_argmax(q: np.ndarray, ulps: float = TIE_ULPS) -> np.ndarray:
    """Row-wise index of the lowest action whose value ties with the maximum."""
    q = np.asarray(q, dtype=float)
    best = q.max(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore"):
        tol = ulps * np.spacing(np.maximum(1.0, np.abs(best)))
        near = q >= best - tol
    return np.argmax(near, axis=-1)


def greedy_indices(V: VFunction, env: EnvModel, X: np.ndarray, gamma=None) -> np.ndarray:
    q = action_values(V, env, X, gamma)
    if np.any(np.all(q == -np.inf, axis=1)):
        raise FloatingPointError("V-function is non-finite at every successor state")
    return first_argmax(q)


def argmax_policy(V: VFunction, env: EnvModel, x, gamma=None) -> np.ndarray:
    """Greedy action in a single state ``x``."""
    j = greedy_indices(V, env, np.asarray(x, dtype=float).reshape(1, -1), gamma)[0]
    return env.action_array()[j]


def bellman_error(V: VFunction, D: TransitionDataset, gamma: float | None = None) -> float:
    """Root-mean-square Bellman residual over the training states.

    ``inf`` if V is non-finite at any training state or next state.
    """
    return float(np.sqrt(mean_squared_bellman_residual(V, D, gamma)))


def mean_squared_bellman_residual(V: VFunction, D: TransitionDataset, gamma: float | None = None) -> float:
    gamma = D.gamma if gamma is None else gamma
    v = _values(V, D.states)
    v_next = _values(V, D.next_states)
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(v_next))):
        return np.inf
    with np.errstate(all="ignore"):
        rhs = np.max(D.rewards + gamma * v_next, axis=1)
        msr = float(np.mean((rhs - v) ** 2))
    return msr if np.isfinite(msr) else np.inf


def simulate_batch(env: EnvModel, V: VFunction, X0, T_sim: float, gamma=None):
    """Closed-loop rollouts from every row of ``X0`` simultaneously."""
    X = np.atleast_2d(np.asarray(X0, dtype=float))
    K = int(round(T_sim / env.dt))
    U = env.action_array()
    states = np.empty((X.shape[0], K + 1, env.n))
    inputs = np.empty((X.shape[0], K, env.m))
    rewards = np.empty((X.shape[0], K))
    states[:, 0] = X
    for k in range(K):
        u = U[greedy_indices(V, env, X, gamma)]
        X_next = env.transition(X, u)
        inputs[:, k] = u
        rewards[:, k] = env.reward(X, u, X_next)
        states[:, k + 1] = X_next
        X = X_next
    u = U[greedy_indices(V, env, X, gamma)]
    final = env.reward(X, u, env.transition(X, u))
    return [
        Trajectory(states[s], inputs[s], rewards[s], env.dt, float(final[s]))
        for s in range(X.shape[0])
    ]


def simulate(env: EnvModel, V: VFunction, x0, T_sim: float, gamma=None) -> Trajectory:
    return simulate_batch(env, V, np.asarray(x0, dtype=float).reshape(1, -1), T_sim, gamma)[0]


def discounted_return(trajectories: Sequence[Trajectory], gamma: float) -> float:
    """Mean over trajectories of ``sum_{k=0..K} gamma**k r_{k+1}``."""
    totals = []
    for t in trajectories:
        r = np.append(t.rewards, t.final_reward)
        totals.append(float(np.sum(gamma ** np.arange(len(r)) * r)))
    return float(np.mean(totals))


def reached_goal(
    traj: Trajectory,
    goal: Sequence[float],
    eps: Sequence[float],
    T_end: float,
    wrap: Sequence[bool] | None = None,
) -> bool:
    """True if every sample of the final ``T_end`` seconds lies in the goal box."""
    K = len(traj.states) - 1
    k_first = int(np.ceil(K - T_end / traj.dt - 1e-9))
    window = traj.states[max(k_first, 0):]
    d = np.asarray(goal, dtype=float) - window
    if wrap is not None:
        for i, w in enumerate(wrap):
            if w:
                d[:, i] = np.mod(d[:, i] + np.pi, 2 * np.pi) - np.pi
    return bool(np.all(np.abs(d) <= np.asarray(eps, dtype=float)))


def success_rate(
    trajectories: Sequence[Trajectory],
    goal: Sequence[float],
    eps: Sequence[float],
    T_end: float,
    wrap: Sequence[bool] | None = None,
) -> float:
    hits = sum(reached_goal(t, goal, eps, T_end, wrap) for t in trajectories)
    return 100.0 * hits / len(trajectories)


def evaluate(
    V: VFunction,
    env: EnvModel,
    D: TransitionDataset,
    sim: SimSpec,
    gamma: float | None = None,
    return_trajectories: bool = False,
):
    """BE on the dataset plus R_gamma and S from closed-loop simulations."""
    gamma = env.gamma if gamma is None else gamma
    be = bellman_error(V, D, gamma)
    try:
        trajs = simulate_batch(env, V, np.asarray(sim.X_init, dtype=float), sim.T_sim, gamma)
    except FloatingPointError:
        m = Metrics(be, -np.inf, 0.0)
        return (m, []) if return_trajectories else m
    m = Metrics(
        BE=be,
        R_gamma=discounted_return(trajs, gamma),
        S=success_rate(trajs, env.goal, sim.eps, sim.T_end, env.wrap),
    )
    return (m, trajs) if return_trajectories else m


# ------------------------------------------------------------ run statistics


@dataclass
class RunSummary:
    """Per-measure statistics over the per-run winners."""

    n_runs: int
    best: dict[str, list[float]]
    winners: list[dict[str, int]]
    count_S100: int
    stats: dict[str, dict[str, float]] = field(default_factory=dict)


def run_statistics(histories: Sequence[Sequence]) -> RunSummary:
    """Winner selection across iterations, then median/min/max across runs.

    ``histories`` holds one list of iteration records per run; a record needs
    ``BE``, ``R_gamma`` and ``S`` attributes. The winner w.r.t. S and R_gamma is
    the maximum, w.r.t. BE the minimum; ties go to the earliest iteration.
    """
    if not histories:
        raise ValueError("need at least one run")
    best = {"S": [], "R_gamma": [], "BE": []}
    winners = []
    for hist in histories:
        S = np.array([h.S for h in hist], dtype=float)
        R = np.array([h.R_gamma for h in hist], dtype=float)
        B = np.array([h.BE for h in hist], dtype=float)
        R = np.where(np.isfinite(R), R, -np.inf)
        B = np.where(np.isfinite(B), B, np.inf)
        w = {"S": int(np.argmax(S)), "R_gamma": int(np.argmax(R)), "BE": int(np.argmin(B))}
        winners.append(w)
        best["S"].append(float(S[w["S"]]))
        best["R_gamma"].append(float(R[w["R_gamma"]]))
        best["BE"].append(float(B[w["BE"]]))
    stats = {
        k: {"median": float(np.median(v)), "min": float(np.min(v)), "max": float(np.max(v))}
        for k, v in best.items()
    }
    return RunSummary(
        n_runs=len(histories),
        best=best,
        winners=winners,
        count_S100=int(sum(s >= 100.0 for s in best["S"])),
        stats=stats,
    )


def write_trajectory_csv(traj: Trajectory, path: str | Path) -> None:
    """Columns ``t, x0.., u0.., r``; the last row has no input or reward."""
    n, m = traj.states.shape[1], traj.inputs.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(m)] + ["r"])
        for k, t in enumerate(traj.times):
            row = [repr(float(t))] + [repr(float(v)) for v in traj.states[k]]
            if k < len(traj.rewards):
                row += [repr(float(v)) for v in traj.inputs[k]] + [repr(float(traj.rewards[k]))]
            else:
                row += [""] * (m + 1)
            w.writerow(row)
