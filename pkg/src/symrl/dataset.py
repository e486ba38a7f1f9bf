"""Training data: a regular state grid, the action set and every transition from it."""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .envs import EnvModel


def grid_axes(
    bounds: Sequence[tuple[float, float]],
    counts: Sequence[int],
    wrap: Sequence[bool] | None = None,
) -> list[np.ndarray]:
    """Per-dimension coordinates of a regular grid.

    Ordinary dimensions include both endpoints. Wrapped dimensions are periodic
    with period ``hi - lo`` and exclude the upper endpoint, which is the same
    physical point as the lower one. A count of 1 pins the dimension to the
    middle of its interval.
    """
    wrap = wrap or [False] * len(bounds)
    if not (len(bounds) == len(counts) == len(wrap)):
        raise ValueError("bounds, counts and wrap must have equal length")
    axes = []
    for (lo, hi), c, w in zip(bounds, counts, wrap):
        if c < 1:
            raise ValueError("grid counts must be >= 1")
        if c == 1:
            axes.append(np.array([0.5 * (lo + hi)]))
        elif w:
            axes.append(lo + (hi - lo) * np.arange(c) / c)
        else:
            axes.append(np.linspace(lo, hi, c))
    return axes


def sample_state_grid(
    bounds: Sequence[tuple[float, float]],
    counts: Sequence[int],
    wrap: Sequence[bool] | None = None,
) -> np.ndarray:
    """Cartesian product of :func:`grid_axes`, first dimension varying slowest."""
    axes = grid_axes(bounds, counts, wrap)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass(frozen=True)
class TransitionDataset:
    """States ``x_i``, and for every action ``u_j`` the next state and reward.

    Shapes: ``states (n_x, n)``, ``actions (n_u, m)``,
    ``next_states (n_x, n_u, n)``, ``rewards (n_x, n_u)``.
    """

    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    rewards: np.ndarray
    env_name: str
    gamma: float

    @property
    def n_x(self) -> int:
        return self.states.shape[0]

    @property
    def n_u(self) -> int:
        return self.actions.shape[0]

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.states, self.actions, self.next_states, self.rewards):
            h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
        return h.hexdigest()


def _frozen(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


def build_dataset(env: EnvModel, X: np.ndarray, U: np.ndarray | None = None) -> TransitionDataset:
    """Apply every action in every state once; all transitions are kept."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    U = env.action_array() if U is None else np.atleast_2d(np.asarray(U, dtype=float))
    if U.shape[0] == 0:
        raise ValueError("action set is empty")
    env.check_input(U)
    n_x, n_u = X.shape[0], U.shape[0]
    xs = np.repeat(X[:, None, :], n_u, axis=1)
    us = np.broadcast_to(U[None, :, :], (n_x, n_u, U.shape[1]))
    x_next, r = env.step(xs, us)
    return TransitionDataset(
        states=_frozen(X),
        actions=_frozen(U),
        next_states=_frozen(x_next),
        rewards=_frozen(r),
        env_name=env.name,
        gamma=env.gamma,
    )


# ------------------------------------------------------------------ CSV cache


def write_dataset_csv(ds: TransitionDataset, path: str | Path) -> None:
    """One row per (i, j): ``i, j, x_i..., u_j..., x_ij..., r_ij``."""
    n, m = ds.states.shape[1], ds.actions.shape[1]
    header = (
        ["i", "j"]
        + [f"x{k}" for k in range(n)]
        + [f"u{k}" for k in range(m)]
        + [f"next_x{k}" for k in range(n)]
        + ["r"]
    )
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"# env={ds.env_name} gamma={ds.gamma!r}"])
        w.writerow(header)
        for i in range(ds.n_x):
            xi = [repr(float(v)) for v in ds.states[i]]
            for j in range(ds.n_u):
                w.writerow(
                    [i, j]
                    + xi
                    + [repr(float(v)) for v in ds.actions[j]]
                    + [repr(float(v)) for v in ds.next_states[i, j]]
                    + [repr(float(ds.rewards[i, j]))]
                )


def read_dataset_csv(path: str | Path) -> TransitionDataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    meta = dict(kv.split("=", 1) for kv in rows[0][0].lstrip("# ").split())
    header = rows[1]
    n = sum(1 for h in header if h.startswith("x"))
    m = sum(1 for h in header if h.startswith("u"))
    body = np.array([[float(v) for v in r] for r in rows[2:]])
    i_idx, j_idx = body[:, 0].astype(int), body[:, 1].astype(int)
    n_x, n_u = i_idx.max() + 1, j_idx.max() + 1
    states = np.empty((n_x, n))
    actions = np.empty((n_u, m))
    next_states = np.empty((n_x, n_u, n))
    rewards = np.empty((n_x, n_u))
    states[i_idx] = body[:, 2 : 2 + n]
    actions[j_idx] = body[:, 2 + n : 2 + n + m]
    next_states[i_idx, j_idx] = body[:, 2 + n + m : 2 + 2 * n + m]
    rewards[i_idx, j_idx] = body[:, -1]
    return TransitionDataset(
        _frozen(states), _frozen(actions), _frozen(next_states), _frozen(rewards),
        meta["env"], float(meta["gamma"]),
    )
