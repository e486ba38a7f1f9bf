"""Fuzzy V-iteration with triangular basis functions on a regular grid.

The triangular (hat) memberships multiplied across dimensions give multilinear
interpolation between grid centers, so ``V(x) = sum_j phi_j(x) theta_j`` and
``V(center_j) = theta_j``.
"""
from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .dataset import grid_axes
from .envs import EnvModel

log = logging.getLogger(__name__)


@dataclass
class FuzzyApproximator:
    """Grid of triangular basis functions and their values ``theta``.

    ``periods[i]`` is the period of a wrapped dimension (``None`` otherwise);
    wrapped dimensions have circular neighbourhoods, so the last center
    neighbours the first.
    """

    axes: list[np.ndarray]
    periods: list[float | None]
    theta: np.ndarray
    converged: bool = True
    history: list[float] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    @property
    def n_params(self) -> int:
        return int(np.prod(self.shape))

    def centers(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def __call__(self, X) -> np.ndarray:
        return baseline_predict(self, X)


WRAP_MODES = ("periodic", "closed")


@dataclass(frozen=True)
class GridSpec:
    """Regular grid of centers.

    ``wrap_mode`` decides how wrapped dimensions are gridded: ``"periodic"``
    spaces ``c`` centers over one period with circular neighbourhoods;
    ``"closed"`` places centers on both interval ends (so an angle grid contains
    0 and +-pi) and treats the dimension like an ordinary one.
    """

    bounds: tuple[tuple[float, float], ...]
    counts: tuple[int, ...]
    wrap: tuple[bool, ...]
    wrap_mode: str = "periodic"

    def __post_init__(self):
        if self.wrap_mode not in WRAP_MODES:
            raise ValueError(f"wrap_mode must be one of {WRAP_MODES}")

    @classmethod
    def for_env(cls, env: EnvModel, counts: Sequence[int], wrap_mode: str = "periodic") -> "GridSpec":
        return cls(tuple(env.state_bounds), tuple(counts), tuple(env.wrap), wrap_mode)

    @property
    def circular(self) -> tuple[bool, ...]:
        return tuple(w and self.wrap_mode == "periodic" for w in self.wrap)


def make_approximator(spec: GridSpec, theta=None) -> FuzzyApproximator:
    circ = spec.circular
    axes = grid_axes(spec.bounds, spec.counts, circ)
    periods = [hi - lo if w else None for (lo, hi), w in zip(spec.bounds, circ)]
    size = int(np.prod(spec.counts))
    theta = np.zeros(size) if theta is None else np.asarray(theta, dtype=float).reshape(size)
    return FuzzyApproximator(axes, periods, theta)


def _dim_weights(axis: np.ndarray, period, x: np.ndarray):
    """Lower/upper neighbour index and upper weight along one dimension."""
    c = len(axis)
    if c == 1:
        zeros = np.zeros(x.shape, dtype=int)
        return zeros, zeros, np.zeros(x.shape)
    if period is not None:
        h = period / c
        s = np.mod((x - axis[0]) / h, c)
        i0 = np.floor(s).astype(int)
        frac = s - i0
        i0 = np.minimum(i0, c - 1)
        return i0, (i0 + 1) % c, frac
    h = axis[1] - axis[0]
    s = (np.clip(x, axis[0], axis[-1]) - axis[0]) / h
    i0 = np.minimum(np.floor(s).astype(int), c - 2)
    return i0, i0 + 1, np.clip(s - i0, 0.0, 1.0)


def membership(approx: FuzzyApproximator, X) -> tuple[np.ndarray, np.ndarray]:
    """Flat center indices and weights, each ``(N, 2**n)``, for the rows of ``X``.

    Points outside a non-wrapped dimension are clipped to the grid edge.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[1]
    shape = approx.shape
    per_dim = [_dim_weights(approx.axes[d], approx.periods[d], X[:, d]) for d in range(n)]
    strides = np.cumprod((1,) + shape[::-1][:-1])[::-1]
    idx = np.zeros((X.shape[0], 2**n), dtype=np.int64)
    w = np.ones((X.shape[0], 2**n))
    for k, corner in enumerate(itertools.product((0, 1), repeat=n)):
        for d, bit in enumerate(corner):
            i0, i1, frac = per_dim[d]
            idx[:, k] += (i1 if bit else i0) * strides[d]
            w[:, k] *= frac if bit else 1.0 - frac
    return idx, w


def membership_matrix(approx: FuzzyApproximator, X) -> sp.csr_matrix:
    idx, w = membership(approx, X)
    rows = np.repeat(np.arange(idx.shape[0]), idx.shape[1])
    return sp.csr_matrix(
        (w.ravel(), (rows, idx.ravel())), shape=(idx.shape[0], approx.n_params)
    )


def baseline_predict(approx: FuzzyApproximator, X) -> np.ndarray:
    idx, w = membership(approx, X)
    return np.einsum("ij,ij->i", w, approx.theta[idx])


def fuzzy_v_iteration(
    env: EnvModel,
    spec: GridSpec,
    U: np.ndarray | None = None,
    gamma: float | None = None,
    tol: float = 1e-8,
    max_sweeps: int = 5000,
) -> FuzzyApproximator:
    """Jacobi sweeps ``theta_j <- max_u [rho(c_j, u) + gamma V(f(c_j, u))]``.

    Next states and rewards of all centers are computed once up front. The
    sup-norm change of every sweep is kept in ``history``.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    gamma = env.gamma if gamma is None else gamma
    approx = make_approximator(spec)
    C = approx.centers()
    U = env.action_array() if U is None else np.atleast_2d(np.asarray(U, dtype=float))
    n_c, n_u = C.shape[0], U.shape[0]
    xs = np.repeat(C[:, None, :], n_u, axis=1)
    us = np.broadcast_to(U[None], (n_c, n_u, U.shape[1]))
    x_next, r = env.step(xs, us)
    P = [membership_matrix(approx, x_next[:, j]) for j in range(n_u)]

    theta = np.zeros(n_c)
    history = []
    converged = False
    for _ in range(max_sweeps):
        q = np.stack([r[:, j] + gamma * (P[j] @ theta) for j in range(n_u)], axis=1)
        new = q.max(axis=1)
        delta = float(np.max(np.abs(new - theta)))
        theta = new
        history.append(delta)
        if delta <= tol:
            converged = True
            break
    if not converged:
        log.warning("fuzzy V-iteration stopped after %d sweeps (last change %.3g)", max_sweeps, delta)
    approx.theta = theta
    approx.converged = converged
    approx.history = history
    return approx


def sweep(approx: FuzzyApproximator, env: EnvModel, U=None, gamma=None) -> np.ndarray:
    """One Bellman sweep applied to ``approx.theta`` (used to check the fixed point)."""
    gamma = env.gamma if gamma is None else gamma
    C = approx.centers()
    U = env.action_array() if U is None else np.atleast_2d(U)
    best = np.full(C.shape[0], -np.inf)
    for u in U:
        x_next, r = env.step(C, u)
        best = np.maximum(best, r + gamma * baseline_predict(approx, x_next))
    return best


# -------------------------------------------------------------------- export


def write_baseline_csv(approx: FuzzyApproximator, path: str | Path) -> None:
    """Centers and theta, one row per center, preceded by the grid layout."""
    n = len(approx.axes)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for d, ax in enumerate(approx.axes):
            period = "" if approx.periods[d] is None else repr(float(approx.periods[d]))
            w.writerow(["# axis", d, period] + [repr(float(v)) for v in ax])
        w.writerow([f"c{d}" for d in range(n)] + ["theta"])
        for c, t in zip(approx.centers(), approx.theta):
            w.writerow([repr(float(v)) for v in c] + [repr(float(t))])


def read_baseline_csv(path: str | Path) -> FuzzyApproximator:
    axes, periods, theta = [], [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if row[0] == "# axis":
                periods.append(float(row[2]) if row[2] else None)
                axes.append(np.array([float(v) for v in row[3:]]))
            elif row[0].startswith("c"):
                continue
            else:
                theta.append(float(row[-1]))
    return FuzzyApproximator(axes, periods, np.array(theta))
