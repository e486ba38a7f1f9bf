"""Linear-in-parameters symbolic models ``V(x) = b0 + sum_i beta_i * phi_i(x)``."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .expr import (
    ExprNode,
    compile_sum,
    constants,
    evaluate,
    format_float,
    max_var_index,
    parse_expr,
    serialize_expr,
    to_infix,
)

# Columns with entries beyond this are treated like non-finite ones: their
# squares would overflow the normal equations.
MAX_ABS = 1e100


@dataclass(frozen=True)
class SymbolicModel:
    features: tuple[ExprNode, ...]
    beta: np.ndarray
    intercept: float = 0.0

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float).reshape(-1)
        if beta.shape[0] != len(self.features):
            raise ValueError("one coefficient per feature required")
        beta.setflags(write=False)
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "intercept", float(self.intercept))

    @property
    def n_f(self) -> int:
        return len(self.features)

    @classmethod
    def zero(cls, n_f: int = 0) -> "SymbolicModel":
        from .expr import Const

        return cls(tuple(Const(0.0) for _ in range(n_f)), np.zeros(n_f), 0.0)

    def feature_values(self, X: np.ndarray) -> np.ndarray:
        """``(N, n_f)`` matrix of feature values; zero-coefficient features are skipped."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros((X.shape[0], self.n_f))
        for k, (f, b) in enumerate(zip(self.features, self.beta)):
            if b != 0.0:
                out[:, k] = evaluate(f, X)
        return out

    def __call__(self, X: np.ndarray) -> np.ndarray:
        fn = self.__dict__.get("_compiled")
        if fn is None:
            terms = [(float(b), f) for f, b in zip(self.features, self.beta) if b != 0.0]
            fn = compile_sum(terms, self.intercept)
            object.__setattr__(self, "_compiled", fn)
        return fn(np.atleast_2d(np.asarray(X, dtype=float)))

    def n_vars(self) -> int:
        return 1 + max((max_var_index(f) for f in self.features), default=-1)

    def to_infix(self, names: Sequence[str] | None = None) -> str:
        terms = [f"{self.intercept:.6g}"]
        terms += [f"{b:+.6g}*{to_infix(f, names)}" for f, b in zip(self.features, self.beta) if b != 0]
        return " ".join(terms)


def predict(model: SymbolicModel, x) -> float:
    """Model value at a single state."""
    return float(model(np.asarray(x, dtype=float).reshape(1, -1))[0])


def count_parameters(model: SymbolicModel) -> int:
    """Numeric constants the model actually uses.

    Nonzero coefficients, a nonzero intercept and every constant leaf of a
    feature whose coefficient is nonzero.
    """
    n = int(model.intercept != 0.0)
    for f, b in zip(model.features, model.beta):
        if b != 0.0:
            n += 1 + len(constants(f))
    return n


# ------------------------------------------------------------------- fitting


def usable_columns(Phi: np.ndarray) -> np.ndarray:
    """Mask of columns that are finite, bounded and not constant on the data."""
    with np.errstate(all="ignore"):
        finite = np.all(np.isfinite(Phi), axis=0)
        bounded = np.all(np.abs(Phi) < MAX_ABS, axis=0)
        ok = finite & bounded
        spread = np.zeros(Phi.shape[1])
        spread[ok] = np.ptp(Phi[:, ok], axis=0)
    return ok & (spread > 0)


def _solve_lstsq(Ac, tc, ridge):
    k = Ac.shape[1]
    if ridge > 0:
        A = np.vstack([Ac, np.sqrt(ridge) * np.eye(k)])
        b = np.concatenate([tc, np.zeros(k)])
    else:
        A, b = Ac, tc
    return np.linalg.lstsq(A, b, rcond=None)[0]


def _solve_cholesky(Ac, tc, ridge, max_cond=1e12):
    """Solve the ridge normal equations on unit-scaled columns.

    Returns ``None`` when the scaled Gram matrix is too ill-conditioned for the
    normal equations to be trusted.
    """
    scale = np.sqrt(np.einsum("ij,ij->j", Ac, Ac))
    # tiny spreads underflow to a zero norm; leave those to the SVD path
    if not np.all((scale > 0) & np.isfinite(scale)):
        return None
    As = Ac / scale
    G = As.T @ As
    G[np.diag_indices_from(G)] += ridge / scale**2
    try:
        c, low = sla.cho_factor(G, check_finite=False)
    except sla.LinAlgError:
        return None
    d = np.abs(np.diag(c))
    if d.min() == 0 or (d.max() / d.min()) ** 2 > max_cond:
        return None
    return sla.cho_solve((c, low), As.T @ tc, check_finite=False) / scale


def fit_columns(
    Phi: np.ndarray, targets: np.ndarray, ridge: float = 1e-8, solver: str = "lstsq"
) -> tuple[float, np.ndarray, float]:
    """Ridge least squares with an unpenalized intercept on a feature matrix.

    Returns ``(intercept, beta, mse)``; degenerate columns get a zero
    coefficient. ``solver="cholesky"`` tries the (faster) normal equations
    first, fitting exact duplicate columns once, and falls back to the SVD
    solve when they are ill-conditioned.
    """
    Phi = np.asarray(Phi, dtype=float)
    t = np.asarray(targets, dtype=float)
    if Phi.ndim != 2 or Phi.shape[0] != t.shape[0] or t.shape[0] < 1:
        raise ValueError("need a (N, k) feature matrix with N = len(targets) >= 1")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    beta = np.zeros(Phi.shape[1])
    t_mean = float(np.mean(t))
    ok = usable_columns(Phi)
    if not ok.any():
        return t_mean, beta, float(np.mean((t - t_mean) ** 2))
    A = Phi[:, ok]
    mu = A.mean(axis=0)
    Ac = A - mu
    tc = t - t_mean
    sol = None
    if solver == "cholesky":
        # exact duplicate columns (common after gene swaps) are fitted once
        cols = np.ascontiguousarray(Ac.T)
        seen: dict[bytes, int] = {}
        for k in range(cols.shape[0]):
            seen.setdefault(cols[k].tobytes(), k)
        first = np.fromiter(seen.values(), dtype=int)
        sub = _solve_cholesky(Ac[:, first], tc, ridge)
        if sub is not None:
            sol = np.zeros(Ac.shape[1])
            sol[first] = sub
    elif solver != "lstsq":
        raise ValueError(f"unknown solver {solver!r}")
    if sol is None:
        sol = _solve_lstsq(Ac, tc, ridge)
    beta[ok] = sol
    intercept = t_mean - float(mu @ sol)
    resid = tc - Ac @ sol
    return intercept, beta, float(np.mean(resid**2))


def fit_coefficients(
    features: Sequence[ExprNode],
    states: np.ndarray,
    targets: np.ndarray,
    ridge: float = 1e-8,
) -> tuple[SymbolicModel, float]:
    """Least-squares coefficients for fixed features; returns the model and its MSE."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    Phi = np.column_stack([evaluate(f, states) for f in features]) if features else np.empty((len(states), 0))
    intercept, beta, mse = fit_columns(Phi, targets, ridge)
    return SymbolicModel(tuple(features), beta, intercept), mse


# ----------------------------------------------------------------- model file


def model_to_dict(model: SymbolicModel) -> dict:
    return {
        "n_f": model.n_f,
        "intercept": format_float(model.intercept),
        "terms": [
            {"beta": format_float(float(b)), "expr": serialize_expr(f)}
            for f, b in zip(model.features, model.beta)
        ],
    }


def model_from_dict(d: dict) -> SymbolicModel:
    terms = d["terms"]
    if "n_f" in d and int(d["n_f"]) != len(terms):
        raise ValueError(f"n_f = {d['n_f']} but {len(terms)} terms given")
    return SymbolicModel(
        tuple(parse_expr(t["expr"]) for t in terms),
        np.array([float(t["beta"]) for t in terms]),
        float(d.get("intercept", 0.0)),
    )


def save_model(model: SymbolicModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def load_model(path: str | Path) -> SymbolicModel:
    return model_from_dict(json.loads(Path(path).read_text()))
