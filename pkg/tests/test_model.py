import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from symrl.expr import Const, Func, Var, evaluate, random_expr
from symrl.model import (
    SymbolicModel,
    count_parameters,
    fit_coefficients,
    fit_columns,
    load_model,
    model_from_dict,
    model_to_dict,
    predict,
    save_model,
)

FIXTURES = Path(__file__).parent / "fixtures"


def F(name, *children):
    return Func(name, tuple(children))


def test_predict_examples():
    assert predict(SymbolicModel((Var(0),), [2.0], 0.0), [3.0]) == 6.0
    assert predict(SymbolicModel.zero(3), [1.0, 2.0]) == 0.0
    m = SymbolicModel((Var(0), F("sq", Var(0))), [1.0, 1.0], 0.0)
    assert predict(m, [2.0]) == 6.0


def test_predict_propagates_nonfinite():
    m = SymbolicModel((F("cube", F("cube", F("cube", Var(0)))),), [1.0], 0.0)
    assert not np.isfinite(predict(m, [1e200]))


def test_coefficient_count_must_match():
    with pytest.raises(ValueError):
        SymbolicModel((Var(0),), [1.0, 2.0])


# ------------------------------------------------------------------- fitting


def test_exact_recovery_of_linear_combination(rng):
    X = rng.uniform(-2, 2, size=(50, 2))
    feats = (F("mul", Var(0), Var(1)), F("bent", Var(0)))
    t = 2 * evaluate(feats[0], X) + 3 * evaluate(feats[1], X)
    model, mse = fit_coefficients(feats, X, t, ridge=0.0)
    assert np.max(np.abs(model.beta - [2.0, 3.0])) < 1e-9
    assert abs(model.intercept) < 1e-9
    assert mse < 1e-18


def test_constant_targets_fit_by_intercept(rng):
    X = rng.normal(size=(30, 1))
    model, mse = fit_coefficients((Var(0), F("sq", Var(0))), X, np.full(30, 4.2), ridge=0.0)
    assert model.intercept == pytest.approx(4.2, abs=1e-12)
    assert mse < 1e-24


def _normal_equations_oracle(Phi, t, ridge):
    # augmented design [1, Phi]; intercept unpenalized; solved by plain Gaussian elimination
    A = np.column_stack([np.ones(len(t)), Phi])
    G = A.T @ A
    G[1:, 1:] += ridge * np.eye(Phi.shape[1])
    rhs = A.T @ t
    n = len(rhs)
    M = np.column_stack([G, rhs]).astype(float)
    for c in range(n):
        p = c + int(np.argmax(np.abs(M[c:, c])))
        M[[c, p]] = M[[p, c]]
        M[c] /= M[c, c]
        for r in range(n):
            if r != c:
                M[r] -= M[r, c] * M[c]
    sol = M[:, -1]
    return sol[0], sol[1:]


@pytest.mark.parametrize("solver", ["lstsq", "cholesky"])
@pytest.mark.parametrize("ridge", [0.0, 1e-8, 1e-2])
def test_matches_normal_equations_oracle(rng, solver, ridge):
    Phi = rng.normal(size=(80, 6))
    t = rng.normal(size=80)
    b0, beta, _ = fit_columns(Phi, t, ridge, solver)
    o0, obeta = _normal_equations_oracle(Phi, t, ridge)
    assert np.max(np.abs(beta - obeta) / np.maximum(np.abs(obeta), 1e-300)) < 1e-8
    assert b0 == pytest.approx(o0, rel=1e-8)


def test_degenerate_columns_dropped(rng):
    x = rng.normal(size=40)
    Phi = np.column_stack([x, np.full(40, 3.0), np.full(40, np.inf), np.where(x > 0, np.nan, 1.0)])
    t = 2 * x + 1
    b0, beta, mse = fit_columns(Phi, t, 0.0)
    assert beta[1:].tolist() == [0.0, 0.0, 0.0]
    assert beta[0] == pytest.approx(2.0) and b0 == pytest.approx(1.0)


def test_all_columns_degenerate_gives_intercept_only():
    t = np.array([1.0, 2.0, 4.0])
    Phi = np.array([[np.nan, 5.0], [np.nan, 5.0], [np.nan, 5.0]])
    b0, beta, mse = fit_columns(Phi, t)
    assert b0 == pytest.approx(7 / 3) and not beta.any()
    assert mse == pytest.approx(np.var(t))


def test_underflowing_column_falls_back_to_finite_fit(rng):
    x = rng.normal(size=30)
    Phi = np.column_stack([x, 1e-170 * rng.normal(size=30)])
    t = 2 * x + 1
    with np.errstate(all="raise"):
        b0, beta, mse = fit_columns(Phi, t, solver="cholesky")
    assert np.all(np.isfinite(beta)) and np.isfinite(b0)
    assert beta[0] == pytest.approx(2.0) and mse < 1e-12


def test_duplicate_columns_handled_by_fast_path(rng):
    x = rng.normal(size=50)
    Phi = np.column_stack([x, x, x**2])
    t = 3 * x - x**2
    for solver in ("lstsq", "cholesky"):
        b0, beta, mse = fit_columns(Phi, t, 1e-8, solver)
        assert beta[0] + beta[1] == pytest.approx(3.0, abs=1e-6)
        assert mse < 1e-12


def test_invalid_inputs():
    with pytest.raises(ValueError):
        fit_columns(np.ones((3, 1)), np.ones(4))
    with pytest.raises(ValueError):
        fit_columns(np.ones((3, 1)), np.ones(3), ridge=-1.0)


def _objective(Phi, t, b0, beta, ridge):
    r = t - b0 - Phi @ beta
    return float(r @ r + ridge * beta @ beta)


@given(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 1e-8, 1e-3, 1.0]))
def test_least_squares_optimality(seed, ridge):
    rng = np.random.default_rng(seed)
    Phi = rng.normal(size=(30, 4))
    t = rng.normal(size=30)
    b0, beta, mse = fit_columns(Phi, t, ridge)
    base = _objective(Phi, t, b0, beta, ridge)
    for k in range(4):
        for d in (-1e-3, 1e-3):
            pert = beta.copy()
            pert[k] += d
            assert _objective(Phi, t, b0, pert, ridge) >= base - 1e-12 * max(base, 1.0)


@given(st.integers(0, 2**32 - 1))
def test_reported_mse_matches_direct_evaluation(seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-3, 3, size=(40, 2))
    feats = tuple(random_expr(rng, 2, 3) for _ in range(5))
    t = rng.normal(size=40)
    model, mse = fit_coefficients(feats, X, t)
    direct = float(np.mean((t - model(X)) ** 2))
    assert abs(direct - mse) < 1e-12 * max(1.0, direct)


@given(st.integers(0, 2**32 - 1), st.floats(1e-6, 10.0), st.floats(1.5, 100.0))
def test_ridge_shrinks_coefficients(seed, r1, factor):
    rng = np.random.default_rng(seed)
    Phi = rng.normal(size=(25, 5))
    t = rng.normal(size=25)
    _, b1, _ = fit_columns(Phi, t, r1)
    _, b2, _ = fit_columns(Phi, t, r1 * factor)
    assert np.linalg.norm(b2) <= np.linalg.norm(b1) + 1e-12


# ------------------------------------------------------------ parameter count


def test_count_parameters_examples():
    assert count_parameters(SymbolicModel.zero(4)) == 0
    m = SymbolicModel((F("add", Var(0), Const(1.0)), Var(1)), [2.0, 0.0], 0.0)
    assert count_parameters(m) == 2
    m = SymbolicModel((F("mul", Const(2.0), Var(0)),), [0.5], -1.0)
    assert count_parameters(m) == 3


def _printed_formula(x1, x2):
    s = np.sqrt
    A = 4.3e-2 * x2 - 3.5 * x1 + 11
    P = 10 * x2 - 12 * x1 + 47
    Z = 0.2 * x1 + 0.3 * x2 - 0.5
    H = 1.2 * x1 + 14 * x2 - 10
    G = 9.1e-2 * x2 - 2.9 * x1 + 0.5 * s((9.1e-2 * x2 - 2.9 * x1 + 8.3) ** 2 + 1) + 7.8
    return (
        1.7e-5 * P * A**3 - 7.1e-4 * x2 - 4.6 * x1 - 8.2e-6 * A**3 * Z**3
        - 9.8e-3 * (0.4 * x1 + 0.1 * x2 - 1.1) ** 6 + 11 * (0.1 * x1 - 1.5) ** 3
        + 11 * s((0.6 * x1 + 6.3e-2 * x2 - 1.7) ** 2 + 1)
        + 8.7e-6 * s(P**2 * A**6 + 1) + 0.3 * s((1.1 * x1 + 0.4 * x2 - 3.3) ** 2 + 1)
        + s(3.9e-3 * A**2 * Z**2 + 1) + 6.5e-5 * s(H**2 * G**2 + 1)
        - 5.5e-2 * A * Z - 1.7 * s((3.6 * x1 + 0.4 * x2 - 11) ** 2 + 1)
        - 2 * s((x1 - 3.1) ** 2 + 1) - 1.3e-4 * H * G + 23
    )


def test_formula_fixture_reproduces_printed_function(rng):
    model = load_model(FIXTURES / "pend1_formula.json")
    X = np.column_stack([rng.uniform(-np.pi, np.pi, 2000), rng.uniform(-30, 30, 2000)])
    ref = _printed_formula(X[:, 0], X[:, 1])
    assert np.max(np.abs(model(X) - ref) / np.maximum(1.0, np.abs(ref))) < 1e-9


# ---------------------------------------------------------------- model file


def test_model_file_round_trip(tmp_path, rng):
    feats = tuple(random_expr(rng, 2, 4) for _ in range(6))
    m = SymbolicModel(feats, rng.normal(size=6), float(rng.normal()))
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert back.features == m.features
    assert np.array_equal(back.beta, m.beta) and back.intercept == m.intercept
    d = json.loads((tmp_path / "m.json").read_text())
    assert set(d) == {"n_f", "intercept", "terms"} and d["n_f"] == 6
    assert all(set(t) == {"beta", "expr"} for t in d["terms"])


def test_model_file_n_f_mismatch_rejected():
    d = model_to_dict(SymbolicModel((Var(0),), [1.0]))
    d["n_f"] = 2
    with pytest.raises(ValueError):
        model_from_dict(d)
