import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from symrl.dataset import TransitionDataset, build_dataset, sample_state_grid
from symrl.envs import make_env
from symrl.evaluation import SimSpec, bellman_error, evaluate
from symrl.expr import Const, Func, Var, random_expr
from symrl.gp import GPConfig
from symrl.model import SymbolicModel
from symrl.solvers import (
    SolverConfig,
    compute_svi_targets,
    direct_fitness,
    run_direct,
    run_solver,
    run_spi,
    run_svi,
    select_spi_samples,
    spi_fitness,
    svi_fitness,
)

ENVS = ["friction", "pend1", "pend2", "magman"]


def _const(c):
    return lambda X: np.full(len(X), float(c))


def _toy():
    """3 states on a line, 2 actions; next states are grid states."""
    states = np.array([[0.0], [1.0], [2.0]])
    nxt = np.array([[1, 2], [2, 0], [2, 1]])
    rewards = np.array([[-1.0, -2.0], [-0.5, -3.0], [0.0, -1.0]])
    D = TransitionDataset(states, np.array([[0.0], [1.0]]), states[nxt], rewards, "toy", 0.9)
    return D, nxt


def _tabular_vstar(D, nxt, tol=1e-15):
    V = np.zeros(3)
    for _ in range(10_000):
        new = np.array([max(D.rewards[i, j] + D.gamma * V[nxt[i, j]] for j in range(2)) for i in range(3)])
        if np.max(np.abs(new - V)) < tol:
            return new
        V = new
    return V


def _lookup(values):
    return lambda X: np.interp(X[:, 0], [0.0, 1.0, 2.0], values)


def _random_model(rng, n, k=4):
    feats = tuple(random_expr(rng, n, 3) for _ in range(k))
    return SymbolicModel(feats, rng.normal(size=k) * 0.1, float(rng.normal()))


# ------------------------------------------------------------------ targets


def test_zero_model_targets_are_best_rewards():
    D, _ = _toy()
    assert compute_svi_targets(D, _const(0.0)).tolist() == [-1.0, -0.5, 0.0]
    t = compute_svi_targets(D, _const(3.0))
    assert np.allclose(t, np.array([-1.0, -0.5, 0.0]) + 0.9 * 3.0, atol=1e-15)


def test_targets_match_enumeration(rng):
    D, nxt = _toy()
    vals = rng.normal(size=3)
    t = compute_svi_targets(D, _lookup(vals))
    brute = [max(D.rewards[i, j] + 0.9 * vals[nxt[i, j]] for j in range(2)) for i in range(3)]
    assert np.array_equal(t, brute)
    s = select_spi_samples(D, _lookup(vals))
    brute_j = [int(np.argmax([D.rewards[i, j] + 0.9 * vals[nxt[i, j]] for j in range(2)])) for i in range(3)]
    assert s.j_star.tolist() == brute_j


def test_nonfinite_successor_is_never_chosen():
    D, _ = _toy()
    V = lambda X: np.where(X[:, 0] == 2.0, np.nan, 0.0)
    t = compute_svi_targets(D, V)
    # state 0 must avoid the action leading to x = 2
    assert t[0] == -1.0 + 0.0
    assert t[1] == -3.0


def test_all_nonfinite_successors_raise():
    D, _ = _toy()
    with pytest.raises(FloatingPointError):
        compute_svi_targets(D, lambda X: np.full(len(X), np.inf))


def test_tabular_optimum_is_fixed_point():
    D, nxt = _toy()
    v_star = _tabular_vstar(D, nxt)
    V = _lookup(v_star)
    assert direct_fitness(V, D) < 1e-12
    assert bellman_error(V, D) ** 2 < 1e-12
    assert np.max(np.abs(compute_svi_targets(D, V) - v_star)) < 1e-12


def test_ties_go_to_lowest_action():
    states = np.array([[0.0]])
    D = TransitionDataset(states, np.array([[0.0], [1.0], [2.0]]), np.zeros((1, 3, 1)),
                          np.array([[-1.0, 0.0, 0.0]]), "tie", 0.5)
    assert select_spi_samples(D, _const(0.0)).j_star.tolist() == [1]


@pytest.mark.parametrize("name", ENVS)
def test_live_targets_equal_dataset_targets(name, rng):
    cfg_env = make_env(name)
    lo = np.array([b[0] for b in cfg_env.state_bounds])
    hi = np.array([b[1] for b in cfg_env.state_bounds])
    X = rng.uniform(lo, hi, size=(100, cfg_env.n))
    V = _random_model(rng, cfg_env.n)
    D = build_dataset(cfg_env, X)
    t_data = compute_svi_targets(D, V)
    U = cfg_env.action_array()
    for i in range(100):
        q = []
        for u in U:
            x_next, r = cfg_env.step(X[i], u)
            v = float(V(x_next[None])[0])
            q.append(r + cfg_env.gamma * v if math.isfinite(v) else -math.inf)
        assert max(q) == t_data[i]


@given(st.integers(0, 2**32 - 1), st.floats(-1e3, 1e3))
@settings(max_examples=30)
def test_greedy_indices_invariant_under_constant_shift(seed, c):
    rng = np.random.default_rng(seed)
    D = build_dataset(make_env("friction"), rng.uniform(-10, 10, size=(20, 1)))
    w = rng.normal(size=1)
    base = lambda X: w[0] * X[:, 0] ** 2 * 0.01
    j0 = select_spi_samples(D, base).j_star
    j1 = select_spi_samples(D, lambda X: base(X) + c).j_star
    assert np.array_equal(j0, j1)


# ---------------------------------------------------------------- fitnesses


def test_fitness_examples():
    D, _ = _toy()
    assert svi_fitness(_const(0.0), D.states, np.full(3, 2.0)) == 4.0
    assert svi_fitness(_lookup([1.0, 2.0, 3.0]), D.states, np.array([1.0, 2.0, 3.0])) == 0.0
    s = select_spi_samples(D, _const(0.0))
    assert spi_fitness(_const(0.0), s, 0.9) == pytest.approx(np.mean(s.rewards**2), abs=1e-15)
    c = np.mean(s.rewards) / (1 - 0.9)
    assert spi_fitness(_const(c), s, 0.9) == pytest.approx(np.var(s.rewards), abs=1e-12)
    zero_direct = np.mean(D.rewards.max(axis=1) ** 2)
    assert direct_fitness(_const(0.0), D) == pytest.approx(zero_direct, abs=1e-15)


def test_nonfinite_model_gets_worst_fitness():
    D, _ = _toy()
    bad = lambda X: np.full(len(X), np.nan)
    assert svi_fitness(bad, D.states, np.zeros(3)) == math.inf
    assert direct_fitness(bad, D) == math.inf
    s = select_spi_samples(D, _const(0.0))
    assert spi_fitness(bad, s, 0.9) == math.inf


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25)
def test_fitnesses_match_direct_summation(seed):
    rng = np.random.default_rng(seed)
    env = make_env("pend1")
    X = np.column_stack([rng.uniform(-np.pi, np.pi, 15), rng.uniform(-30, 30, 15)])
    D = build_dataset(env, X)
    V = _random_model(rng, 2)
    g = D.gamma
    t = rng.normal(size=15)
    vx = [float(V(x[None])[0]) for x in X]
    oracle = sum((t[i] - vx[i]) ** 2 for i in range(15)) / 15
    got = svi_fitness(V, X, t)
    if math.isfinite(oracle):
        assert abs(got - oracle) <= 1e-12 * max(1.0, oracle)
    s = select_spi_samples(D, V) if all(map(math.isfinite, vx)) else None
    if s is not None:
        vs = [float(V(x[None])[0]) for x in s.next_states]
        oracle = sum((s.rewards[i] - (vx[i] - g * vs[i])) ** 2 for i in range(15)) / 15
        got = spi_fitness(V, s, g)
        if math.isfinite(oracle):
            assert abs(got - oracle) <= 1e-12 * max(1.0, oracle)
        q = [[D.rewards[i, j] + g * float(V(D.next_states[i, j][None])[0]) for j in range(D.n_u)] for i in range(15)]
        oracle = sum((max(q[i]) - vx[i]) ** 2 for i in range(15)) / 15
        got = direct_fitness(V, D)
        if math.isfinite(oracle):
            assert abs(got - oracle) <= 1e-12 * max(1.0, oracle)
            assert abs(bellman_error(V, D) ** 2 - got) <= 1e-12 * max(1.0, got)


# ------------------------------------------------------------------ solvers


def _small(method, n_i=2, n_g=3, seed=0, **kw):
    gp = GPConfig(population_size=20, n_f=3, n_g=n_g, seed=seed)
    return SolverConfig(method=method, n_i=n_i, gp=gp, **kw)


@pytest.fixture(scope="module")
def friction_setup():
    env = make_env("friction")
    D = build_dataset(env, sample_state_grid(env.state_bounds, [31]))
    sim = SimSpec(((1.0,), (-5.0,)), 0.05, 0.01, (0.05,))
    return env, D, sim


def test_default_iterations():
    assert SolverConfig().iterations == 50
    assert SolverConfig(method="spi").iterations == 30
    assert SolverConfig(method="direct").iterations == 50
    with pytest.raises(ValueError):
        SolverConfig(method="q")
    with pytest.raises(ValueError):
        SolverConfig(gamma=1.2)


def test_single_iteration_fits_greedy_rewards(friction_setup):
    env, D, sim = friction_setup
    rec = run_svi(D, _small("svi", n_i=1), env, sim)
    assert len(rec) == 1
    t = D.rewards.max(axis=1)
    assert rec[0].fitness == pytest.approx(svi_fitness(rec[0].model, D.states, t), rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("method", ["svi", "spi", "direct"])
def test_records_reproducible_and_consistent(friction_setup, method):
    env, D, sim = friction_setup
    a = run_solver(D, _small(method, n_i=3), env, sim)
    b = run_solver(D, _small(method, n_i=3), env, sim, threads=2)
    assert len(a) == 3
    assert [(r.BE, r.R_gamma, r.S, r.fitness) for r in a] == [(r.BE, r.R_gamma, r.S, r.fitness) for r in b]
    for r in a:
        m = evaluate(r.model, env, D, sim)
        assert (m.BE, m.R_gamma, m.S) == (r.BE, r.R_gamma, r.S)
        assert all(y <= x for x, y in zip(r.fitness_history, r.fitness_history[1:]))
        assert len(r.fitness_history) == 4


def test_direct_fitness_is_squared_be(friction_setup):
    env, D, sim = friction_setup
    for r in run_direct(D, _small("direct", n_i=2), env, sim):
        assert abs(r.fitness - r.BE**2) <= 1e-12 * max(1.0, r.fitness)


def test_direct_checkpoints_every_n_g(friction_setup):
    env, D, sim = friction_setup
    seen = []
    rec = run_direct(D, _small("direct", n_i=5, n_g=1), on_record=seen.append)
    assert [r.iteration for r in rec] == [1, 2, 3, 4, 5] and seen == rec
    assert all(math.isnan(r.R_gamma) for r in rec)


def test_early_stop():
    D, _ = _toy()
    rec = run_svi(D, _small("svi", n_i=40, eps=1e9))
    assert len(rec) == 1


def test_cold_start_differs_but_is_deterministic(friction_setup):
    _, D, _ = friction_setup
    a = run_svi(D, _small("svi", n_i=2, warm_start=False))
    b = run_svi(D, _small("svi", n_i=2, warm_start=False))
    assert [r.fitness for r in a] == [r.fitness for r in b]
