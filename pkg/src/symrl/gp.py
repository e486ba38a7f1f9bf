"""Multi-gene genetic programming over feature sets of a linear-in-parameters model.

A candidate is a tuple of ``n_f`` expression trees. Its coefficients are never
evolved: an :class:`Objective` fits them by least squares and reports the
fitness of the fitted model, which the engine minimizes.

Every offspring draws its random numbers from its own stream seeded by
``(seed, generation, index)``, so results do not depend on evaluation order or
on the number of worker threads.
"""
from __future__ import annotations

import functools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np

from .expr import (
    ExprNode,
    GrowParams,
    constants,
    crossover_expr,
    depth,
    evaluate,
    mutate_expr,
    random_expr,
)
from .model import SymbolicModel

# stream tags for np.random.default_rng([seed, tag, ...])
_INIT, _VARY = 0, 1


@dataclass(frozen=True)
class GPConfig:
    population_size: int = 500
    n_f: int = 20
    max_depth: int = 7
    init_depth: int = 3
    n_g: int = 1000
    tournament_size: int = 4
    p_crossover: float = 0.8
    p_mutation: float = 0.15
    p_reproduction: float = 0.05
    # share of crossovers that swap whole genes rather than subtrees
    p_gene_swap: float = 0.5
    elitism: int = 1
    const_range: tuple[float, float] = (-5.0, 5.0)
    const_sigma: float = 0.5
    p_function: float = 0.5
    p_variable: float = 0.7
    ridge: float = 1e-8
    solver: str = "cholesky"
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 1 or self.n_f < 1:
            raise ValueError("population_size and n_f must be >= 1")
        if self.n_g < 1:
            raise ValueError("n_g must be >= 1")
        if self.max_depth < 0 or not 0 <= self.init_depth:
            raise ValueError("depths must be >= 0")
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be >= 1")
        probs = (self.p_crossover, self.p_mutation, self.p_reproduction, self.p_gene_swap)
        if any(p < 0 or p > 1 for p in probs):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.p_crossover + self.p_mutation + self.p_reproduction > 1 + 1e-12:
            raise ValueError("operator probabilities must sum to at most 1")
        if not 0 <= self.elitism <= self.population_size:
            raise ValueError("elitism must be within [0, population_size]")
        lo, hi = self.const_range
        if not lo <= hi:
            raise ValueError("const_range must be a non-empty interval")

    @property
    def grow(self) -> GrowParams:
        return GrowParams(self.p_function, self.p_variable, tuple(self.const_range))


@dataclass
class Candidate:
    features: tuple[ExprNode, ...]
    intercept: float = 0.0
    beta: np.ndarray | None = None
    fitness: float = math.inf
    n_params: int = 0
    # objective the fit belongs to; a different key forces a refit
    fit_key: object = None

    def model(self) -> SymbolicModel:
        beta = np.zeros(len(self.features)) if self.beta is None else self.beta
        return SymbolicModel(self.features, beta, self.intercept)

    def copy(self) -> "Candidate":
        return replace(self)


class Objective(Protocol):
    """What the engine needs from a fitness function.

    ``points`` are the states at which feature values are required; ``fit``
    maps the ``(len(points), k)`` value matrix to ``(intercept, beta, fitness)``.
    ``key`` identifies the objective: fits made under another key are stale.
    """

    points: np.ndarray
    key: object

    def fit(self, values: np.ndarray) -> tuple[float, np.ndarray, float]: ...


class FeatureCache:
    """Feature values on a fixed set of points, keyed by the tree itself.

    Trees are immutable and hashable, so identical features shared by many
    candidates are evaluated once. ``max_bytes`` bounds the memory held.
    """

    def __init__(self, points: np.ndarray, max_bytes: float = 256e6):
        self.points = np.ascontiguousarray(points, dtype=float)
        self._store: dict[ExprNode, np.ndarray] = {}
        self._limit = max(int(max_bytes // max(self.points.shape[0] * 8, 1)), 0)

    def __len__(self) -> int:
        return len(self._store)

    def get(self, f: ExprNode) -> np.ndarray:
        v = self._store.get(f)
        if v is None:
            v = evaluate(f, self.points)
            if len(self._store) < self._limit:
                self._store[f] = v
        return v

    def matrix(self, features: Sequence[ExprNode]) -> np.ndarray:
        return np.column_stack([self.get(f) for f in features])

    def prune(self, population: Sequence[Candidate]) -> None:
        live = {f for c in population for f in c.features}
        self._store = {f: v for f, v in self._store.items() if f in live}


@functools.lru_cache(maxsize=200_000)
def _n_constants(f: ExprNode) -> int:
    return len(constants(f))


def _param_count(c: Candidate) -> int:
    n = int(c.intercept != 0.0)
    for f, b in zip(c.features, c.beta):
        if b != 0.0:
            n += 1 + _n_constants(f)
    return n


def evaluate_candidate(c: Candidate, objective: Objective, cache: FeatureCache) -> Candidate:
    """Fit ``c`` under ``objective`` in place (skipped if already current)."""
    if c.fit_key is objective.key:
        return c
    try:
        intercept, beta, fit = objective.fit(cache.matrix(c.features))
    except (FloatingPointError, np.linalg.LinAlgError, ValueError):
        intercept, beta, fit = 0.0, np.zeros(len(c.features)), math.inf
    if not math.isfinite(fit) or not math.isfinite(intercept) or not np.all(np.isfinite(beta)):
        intercept, beta, fit = 0.0, np.zeros(len(c.features)), math.inf
    c.intercept, c.beta, c.fitness = float(intercept), np.asarray(beta, dtype=float), float(fit)
    c.n_params = _param_count(c)
    c.fit_key = objective.key
    return c


def evaluate_population(
    population: Sequence[Candidate], objective: Objective, cache: FeatureCache, threads: int = 1
) -> None:
    todo = [c for c in population if c.fit_key is not objective.key]
    if threads > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda c: evaluate_candidate(c, objective, cache), todo))
    else:
        for c in todo:
            evaluate_candidate(c, objective, cache)


def init_population(config: GPConfig, n: int, stream: int = 0) -> list[Candidate]:
    """``population_size`` candidates with ``n_f`` grown features each.

    Different ``stream`` values give independent populations for one seed.
    """
    depth0 = min(config.init_depth, config.max_depth)
    pop = []
    for k in range(config.population_size):
        rng = np.random.default_rng([config.seed, _INIT, stream, k])
        feats = tuple(random_expr(rng, n, depth0, config.grow) for _ in range(config.n_f))
        pop.append(Candidate(feats))
    return pop


def _rank_key(c: Candidate, index: int):
    fit = c.fitness if math.isfinite(c.fitness) else math.inf
    return (fit, c.n_params, index)


def best_index(population: Sequence[Candidate]) -> int:
    """Lowest fitness; ties go to fewer parameters, then to the earlier candidate."""
    return min(range(len(population)), key=lambda i: _rank_key(population[i], i))


def best_of(population: Sequence[Candidate]) -> SymbolicModel:
    """Model of the best candidate; a zero-coefficient model if no fit is finite."""
    c = population[best_index(population)]
    if not math.isfinite(c.fitness):
        return SymbolicModel(c.features, np.zeros(len(c.features)), 0.0)
    return c.model()


def _tournament(population, rng, k) -> Candidate:
    picks = rng.integers(len(population), size=k)
    return population[min(picks, key=lambda i: _rank_key(population[i], int(i)))]


def _offspring(population, rng, config: GPConfig, n: int) -> Candidate:
    r = rng.random()
    p1 = _tournament(population, rng, config.tournament_size)
    if r < config.p_crossover:
        p2 = _tournament(population, rng, config.tournament_size)
        feats = list(p1.features)
        i = int(rng.integers(config.n_f))
        j = int(rng.integers(config.n_f))
        if rng.random() < config.p_gene_swap:
            feats[i] = p2.features[j]
        else:
            feats[i] = crossover_expr(feats[i], p2.features[j], rng, config.max_depth)
        return Candidate(tuple(feats))
    if r < config.p_crossover + config.p_mutation:
        feats = list(p1.features)
        i = int(rng.integers(config.n_f))
        feats[i] = mutate_expr(
            feats[i], rng, n, config.max_depth, config.grow, config.const_sigma
        )
        return Candidate(tuple(feats))
    return p1.copy()


@dataclass
class EvolveResult:
    best: SymbolicModel
    best_fitness: float
    population: list[Candidate]
    # best-so-far fitness after initial evaluation and after every generation
    history: list[float] = field(default_factory=list)


def evolve(
    population: Sequence[Candidate],
    objective: Objective,
    config: GPConfig,
    n: int | None = None,
    start_generation: int = 0,
    threads: int = 1,
    cache: FeatureCache | None = None,
) -> EvolveResult:
    """Run ``config.n_g`` generations against ``objective``.

    Candidates whose fit belongs to another objective are refitted first, which
    is how warm starts across solver iterations work. ``start_generation``
    offsets the random streams so consecutive calls never reuse them.
    """
    if not population:
        raise ValueError("population must not be empty")
    n = objective.points.shape[1] if n is None else n
    if cache is None or cache.points.shape != objective.points.shape or not np.array_equal(
        cache.points, objective.points
    ):
        cache = FeatureCache(objective.points)
    pop = [c.copy() for c in population]
    evaluate_population(pop, objective, cache, threads)
    b = best_index(pop)
    best = pop[b].copy()
    history = [best.fitness]
    n_elite = min(config.elitism, len(pop))
    for g in range(config.n_g):
        gen = start_generation + g
        order = sorted(range(len(pop)), key=lambda i: _rank_key(pop[i], i))
        children = [pop[i].copy() for i in order[:n_elite]]
        for k in range(n_elite, config.population_size):
            rng = np.random.default_rng([config.seed, _VARY, gen, k])
            children.append(_offspring(pop, rng, config, n))
        evaluate_population(children, objective, cache, threads)
        pop = children
        cache.prune(pop)
        b = best_index(pop)
        if _rank_key(pop[b], 0) < _rank_key(best, 0):
            best = pop[b].copy()
        history.append(best.fitness)
    model = best.model() if math.isfinite(best.fitness) else best_of([best])
    return EvolveResult(model, best.fitness, pop, history)


def check_population(population: Sequence[Candidate], n: int, max_depth: int) -> None:
    """Raise if any feature breaks the depth bound or uses an unknown variable."""
    from .expr import max_var_index

    for c in population:
        for f in c.features:
            if depth(f) > max_depth or max_var_index(f) >= n:
                raise AssertionError(f"invalid feature {f}")
