"""Expression trees over state variables, constants and the elementary function set.

Trees are immutable. Evaluation is vectorized: a tree is evaluated on a batch of
states at once, which is how the GP engine and the solvers use it.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np


def bent(x):
    """Bent identity, ``(sqrt(x**2 + 1) - 1) / 2 + x``."""
    return (np.sqrt(x * x + 1.0) - 1.0) / 2.0 + x


# name -> (arity, vectorized implementation)
FUNCTIONS: dict[str, tuple[int, Callable]] = {
    "add": (2, np.add),
    "sub": (2, np.subtract),
    "mul": (2, np.multiply),
    "sq": (1, np.square),
    "cube": (1, lambda a: a * a * a),
    "bent": (1, bent),
}

ARITY = {name: arity for name, (arity, _) in FUNCTIONS.items()}
_BY_ARITY: dict[int, tuple[str, ...]] = {}
for _name, _arity in ARITY.items():
    _BY_ARITY.setdefault(_arity, ())
    _BY_ARITY[_arity] += (_name,)


@dataclass(frozen=True)
class Var:
    index: int


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Func:
    name: str
    children: tuple

    def __post_init__(self):
        if self.name not in FUNCTIONS:
            raise ValueError(f"unknown function {self.name!r}")
        if len(self.children) != ARITY[self.name]:
            raise ValueError(
                f"{self.name} takes {ARITY[self.name]} argument(s), got {len(self.children)}"
            )

    def __hash__(self):
        # trees are used as cache keys; hashing recursively on every lookup is slow
        h = self.__dict__.get("_hash")
        if h is None:
            h = hash((self.name, self.children))
            object.__setattr__(self, "_hash", h)
        return h


ExprNode = Union[Var, Const, Func]


def depth(node: ExprNode) -> int:
    """Leaves have depth 0; a function node is one deeper than its deepest child."""
    if isinstance(node, Func):
        return 1 + max(depth(c) for c in node.children)
    return 0


def size(node: ExprNode) -> int:
    if isinstance(node, Func):
        return 1 + sum(size(c) for c in node.children)
    return 1


def max_var_index(node: ExprNode) -> int:
    """Largest variable index in the tree, -1 if there is none."""
    if isinstance(node, Var):
        return node.index
    if isinstance(node, Func):
        return max(max_var_index(c) for c in node.children)
    return -1


def constants(node: ExprNode) -> list[float]:
    if isinstance(node, Const):
        return [node.value]
    if isinstance(node, Func):
        out = []
        for c in node.children:
            out.extend(constants(c))
        return out
    return []


def _eval(node, cols, n_points):
    if isinstance(node, Var):
        return cols[node.index]
    if isinstance(node, Const):
        return np.full(n_points, node.value)
    _, fn = FUNCTIONS[node.name]
    return fn(*[_eval(c, cols, n_points) for c in node.children])


def evaluate(node: ExprNode, X: np.ndarray) -> np.ndarray:
    """Evaluate ``node`` on every row of ``X`` (shape ``(N, n)``).

    Overflow is not an error: the returned array simply contains inf/nan and
    callers must treat such candidates as invalid.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-D array of states")
    cols = [X[:, i] for i in range(X.shape[1])]
    with np.errstate(all="ignore"):
        out = _eval(node, cols, X.shape[0])
    return np.broadcast_to(out, (X.shape[0],)).astype(float, copy=False)


_SOURCE = {
    "add": "({} + {})",
    "sub": "({} - {})",
    "mul": "({} * {})",
    "sq": "_sq({})",
    "cube": "_cube({})",
    "bent": "_bent({})",
}


def to_source(node: ExprNode, var: str = "x") -> str:
    """Python source evaluating ``node`` on columns ``x[0], x[1], ...``."""
    if isinstance(node, Var):
        return f"{var}[{node.index}]"
    if isinstance(node, Const):
        return repr(float(node.value))
    return _SOURCE[node.name].format(*(to_source(c, var) for c in node.children))


_NAMESPACE = {"_sq": np.square, "_cube": FUNCTIONS["cube"][1], "_bent": bent}


def compile_sum(terms: Sequence[tuple[float, ExprNode]], offset: float = 0.0) -> Callable:
    """Vectorized ``offset + sum(c * node)`` as one generated function of ``X``.

    Equivalent to summing :func:`evaluate` results but without per-node Python
    dispatch, which dominates for small batches.
    """
    body = " + ".join(f"({float(c)!r}) * {to_source(f)}" for c, f in terms) or "0.0"
    src = f"def _f(x):\n    return {float(offset)!r} + {body}\n"
    ns = dict(_NAMESPACE)
    exec(compile(src, "<symrl-model>", "exec"), ns)
    fn = ns["_f"]

    def run(X):
        X = np.asarray(X, dtype=float)
        cols = [X[:, i] for i in range(X.shape[1])]
        with np.errstate(all="ignore"):
            out = fn(cols)
        return np.broadcast_to(out, (X.shape[0],)).astype(float)

    return run


def eval_expr(node: ExprNode, x: Sequence[float]) -> float:
    """Evaluate at a single state; returns a Python float (possibly non-finite)."""
    return float(evaluate(node, np.asarray(x, dtype=float).reshape(1, -1))[0])


# ---------------------------------------------------------------- generation


@dataclass(frozen=True)
class GrowParams:
    """Probabilities used by grow-style generation.

    At an interior position a function node is drawn with ``p_function``;
    otherwise a leaf, which is a variable with ``p_variable`` and a constant
    drawn uniformly from ``const_range`` otherwise.
    """

    p_function: float = 0.5
    p_variable: float = 0.7
    const_range: tuple[float, float] = (-5.0, 5.0)


_FUNC_NAMES = tuple(FUNCTIONS)


def random_leaf(rng: np.random.Generator, n: int, params: GrowParams) -> ExprNode:
    if rng.random() < params.p_variable:
        return Var(int(rng.integers(n)))
    lo, hi = params.const_range
    return Const(float(rng.uniform(lo, hi)))


def random_expr(
    rng: np.random.Generator,
    n: int,
    max_depth: int,
    params: GrowParams = GrowParams(),
) -> ExprNode:
    """Grow a random tree of depth at most ``max_depth`` over ``n`` variables."""
    if max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    if max_depth == 0 or rng.random() >= params.p_function:
        return random_leaf(rng, n, params)
    name = _FUNC_NAMES[int(rng.integers(len(_FUNC_NAMES)))]
    children = tuple(random_expr(rng, n, max_depth - 1, params) for _ in range(ARITY[name]))
    return Func(name, children)


# ------------------------------------------------------------ tree surgery


def nodes(node: ExprNode, path: tuple = (), level: int = 0):
    """Yield ``(path, subtree, level)`` in preorder; the root has level 0."""
    yield path, node, level
    if isinstance(node, Func):
        for i, c in enumerate(node.children):
            yield from nodes(c, path + (i,), level + 1)


def replace_at(node: ExprNode, path: tuple, new: ExprNode) -> ExprNode:
    if not path:
        return new
    i = path[0]
    children = list(node.children)
    children[i] = replace_at(children[i], path[1:], new)
    return Func(node.name, tuple(children))


MUTATIONS = ("subtree", "constant", "function")


def mutate_expr(
    node: ExprNode,
    rng: np.random.Generator,
    n: int,
    max_depth: int,
    params: GrowParams = GrowParams(),
    const_sigma: float = 0.5,
    kind: str | None = None,
) -> ExprNode:
    """Return a mutated copy of ``node``; the input tree is left untouched.

    ``kind`` forces one of ``MUTATIONS``; by default one is drawn uniformly.
    Constant perturbation and function swap fall back to subtree replacement
    on trees that have no constant / no function node.
    """
    if kind is None:
        kind = MUTATIONS[int(rng.integers(len(MUTATIONS)))]
    if kind not in MUTATIONS:
        raise ValueError(f"unknown mutation {kind!r}")
    all_nodes = list(nodes(node))

    if kind == "constant":
        consts = [(p, s) for p, s, _ in all_nodes if isinstance(s, Const)]
        if consts:
            path, leaf = consts[int(rng.integers(len(consts)))]
            return replace_at(node, path, Const(leaf.value + float(rng.normal(0.0, const_sigma))))
        kind = "subtree"

    if kind == "function":
        funcs = [(p, s) for p, s, _ in all_nodes if isinstance(s, Func)]
        if funcs:
            path, f = funcs[int(rng.integers(len(funcs)))]
            options = [name for name in _BY_ARITY[ARITY[f.name]] if name != f.name]
            name = options[int(rng.integers(len(options)))]
            return replace_at(node, path, Func(name, f.children))
        kind = "subtree"

    path, _, level = all_nodes[int(rng.integers(len(all_nodes)))]
    return replace_at(node, path, random_expr(rng, n, max_depth - level, params))


def crossover_expr(
    a: ExprNode, b: ExprNode, rng: np.random.Generator, max_depth: int
) -> ExprNode:
    """Subtree crossover: a copy of ``a`` with one subtree replaced by one from ``b``.

    The donor subtree is chosen among those that keep the result within
    ``max_depth``; leaves always qualify, so a donor always exists.
    """
    path, _, level = list(nodes(a))[int(rng.integers(size(a)))]
    room = max_depth - level
    donors = [s for _, s, _ in nodes(b) if depth(s) <= room]
    return replace_at(a, path, donors[int(rng.integers(len(donors)))])


# ----------------------------------------------------------- serialization

def format_float(v: float) -> str:
    """17 significant digits: round-trips every double exactly."""
    return format(v, ".17g")


def serialize_expr(node: ExprNode) -> str:
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Const):
        return format_float(node.value)
    return "(" + " ".join([node.name] + [serialize_expr(c) for c in node.children]) + ")"


class ParseError(ValueError):
    """Malformed s-expression; carries the character offset of the problem."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


_TOKEN = re.compile(r"\s*(?:(\()|(\))|([^\s()]+))")
_NUMBER = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?$")


def _tokenize(text: str):
    pos = 0
    tokens = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            break
        start = m.start(m.lastindex)
        tokens.append((m.group(m.lastindex), start))
        pos = m.end()
    return tokens


def parse_expr(text: str) -> ExprNode:
    """Parse the prefix s-expression form produced by :func:`serialize_expr`."""
    tokens = _tokenize(text)
    end = len(text)

    def parse(i):
        if i >= len(tokens):
            raise ParseError("expected expression, found end of input", end)
        tok, pos = tokens[i]
        if tok == "(":
            if i + 1 >= len(tokens):
                raise ParseError("expected function name, found end of input", end)
            name, npos = tokens[i + 1]
            if name not in FUNCTIONS:
                raise ParseError(f"expected function name, found {name!r}", npos)
            children = []
            j = i + 2
            while j < len(tokens) and tokens[j][0] != ")":
                child, j = parse(j)
                children.append(child)
            if j >= len(tokens):
                raise ParseError("expected ')', found end of input", end)
            if len(children) != ARITY[name]:
                raise ParseError(
                    f"arity error: {name} expects {ARITY[name]} argument(s), got {len(children)}",
                    tokens[j][1],
                )
            return Func(name, tuple(children)), j + 1
        if tok == ")":
            raise ParseError("expected expression, found ')'", pos)
        if re.fullmatch(r"x\d+", tok):
            return Var(int(tok[1:])), i + 1
        if _NUMBER.match(tok) or tok.lower() in ("inf", "-inf", "nan"):
            return Const(float(tok)), i + 1
        raise ParseError(f"expected variable or number, found {tok!r}", pos)

    node, i = parse(0)
    if i != len(tokens):
        raise ParseError(f"unexpected trailing token {tokens[i][0]!r}", tokens[i][1])
    return node


def to_infix(node: ExprNode, names: Sequence[str] | None = None) -> str:
    """Human-readable infix rendering, used in reports only."""
    if isinstance(node, Var):
        return names[node.index] if names else f"x{node.index}"
    if isinstance(node, Const):
        return f"{node.value:.4g}"
    args = [to_infix(c, names) for c in node.children]
    if node.name == "add":
        return f"({args[0]} + {args[1]})"
    if node.name == "sub":
        return f"({args[0]} - {args[1]})"
    if node.name == "mul":
        return f"{args[0]}*{args[1]}"
    if node.name == "sq":
        return f"{args[0]}^2"
    if node.name == "cube":
        return f"{args[0]}^3"
    return f"bent({args[0]})"


__all__ = [
    "ARITY", "Const", "ExprNode", "FUNCTIONS", "Func", "GrowParams", "MUTATIONS",
    "ParseError", "Var", "bent", "compile_sum", "constants", "crossover_expr", "depth", "eval_expr",
    "evaluate", "format_float", "max_var_index", "mutate_expr", "nodes", "parse_expr",
    "random_expr", "random_leaf", "replace_at", "serialize_expr", "size", "to_infix", "to_source",
]
