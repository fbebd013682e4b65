"""Expression trees for setpoint policies and the GP variation operators."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, Mapping, Tuple, Union

import numpy as np

OPS = ("+", "-", "*", "/")
VARIABLES = ("S", "T", "M", "P", "UA", "Q", "That", "Mhat")
LAGS = (0, 10, 20, 30, 40, 50)
PROTECT_EPS = 1e-6


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str
    lag: int = 0  # seconds into the past

    def __post_init__(self):
        if self.name not in VARIABLES:
            raise ValueError(f"unknown variable {self.name}")
        if self.lag not in LAGS:
            raise ValueError(f"illegal lag {self.lag}")


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"

    def __post_init__(self):
        if self.op not in OPS:
            raise ValueError(f"unknown operator {self.op}")


Expr = Union[Const, Var, Binary]


class UnboundVariable(KeyError):
    def __str__(self):
        return self.args[0]


def complexity(e: Expr) -> int:
    """Node count; a lagged variable is a single node."""
    if isinstance(e, Binary):
        return 1 + complexity(e.left) + complexity(e.right)
    return 1


def depth(e: Expr) -> int:
    if isinstance(e, Binary):
        return 1 + max(depth(e.left), depth(e.right))
    return 1


def variables(e: Expr) -> List[Tuple[str, int]]:
    """Distinct (name, lag) taps in first-appearance order."""
    seen: Dict[Tuple[str, int], None] = {}

    def walk(n):
        if isinstance(n, Var):
            seen.setdefault((n.name, n.lag), None)
        elif isinstance(n, Binary):
            walk(n.left)
            walk(n.right)
    walk(e)
    return list(seen)


def constants(e: Expr) -> List[float]:
    if isinstance(e, Const):
        return [e.value]
    if isinstance(e, Binary):
        return constants(e.left) + constants(e.right)
    return []


def protected_div(a, b):
    if np.ndim(a) == 0 and np.ndim(b) == 0:
        return 1.0 if abs(b) < PROTECT_EPS else a / b
    small = np.abs(b) < PROTECT_EPS
    return np.where(small, 1.0, a / np.where(small, 1.0, b))


def apply_op(op, a, b):
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    return protected_div(a, b)


def eval_expr(e: Expr, values: Mapping[Tuple[str, int], object]):
    """Evaluate with ``values[(name, lag)]`` (floats or equal-shape arrays)."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return values[(e.name, e.lag)]
        except KeyError:
            raise UnboundVariable(f"missing binding for {e.name} lag {e.lag}") from None
    with np.errstate(over="ignore", invalid="ignore"):
        return apply_op(e.op, eval_expr(e.left, values), eval_expr(e.right, values))


# ---------------------------------------------------------------------------
# random generation

@dataclass(frozen=True)
class TerminalSet:
    names: Tuple[str, ...] = VARIABLES
    lags: Tuple[int, ...] = LAGS
    const_range: Tuple[float, float] = (-2.0, 2.0)
    p_const: float = 0.3

    def sample(self, rng) -> Expr:
        if rng.random() < self.p_const:
            return Const(float(rng.uniform(*self.const_range)))
        return Var(self.names[rng.integers(len(self.names))], int(self.lags[rng.integers(len(self.lags))]))


def _full(rng, d, terms):
    if d <= 1:
        return terms.sample(rng)
    return Binary(OPS[rng.integers(4)], _full(rng, d - 1, terms), _full(rng, d - 1, terms))


def _grow(rng, d, terms, root=False):
    if d <= 1 or (not root and rng.random() < 0.5):
        return terms.sample(rng)
    return Binary(OPS[rng.integers(4)], _grow(rng, d - 1, terms), _grow(rng, d - 1, terms))


def random_tree(rng, depth_min: int = 2, depth_max: int = 6, terms: TerminalSet = TerminalSet()) -> Expr:
    """Ramped half-and-half: depth ~ U{depth_min..depth_max}, full or grow with equal odds."""
    if not 1 <= depth_min <= depth_max:
        raise ValueError("need 1 <= depth_min <= depth_max")
    d = int(rng.integers(depth_min, depth_max + 1))
    if rng.random() < 0.5:
        return _full(rng, d, terms)
    return _grow(rng, d, terms, root=True)


# ---------------------------------------------------------------------------
# structural edits

def iter_nodes(e: Expr, path: Tuple[int, ...] = ()) -> Iterator[Tuple[Tuple[int, ...], Expr]]:
    """Pre-order (path, subtree) pairs; a path is a tuple of 0/1 child choices."""
    yield path, e
    if isinstance(e, Binary):
        yield from iter_nodes(e.left, path + (0,))
        yield from iter_nodes(e.right, path + (1,))


def subtree(e: Expr, path) -> Expr:
    for step in path:
        e = e.left if step == 0 else e.right
    return e


def replace(e: Expr, path, new: Expr) -> Expr:
    if not path:
        return new
    if path[0] == 0:
        return Binary(e.op, replace(e.left, path[1:], new), e.right)
    return Binary(e.op, e.left, replace(e.right, path[1:], new))


def crossover(a: Expr, b: Expr, rng, max_depth: int = 17) -> Tuple[Expr, Expr]:
    """Swap uniformly chosen subtrees; an over-deep child falls back to its parent."""
    na = [p for p, _ in iter_nodes(a)]
    nb = [p for p, _ in iter_nodes(b)]
    pa = na[rng.integers(len(na))]
    pb = nb[rng.integers(len(nb))]
    c1 = replace(a, pa, subtree(b, pb))
    c2 = replace(b, pb, subtree(a, pa))
    if depth(c1) > max_depth:
        c1 = a
    if depth(c2) > max_depth:
        c2 = b
    return c1, c2


def mutate_constants(e: Expr, rng, sigma: float = 0.1) -> Expr:
    """Multiplicative Gaussian jitter z -> z + sigma*z*N(0, 1) on every constant."""
    if isinstance(e, Const):
        return Const(e.value + sigma * e.value * float(rng.standard_normal()))
    if isinstance(e, Binary):
        left = mutate_constants(e.left, rng, sigma)
        return Binary(e.op, left, mutate_constants(e.right, rng, sigma))
    return e


# ---------------------------------------------------------------------------
# automatic cancelation

def _is_const(e, v=None):
    return isinstance(e, Const) and (v is None or e.value == v)


def _simplify_node(e: Binary) -> Expr:
    l, r, op = e.left, e.right, e.op
    if _is_const(l) and _is_const(r):
        v = apply_op(op, l.value, r.value)
        if math.isfinite(v):
            return Const(float(v))
        return e
    if op == "+":
        if _is_const(r, 0.0):
            return l
        if _is_const(l, 0.0):
            return r
    elif op == "-":
        if _is_const(r, 0.0):
            return l
        if l == r:
            return Const(0.0)
    elif op == "*":
        if _is_const(r, 1.0):
            return l
        if _is_const(l, 1.0):
            return r
        if _is_const(r, 0.0) or _is_const(l, 0.0):
            return Const(0.0)
    elif op == "/":
        if _is_const(r, 1.0):
            return l
        if l == r:
            return Const(1.0)
    return e


def _cancel_once(e: Expr) -> Expr:
    if not isinstance(e, Binary):
        return e
    node = Binary(e.op, _cancel_once(e.left), _cancel_once(e.right))
    return _simplify_node(node)


def auto_cancel(e: Expr) -> Expr:
    """Algebraic clean-up to a fixed point; never increases the node count."""
    while True:
        nxt = _cancel_once(e)
        if nxt == e:
            return e
        e = nxt
