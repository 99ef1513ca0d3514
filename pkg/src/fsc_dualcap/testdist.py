"""Graph-based test distributions R(y | q) and their parameterised families."""

from collections import deque
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import DomainError, SchemaError
from .info import POSITIVE_TOL
from .qgraph import dec_qgraph, markov_node, markov_qgraph

ROW_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TestDist:
    __test__ = False  # not a pytest class

    table: np.ndarray

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        if t.ndim != 2:
            raise DomainError(f"test distribution must be a [node][output] table, got {t.shape}")
        if np.any(t < 0) or np.any(t > 1):
            raise DomainError("test distribution entries must lie in [0, 1]")
        sums = t.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1) > ROW_TOL)
        if len(bad):
            raise DomainError(f"row {bad[0]} sums to {sums[bad[0]]!r}, not 1")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def strict_positive(self):
        return bool(self.table.min() > 0)

    @property
    def node_count(self):
        return self.table.shape[0]

    @property
    def output_count(self):
        return self.table.shape[1]

    def to_dict(self):
        return {"table": self.table.tolist()}

    @classmethod
    def from_dict(cls, d, path="test_dist"):
        if not isinstance(d, dict) or "table" not in d:
            raise SchemaError(path, "expected an object with field 'table'")
        try:
            return cls(np.array(d["table"], dtype=float))
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{path}.table", str(exc)) from None


class Violation(NamedTuple):
    q: int
    s: int
    x: int
    y: int


def reachable_pairs(ch, g, starts=None):
    """(s, q) pairs reachable in the product chain from ``starts``.

    By default the starts are every state paired with the graph's initial node.
    """
    if starts is None:
        starts = [(s, g.q0) for s in range(ch.state_count)]
    seen = set(starts)
    queue = deque(starts)
    while queue:
        s, q = queue.popleft()
        for x in range(ch.input_count):
            for s2, y in np.argwhere(ch.kernel[s, x] > POSITIVE_TOL):
                pair = (int(s2), int(g.phi[q, y]))
                if pair not in seen:
                    seen.add(pair)
                    queue.append(pair)
    return seen


def validate_support(r, ch, g, starts=None):
    """List every reachable (q, s, x, y) where the channel can emit ``y`` but
    R(y | q) is zero. An empty list means the divergence rewards stay finite."""
    if r.table.shape != (g.node_count, ch.output_count) or g.output_count != ch.output_count:
        raise DomainError(
            f"test distribution shape {r.table.shape} does not fit "
            f"{g.node_count} nodes x {ch.output_count} outputs")
    py = ch.p_y
    out = []
    for s, q in sorted(reachable_pairs(ch, g, starts)):
        for x in range(ch.input_count):
            for y in range(ch.output_count):
                if py[s, x, y] > POSITIVE_TOL and r.table[q, y] <= POSITIVE_TOL:
                    out.append(Violation(q, s, x, y))
    return sorted(out)


def _check_open(name, v):
    if not 0.0 < v < 1.0:
        raise DomainError(f"{name} must lie in (0, 1), got {v!r}")


def _check_closed(name, v):
    if not 0.0 <= v <= 1.0:
        raise DomainError(f"{name} must lie in [0, 1], got {v!r}")


def binary_markov1(r00, r11):
    """First-order binary Markov table: R(0|0) = r00, R(1|1) = r11."""
    _check_closed("R(0|0)", r00)
    _check_closed("R(1|1)", r11)
    return TestDist([[r00, 1 - r00], [1 - r11, r11]])


def trapdoor_test_dist():
    return binary_markov1(2 / 3, 2 / 3)


def post_k(p):
    """K = 1 / (1 + (1-p) p^(p/(1-p))), with the limits at p = 0 and p = 1."""
    _check_closed("p", p)
    if p == 1.0:
        return 1.0
    return 1.0 / (1.0 + (1 - p) * p ** (p / (1 - p)))


def post_test_dist(p):
    k = post_k(p)
    return binary_markov1(k, k)


def dec_test_dist(eps, p):
    """Rows Q1, Q2, Q3; columns y = -1, 0, 1, ?."""
    _check_closed("eps", eps)
    _check_closed("p", p)
    e = 1 - eps
    return TestDist([
        [0.0, 0.5 * e, 0.5 * e, eps],
        [0.5 * e, 0.5 * e, 0.0, eps],
        [0.5 * p * e, (1 - p) * e, 0.5 * p * e, eps],
    ])


# (window, value of R(0|window)) for each parameter; the complement window
# gets 1 - value.
ISING_PAIRS = (
    ((0, 0, 0), (1, 1, 1)),
    ((0, 1, 0), (1, 0, 1)),
    ((1, 0, 0), (0, 1, 1)),
    ((1, 1, 0), (0, 0, 1)),
)


def ising_test_dist(a, b, c, d):
    """Third-order Markov table on binary outputs, windows oldest symbol first."""
    table = np.zeros((8, 2))
    for name, v, (w, wc) in zip("abcd", (a, b, c, d), ISING_PAIRS):
        _check_open(name, v)
        table[markov_node(w, 2)] = (v, 1 - v)
        table[markov_node(wc, 2)] = (1 - v, v)
    return TestDist(table)


PARAM_CLAMP = 1e-4


@dataclass(frozen=True)
class Family:
    """A parameterised set of test distributions on a fixed Q-graph.

    ``build`` maps a parameter vector in the box ``[lower, upper]`` to a
    ``TestDist``.
    """

    name: str
    dim: int
    build: Callable
    lower: float = PARAM_CLAMP
    upper: float = 1 - PARAM_CLAMP
    center: Optional[tuple] = None

    def default(self):
        """Natural starting point: ``center`` if given, else the box midpoint."""
        if self.center is not None:
            return self.clamp(self.center)
        return np.full(self.dim, 0.5 * (self.lower + self.upper))

    def clamp(self, params):
        return np.clip(np.asarray(params, dtype=float), self.lower, self.upper)

    def __call__(self, params):
        return self.build(self.clamp(params))


def stick_breaking(v):
    """Map ``len(v)`` numbers in (0, 1) to a pmf of length ``len(v) + 1``."""
    out = np.empty(len(v) + 1)
    rest = 1.0
    for i, t in enumerate(v):
        out[i] = rest * t
        rest -= out[i]
    out[-1] = rest
    return out


def stick_breaking_inverse(pmf):
    pmf = np.asarray(pmf, dtype=float)
    v = np.empty(len(pmf) - 1)
    rest = 1.0
    for i in range(len(v)):
        v[i] = pmf[i] / rest if rest > 0 else 0.5
        rest -= pmf[i]
    return v


def full_family(node_count, output_count):
    m = output_count - 1

    def build(params):
        rows = [stick_breaking(params[q * m:(q + 1) * m]) for q in range(node_count)]
        return TestDist(np.clip(rows, 0.0, 1.0))

    uniform = stick_breaking_inverse(np.full(output_count, 1.0 / output_count))
    return Family("full", node_count * m, build, center=tuple(np.tile(uniform, node_count)))


def family_for(name, g):
    """Look up a named family for graph ``g``.

    ``full`` works on any graph. ``trapdoor`` (two parameters R(0|0), R(1|1))
    and ``post`` (one shared parameter) need the binary first-order Markov
    graph, ``ising`` the binary third-order one and ``dec`` the DEC graph.
    """
    if name == "full":
        return full_family(g.node_count, g.output_count)
    if name in ("trapdoor", "post"):
        if g != markov_qgraph(1, 2):
            raise DomainError(f"family {name!r} needs the binary first-order Markov graph")
        if name == "trapdoor":
            return Family(name, 2, lambda v: binary_markov1(v[0], v[1]))
        return Family(name, 1, lambda v: binary_markov1(v[0], v[0]))
    if name == "ising":
        if g != markov_qgraph(3, 2):
            raise DomainError("family 'ising' needs the binary third-order Markov graph")
        return Family(name, 4, lambda v: ising_test_dist(*v))
    if name == "dec":
        if g != dec_qgraph():
            raise DomainError("family 'dec' needs the DEC Q-graph")
        return Family(name, 2, lambda v: dec_test_dist(v[0], v[1]))
    raise DomainError(f"unknown family {name!r}")
