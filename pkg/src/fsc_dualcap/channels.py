"""Finite-state channels: representation, the four built-in channels, and
(joint) indecomposability checks.

The kernel is stored densely as ``kernel[s, x, s_next, y] = P(s_next, y | x, s)``.
All indices are 0-based.
"""

from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import DomainError, SchemaError
from .info import POSITIVE_TOL

STOCHASTIC_TOL = 1e-12
FACTOR_TOL = 1e-10
DEFAULT_NMAX_CAP = 10_000
DEFAULT_EXPLORE_BUDGET = 2_000_000


@dataclass(frozen=True, eq=False)
class Fsc:
    kernel: np.ndarray
    unifilar_table: Optional[np.ndarray] = None
    output_labels: Optional[tuple] = None
    name: str = ""
    _input_driven: bool = field(init=False, repr=False, default=False)

    def __post_init__(self):
        k = np.array(self.kernel, dtype=float)
        if k.ndim != 4 or min(k.shape) < 1:
            raise DomainError(f"kernel must be 4-d [s][x][s'][y], got shape {k.shape}")
        if k.shape[0] != k.shape[2]:
            raise DomainError("kernel state axes 0 and 2 differ in size")
        if np.any(k < 0) or np.any(k > 1 + STOCHASTIC_TOL):
            raise DomainError("kernel entries must lie in [0, 1]")
        sums = k.sum(axis=(2, 3))
        bad = np.argwhere(np.abs(sums - 1) > STOCHASTIC_TOL)
        if len(bad):
            s, x = bad[0]
            raise DomainError(f"kernel[{s}][{x}] sums to {sums[s, x]!r}, not 1")
        k.setflags(write=False)
        object.__setattr__(self, "kernel", k)

        table = self.unifilar_table
        if table is None:
            table = _derive_unifilar_table(k)
        else:
            table = np.array(table, dtype=int)
            n_s, n_x, _, n_y = k.shape
            if table.shape != (n_x, n_y, n_s):
                raise DomainError(f"unifilar table must have shape {(n_x, n_y, n_s)}")
            if np.any(table < 0) or np.any(table >= n_s):
                raise DomainError("unifilar table maps outside the state set")
            for s in range(n_s):
                for x in range(n_x):
                    for y in range(n_y):
                        off = np.delete(k[s, x, :, y], table[x, y, s])
                        if np.any(off > POSITIVE_TOL):
                            raise DomainError(
                                f"kernel has mass off f(x={x}, y={y}, s={s})")
        if table is not None:
            table.setflags(write=False)
        object.__setattr__(self, "unifilar_table", table)

        if self.output_labels is not None:
            labels = tuple(str(v) for v in self.output_labels)
            if len(labels) != k.shape[3]:
                raise DomainError("output_labels length differs from |Y|")
            object.__setattr__(self, "output_labels", labels)

        py = k.sum(axis=2)
        ps = k.sum(axis=3)
        outer = ps[:, :, :, None] * py[:, :, None, :]
        object.__setattr__(self, "_input_driven", bool(np.all(np.abs(outer - k) <= FACTOR_TOL)))

    @property
    def state_count(self):
        return self.kernel.shape[0]

    @property
    def input_count(self):
        return self.kernel.shape[1]

    @property
    def output_count(self):
        return self.kernel.shape[3]

    @property
    def p_y(self):
        """P(y | x, s) indexed ``[s, x, y]``."""
        return self.kernel.sum(axis=2)

    @property
    def p_next(self):
        """P(s' | x, s) indexed ``[s, x, s']``."""
        return self.kernel.sum(axis=3)

    @property
    def is_unifilar(self):
        return self.unifilar_table is not None

    @property
    def is_input_driven(self):
        return self._input_driven

    def f(self, x, y, s):
        if self.unifilar_table is None:
            raise DomainError("channel is not unifilar")
        return int(self.unifilar_table[x, y, s])

    def state_successors(self):
        """``succ[x][s]``: states reachable in one step from ``s`` under input ``x``."""
        ps = self.p_next
        return [[frozenset(np.flatnonzero(ps[s, x] > POSITIVE_TOL).tolist())
                 for s in range(self.state_count)] for x in range(self.input_count)]

    def to_dict(self):
        """Unifilar channels use the ``unifilar`` form so that the state map is
        kept exactly, including entries for outputs that cannot occur."""
        d = {
            "states": self.state_count,
            "inputs": self.input_count,
            "outputs": self.output_count,
        }
        if self.unifilar_table is not None:
            d["unifilar"] = {"f": self.unifilar_table.tolist(),
                             "pyxs": np.transpose(self.p_y, (1, 0, 2)).tolist()}
        else:
            d["kernel"] = self.kernel.tolist()
        if self.output_labels is not None:
            d["output_labels"] = list(self.output_labels)
        if self.name:
            d["name"] = self.name
        return d

    @classmethod
    def from_dict(cls, d, path="channel"):
        if not isinstance(d, dict):
            raise SchemaError(path, "expected a JSON object")
        labels = d.get("output_labels")
        if "unifilar" in d:
            u = d["unifilar"]
            if not isinstance(u, dict) or "f" not in u or "pyxs" not in u:
                raise SchemaError(f"{path}.unifilar", "needs fields 'f' and 'pyxs'")
            try:
                f = np.array(u["f"], dtype=int)
                pyxs = np.array(u["pyxs"], dtype=float)
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"{path}.unifilar", str(exc)) from None
            if f.ndim != 3 or pyxs.ndim != 3:
                raise SchemaError(f"{path}.unifilar", "'f' is [x][y][s], 'pyxs' is [x][s][y]")
            n_x, n_y, n_s = f.shape
            if pyxs.shape != (n_x, n_s, n_y):
                raise SchemaError(f"{path}.unifilar.pyxs", f"expected shape {(n_x, n_s, n_y)}")
            try:
                return from_unifilar(f, pyxs, output_labels=labels, name=d.get("name", ""))
            except DomainError as exc:
                raise SchemaError(f"{path}.unifilar", str(exc)) from None
        if "kernel" not in d:
            raise SchemaError(path, "needs 'kernel' or 'unifilar'")
        try:
            kernel = np.array(d["kernel"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{path}.kernel", str(exc)) from None
        for key, axis in (("states", 0), ("inputs", 1), ("outputs", 3)):
            if key in d and (kernel.ndim != 4 or kernel.shape[axis] != d[key]):
                raise SchemaError(f"{path}.{key}", "does not match kernel shape")
        try:
            return cls(kernel, output_labels=labels, name=d.get("name", ""))
        except DomainError as exc:
            raise SchemaError(f"{path}.kernel", str(exc)) from None


def _derive_unifilar_table(k):
    n_s, n_x, _, n_y = k.shape
    table = np.zeros((n_x, n_y, n_s), dtype=int)
    for s in range(n_s):
        for x in range(n_x):
            for y in range(n_y):
                nz = np.flatnonzero(k[s, x, :, y] > POSITIVE_TOL)
                if len(nz) > 1:
                    return None
                if len(nz) == 1:
                    table[x, y, s] = nz[0]
    return table


def from_unifilar(f, pyxs, output_labels=None, name=""):
    """Build a unifilar channel from ``f[x][y][s]`` and ``pyxs[x][s][y] = P(y|x,s)``."""
    f = np.asarray(f, dtype=int)
    pyxs = np.asarray(pyxs, dtype=float)
    n_x, n_y, n_s = f.shape
    if pyxs.shape != (n_x, n_s, n_y):
        raise DomainError(f"pyxs must have shape {(n_x, n_s, n_y)}")
    if np.any(f < 0) or np.any(f >= n_s):
        raise DomainError("f maps outside the state set")
    kernel = np.zeros((n_s, n_x, n_s, n_y))
    for x in range(n_x):
        for y in range(n_y):
            for s in range(n_s):
                kernel[s, x, f[x, y, s], y] = pyxs[x, s, y]
    return Fsc(kernel, unifilar_table=f, output_labels=output_labels, name=name)


def _check_unit(name, v):
    if not 0.0 <= v <= 1.0:
        raise DomainError(f"{name} must lie in [0, 1], got {v!r}")


def _half_and_half():
    """P(y|x,s) shared by trapdoor and Ising: y is x or s with equal odds."""
    pyxs = np.zeros((2, 2, 2))
    for x in range(2):
        for s in range(2):
            pyxs[x, s, x] += 0.5
            pyxs[x, s, s] += 0.5
    return pyxs


def make_trapdoor():
    f = np.array([[[x ^ y ^ s for s in range(2)] for y in range(2)] for x in range(2)])
    return from_unifilar(f, _half_and_half(), name="trapdoor")


def make_ising():
    f = np.array([[[x for s in range(2)] for y in range(2)] for x in range(2)])
    return from_unifilar(f, _half_and_half(), name="ising")


def make_post(p):
    """POST channel: the state is the previous output; a Z channel from state 0
    and an S channel from state 1, both with crossover ``p``."""
    _check_unit("p", p)
    f = np.array([[[y for s in range(2)] for y in range(2)] for x in range(2)])
    pyxs = np.zeros((2, 2, 2))
    for x in range(2):
        for s in range(2):
            if x == s:
                pyxs[x, s, x] = 1.0
            else:
                pyxs[x, s, x] = 1.0 - p
                pyxs[x, s, 1 - x] = p
    return from_unifilar(f, pyxs, name=f"post(p={p!r})")


DEC_LABELS = ("-1", "0", "1", "?")


def make_dec(eps):
    """Dicode erasure channel. Outputs are indexed (-1, 0, 1, ?)."""
    _check_unit("eps", eps)
    f = np.array([[[x for s in range(2)] for y in range(4)] for x in range(2)])
    pyxs = np.zeros((2, 2, 4))
    for x in range(2):
        for s in range(2):
            pyxs[x, s, x - s + 1] = 1.0 - eps
            pyxs[x, s, 3] += eps
    return from_unifilar(f, pyxs, output_labels=DEC_LABELS, name=f"dec(eps={eps!r})")


class Indecomposability(NamedTuple):
    holds: Optional[bool]  # None when undecided within n_max
    depth: Optional[int]

    def __bool__(self):
        return bool(self.holds)


def _forgetting_check(n_nodes, succ, n_max, budget=DEFAULT_EXPLORE_BUDGET):
    """Decide whether every input path eventually makes the per-start reachable
    sets share a node.

    ``succ[x][v]`` is the set of nodes reachable from ``v`` in one step under
    input ``x``. The search state is the vector of reachable sets, one per
    starting node. Non-empty intersection is absorbing, so the property holds
    iff the graph of empty-intersection vectors has no cycle reachable from the
    start; the depth is one more than its longest path.
    """
    start = tuple(frozenset([v]) for v in range(n_nodes))

    def good(vec):
        return bool(frozenset.intersection(*vec))

    if good(start):
        return Indecomposability(True, 1)

    edges = {}
    queue = deque([start])
    edges[start] = None
    while queue:
        vec = queue.popleft()
        nxt = []
        for sx in succ:
            image = tuple(frozenset().union(*(sx[v] for v in part)) for part in vec)
            if not good(image):
                nxt.append(image)
                if image not in edges:
                    if len(edges) >= budget:
                        return Indecomposability(None, None)
                    edges[image] = None
                    queue.append(image)
        edges[vec] = nxt

    # Kahn's algorithm over the bad-vector graph: leftovers mean a cycle.
    indeg = dict.fromkeys(edges, 0)
    for outs in edges.values():
        for w in outs:
            indeg[w] += 1
    longest = dict.fromkeys(edges, 0)
    ready = deque(v for v, d in indeg.items() if d == 0)
    seen = 0
    while ready:
        v = ready.popleft()
        seen += 1
        for w in edges[v]:
            longest[w] = max(longest[w], longest[v] + 1)
            indeg[w] -= 1
            if indeg[w] == 0:
                ready.append(w)
    if seen < len(edges):
        return Indecomposability(False, None)
    depth = max(longest.values()) + 1
    if depth > n_max:
        return Indecomposability(None, None)
    return Indecomposability(True, depth)


def default_n_max(n_nodes, cap=DEFAULT_NMAX_CAP):
    if n_nodes >= 12:
        return cap
    return min(cap, 2 * (2 ** n_nodes) * n_nodes)


def is_indecomposable(ch, n_max=None):
    """Gallager's sufficient condition: for some n and every input sequence x^n
    there is a state reachable (with positive probability) from every initial
    state. Returns ``Indecomposability(holds, depth)``; ``holds`` is ``None``
    when the answer would need more than ``n_max`` steps."""
    if n_max is None:
        n_max = default_n_max(ch.state_count)
    return _forgetting_check(ch.state_count, ch.state_successors(), n_max)


def product_successors(ch, g):
    """Successor sets of the (s, q) product chain, pair index ``s * |Q| + q``."""
    n_q = g.node_count
    succ = []
    for x in range(ch.input_count):
        row = []
        for s in range(ch.state_count):
            for q in range(n_q):
                pairs = set()
                for s2, y in np.argwhere(ch.kernel[s, x] > POSITIVE_TOL):
                    pairs.add(int(s2) * n_q + int(g.phi[q, y]))
                row.append(frozenset(pairs))
        succ.append(row)
    return succ


def check_joint_indecomposable(ch, g, n_max=None):
    """Joint indecomposability of a channel and a Q-graph: the same forgetting
    check applied to the product chain on (state, node) pairs."""
    if g.output_count != ch.output_count:
        raise DomainError(
            f"Q-graph has {g.output_count} output labels, channel has {ch.output_count}")
    n = ch.state_count * g.node_count
    if n_max is None:
        n_max = default_n_max(n)
    return _forgetting_check(n, product_successors(ch, g), n_max)
