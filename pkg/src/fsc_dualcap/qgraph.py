"""Q-graphs: strongly connected digraphs with one outgoing edge per output
symbol at every node.

``phi[q, y]`` is the node reached from ``q`` along the edge labelled ``y``.
"""

import itertools
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ResourceError, SchemaError

MAX_MARKOV_NODES = 4096
MAX_ENUMERATED_TABLES = 2_000_000


def _reachable(phi, start):
    seen = {start}
    queue = deque([start])
    while queue:
        q = queue.popleft()
        for q2 in phi[q]:
            q2 = int(q2)
            if q2 not in seen:
                seen.add(q2)
                queue.append(q2)
    return seen


def is_strongly_connected(phi):
    phi = np.asarray(phi)
    n = phi.shape[0]
    if len(_reachable(phi, 0)) != n:
        return False
    return len(_reachable(_reverse(phi), 0)) == n


def _reverse(phi):
    n = phi.shape[0]
    rev = [[] for _ in range(n)]
    for q in range(n):
        for q2 in phi[q]:
            rev[int(q2)].append(q)
    return rev


@dataclass(frozen=True, eq=False)
class QGraph:
    phi: np.ndarray
    q0: int = 0
    node_labels: tuple = None

    def __post_init__(self):
        phi = np.array(self.phi, dtype=int)
        if phi.ndim != 2 or phi.shape[0] < 1 or phi.shape[1] < 1:
            raise DomainError(f"phi must be a [node][output] table, got shape {phi.shape}")
        n = phi.shape[0]
        if np.any(phi < 0) or np.any(phi >= n):
            raise DomainError("phi maps outside the node set")
        if not 0 <= self.q0 < n:
            raise DomainError(f"initial node {self.q0} out of range")
        if not is_strongly_connected(phi):
            raise DomainError("Q-graph is not strongly connected")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        if self.node_labels is not None:
            object.__setattr__(self, "node_labels", tuple(str(v) for v in self.node_labels))

    @property
    def node_count(self):
        return self.phi.shape[0]

    @property
    def output_count(self):
        return self.phi.shape[1]

    def walk(self, ys, q0=None):
        return phi_walk(self, self.q0 if q0 is None else q0, ys)

    def key(self):
        return (self.node_count, self.output_count, tuple(self.phi.ravel().tolist()), self.q0)

    def __eq__(self, other):
        return isinstance(other, QGraph) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def to_dict(self):
        return {"nodes": self.node_count, "outputs": self.output_count,
                "phi": self.phi.tolist(), "q0": self.q0}

    @classmethod
    def from_dict(cls, d, path="qgraph"):
        if not isinstance(d, dict) or "phi" not in d:
            raise SchemaError(path, "expected an object with field 'phi'")
        try:
            phi = np.array(d["phi"], dtype=int)
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{path}.phi", str(exc)) from None
        if phi.ndim != 2:
            raise SchemaError(f"{path}.phi", "must be a 2-d table")
        if "nodes" in d and d["nodes"] != phi.shape[0]:
            raise SchemaError(f"{path}.nodes", "does not match phi")
        if "outputs" in d and d["outputs"] != phi.shape[1]:
            raise SchemaError(f"{path}.outputs", "does not match phi")
        try:
            return cls(phi, q0=int(d.get("q0", 0)))
        except DomainError as exc:
            raise SchemaError(f"{path}.phi", str(exc)) from None


def phi_walk(g, q0, ys):
    """Node reached from ``q0`` by following the labels in ``ys``."""
    q = int(q0)
    if not 0 <= q < g.node_count:
        raise DomainError(f"node {q} out of range")
    for y in ys:
        if not 0 <= y < g.output_count:
            raise DomainError(f"output symbol {y} out of range")
        q = int(g.phi[q, y])
    return q


def markov_qgraph(k, y_count):
    """k-th order Markov Q-graph: nodes are the last k outputs, node index is
    the base-|Y| number with the oldest symbol most significant."""
    if k < 1 or y_count < 2:
        raise DomainError("need k >= 1 and y_count >= 2")
    n = y_count ** k
    if n > MAX_MARKOV_NODES:
        raise ResourceError(f"{n} nodes exceeds the budget of {MAX_MARKOV_NODES}")
    q = np.arange(n)[:, None]
    y = np.arange(y_count)[None, :]
    phi = (q * y_count) % n + y
    labels = ["".join(str(d) for d in np.base_repr(i, y_count).zfill(k)) for i in range(n)]
    return QGraph(phi, q0=0, node_labels=labels)


def markov_node(window, y_count):
    """Node index of an output window (oldest first) in ``markov_qgraph``."""
    q = 0
    for y in window:
        q = q * y_count + int(y)
    return q


# Node order Q1, Q2, Q3; outputs (-1, 0, 1, ?).
DEC_Q1, DEC_Q2, DEC_Q3 = 0, 1, 2


def dec_qgraph():
    """Three-node Q-graph for the dicode erasure channel: -1 and 1 reveal the
    state (Q1, Q2), an erasure moves to Q3, and 0 is a self-loop."""
    phi = [[DEC_Q1, q, DEC_Q2, DEC_Q3] for q in range(3)]
    return QGraph(phi, q0=DEC_Q3, node_labels=("Q1", "Q2", "Q3"))


def canonical_form(phi):
    """Lexicographically smallest relabelled table over all node permutations."""
    phi = np.asarray(phi)
    n = phi.shape[0]
    best = None
    for perm in itertools.permutations(range(n)):
        perm = np.array(perm)  # perm[old] = new
        inv = np.argsort(perm)
        table = tuple(perm[phi[inv]].ravel().tolist())
        if best is None or table < best:
            best = table
    return best


def enumerate_qgraphs(y_count, max_nodes, dedupe=False, min_nodes=1):
    """All strongly connected total tables on ``min_nodes..max_nodes`` nodes.

    With ``dedupe`` one representative (the canonical table) is kept per
    relabelling class. Output is sorted by node count then table.
    """
    if y_count < 1 or max_nodes < 1 or min_nodes < 1:
        raise DomainError("y_count, max_nodes and min_nodes must be positive")
    total = sum(n ** (n * y_count) for n in range(min_nodes, max_nodes + 1))
    if total > MAX_ENUMERATED_TABLES:
        raise ResourceError(
            f"{total} tables exceed the enumeration budget of {MAX_ENUMERATED_TABLES}")
    out = []
    for n in range(min_nodes, max_nodes + 1):
        found = set()
        for flat in itertools.product(range(n), repeat=n * y_count):
            phi = np.array(flat).reshape(n, y_count)
            if not is_strongly_connected(phi):
                continue
            found.add(canonical_form(phi) if dedupe else flat)
        for flat in sorted(found):
            out.append(QGraph(np.array(flat).reshape(n, y_count), q0=0))
    return out
