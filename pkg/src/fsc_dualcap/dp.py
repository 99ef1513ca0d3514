"""Deterministic average-reward dynamic programs.

A ``DpProblem`` carries batched callables: ``transition(Z, u)`` maps an
``(n, d)`` array of states to their successors under action ``u`` and
``reward(Z, u)`` returns the ``n`` rewards in bits. The state space is either
an explicit finite point set or a lattice of pmfs (coordinates multiples of
``1/resolution``) onto which successor states are projected. ``tabulate``
turns either into index tables that ``relative_value_iteration`` works on.
"""

import hashlib
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, ResourceError

DEFAULT_MAX_STATES = 500_000


@dataclass(frozen=True)
class FiniteSpace:
    points: np.ndarray


@dataclass(frozen=True)
class LatticeSpace:
    """Product of simplex lattices, one per block of coordinates.

    ``mode='dense'`` enumerates every lattice point; ``mode='reachable'``
    explores forward from ``initial`` and keeps only what is visited.
    On the dense lattice an off-grid successor is either snapped to the
    nearest point (``interpolation='nearest'``) or split over the vertices
    of its enclosing lattice simplex (``'barycentric'``). The reachable
    lattice always snaps.
    """

    blocks: tuple
    resolution: int
    mode: str = "dense"
    initial: Optional[np.ndarray] = None
    max_states: int = DEFAULT_MAX_STATES
    interpolation: str = "barycentric"

    @property
    def delta(self):
        return 1.0 / self.resolution


@dataclass
class DpProblem:
    actions: int
    transition: Callable
    reward: Callable
    space: object = None
    # (rewards[d, actions], transitions[actions, d, d]) when both are linear in z
    linear: Optional[tuple] = None

    def step(self, z, u):
        """Successor of a single state (no projection)."""
        return self.transition(np.atleast_2d(np.asarray(z, dtype=float)), u)[0]

    def gain(self, z, u):
        return float(self.reward(np.atleast_2d(np.asarray(z, dtype=float)), u)[0])


@dataclass
class TabularDp:
    """Index form of a DP. Successor ``k`` of ``(i, u)`` is
    ``next_index[i, u, k]`` with weight ``next_weight[i, u, k]``; snapped
    tables have a single successor of weight one."""

    points: np.ndarray
    next_index: np.ndarray  # (n, actions, k)
    rewards: np.ndarray  # (n, actions)
    delta: Optional[float] = None
    next_weight: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.next_index.ndim == 2:
            self.next_index = self.next_index[:, :, None]
        if self.next_weight is None:
            self.next_weight = np.ones(self.next_index.shape)

    @property
    def size(self):
        return len(self.points)

    def lookahead(self, V):
        """``rewards + E[V(next)]`` for every (state, action)."""
        if self.next_index.shape[2] == 1:
            return self.rewards + V[self.next_index[:, :, 0]]
        return self.rewards + np.einsum("nak,nak->na", V[self.next_index], self.next_weight)

    def index_of(self, z, atol=1e-9):
        hits = np.flatnonzero(np.all(np.abs(self.points - np.asarray(z)) <= atol, axis=1))
        if not len(hits):
            raise DomainError(f"state {np.asarray(z).tolist()} is not in the table")
        return int(hits[0])


@dataclass
class BellmanCertificate:
    rho: float
    h: Callable
    policy: Optional[Callable] = None
    meta: dict = field(default_factory=dict)


@dataclass
class RviResult:
    rho: float
    lower: float
    upper: float
    span: float
    iterations: int
    converged: bool
    values: np.ndarray
    policy: np.ndarray
    delta: Optional[float] = None
    points: Optional[np.ndarray] = None
    envelope: Optional[np.ndarray] = None  # linear pieces, point-based solver only

    def diagnostics(self):
        return {
            "rho": self.rho,
            "lower": self.lower,
            "upper": self.upper,
            "span": self.span,
            "iterations": self.iterations,
            "converged": self.converged,
            "grid_delta": self.delta,
            "states": int(len(self.values)),
            "policy_digest": hashlib.sha256(self.policy.astype(np.int8).tobytes()).hexdigest()[:16],
            "envelope_pieces": None if self.envelope is None else int(len(self.envelope)),
        }

    def index_of(self, z, atol=1e-9):
        hits = np.flatnonzero(np.all(np.abs(self.points - np.asarray(z)) <= atol, axis=1))
        if not len(hits):
            raise DomainError(f"state {np.asarray(z).tolist()} is not among the solved states")
        return int(hits[0])


def lattice_project(Z, blocks, resolution):
    """Round each pmf block to the nearest lattice point in l1.

    Largest-remainder rounding: floor, then hand the missing units to the
    coordinates with the largest fractional parts. Returns integer counts.
    """
    Z = np.atleast_2d(Z)
    out = np.empty(Z.shape, dtype=np.int64)
    start = 0
    for size in blocks:
        x = np.clip(Z[:, start:start + size], 0.0, None)
        total = x.sum(axis=1, keepdims=True)
        x = x / np.where(total > 0, total, 1.0) * resolution
        fl = np.floor(x)
        missing = (resolution - fl.sum(axis=1)).astype(np.int64)
        frac = x - fl
        # stable ranks so ties resolve to the lowest coordinate
        order = np.argsort(-frac, axis=1, kind="stable")
        ranks = np.empty_like(order)
        np.put_along_axis(ranks, order, np.arange(size)[None, :].repeat(len(x), 0), axis=1)
        fl = fl.astype(np.int64) + (ranks < missing[:, None])
        out[:, start:start + size] = fl
        start += size
    return out


def _kuhn_block(X, resolution):
    """Vertices (integer counts) and weights of the lattice simplex holding
    each row of ``X`` (pmfs), via the Kuhn triangulation of cumulative sums.

    Returns arrays of shape ``(n, d, d)`` and ``(n, d)``. Vertices with zero
    weight are replaced by the first vertex so every index is valid.
    """
    n, d = X.shape
    X = np.clip(X, 0.0, None)
    X = X / X.sum(axis=1, keepdims=True) * resolution
    if d == 1:
        return np.full((n, 1, 1), resolution, dtype=np.int64), np.ones((n, 1))
    # tail sums c_i = sum_{j >= i} x_j for i = 1..d-1, non-increasing in i
    c = np.minimum(np.cumsum(X[:, ::-1], axis=1)[:, ::-1][:, 1:], resolution)
    base = np.floor(c)
    frac = c - base
    order = np.argsort(-frac, axis=1, kind="stable")
    fs = np.take_along_axis(frac, order, axis=1)
    weights = np.empty((n, d))
    weights[:, 0] = 1.0 - fs[:, 0]
    weights[:, 1:-1] = fs[:, :-1] - fs[:, 1:]
    weights[:, -1] = fs[:, -1]
    cum = np.repeat(base[:, None, :], d, axis=1).astype(np.int64)
    for k in range(1, d):
        step = np.zeros((n, d - 1), dtype=np.int64)
        np.put_along_axis(step, order[:, :k], 1, axis=1)
        cum[:, k] += step
    cum[weights <= 0] = cum[:, :1].repeat(d, axis=1)[weights <= 0]
    weights = np.where(weights > 0, weights, 0.0)
    full = np.concatenate([np.full((n, d, 1), resolution, dtype=np.int64), cum,
                           np.zeros((n, d, 1), dtype=np.int64)], axis=2)
    return full[:, :, :-1] - full[:, :, 1:], weights


def lattice_interpolate(Z, blocks, resolution):
    """Barycentric split of each row over lattice points.

    Returns integer counts ``(n, k, dim)`` and weights ``(n, k)`` where ``k``
    is the product of the block sizes.
    """
    Z = np.atleast_2d(Z)
    verts, weights = None, None
    start = 0
    for size in blocks:
        v, w = _kuhn_block(Z[:, start:start + size], resolution)
        if verts is None:
            verts, weights = v, w
        else:
            m, k = verts.shape[1], v.shape[1]
            verts = np.concatenate([np.repeat(verts, k, axis=1), np.tile(v, (1, m, 1))], axis=2)
            weights = (weights[:, :, None] * w[:, None, :]).reshape(len(Z), m * k)
        start += size
    return verts, weights


def simplex_lattice(size, resolution):
    """All compositions of ``resolution`` into ``size`` non-negative parts."""
    rows = []
    for bars in itertools.combinations(range(resolution + size - 1), size - 1):
        prev = -1
        row = []
        for b in bars:
            row.append(b - prev - 1)
            prev = b
        row.append(resolution + size - 2 - prev)
        rows.append(row)
    return np.array(rows, dtype=np.int64).reshape(-1, size)


def lattice_size(blocks, resolution):
    return math.prod(math.comb(resolution + b - 1, b - 1) for b in blocks)


def _keys(counts):
    return [row.tobytes() for row in counts]


def tabulate(dp):
    """Materialise a ``DpProblem`` into index tables."""
    space = dp.space
    if isinstance(space, FiniteSpace):
        pts = np.asarray(space.points, dtype=float)
        lookup = {tuple(np.round(p, 12)): i for i, p in enumerate(pts)}
        nxt = np.empty((len(pts), dp.actions), dtype=np.int64)
        rew = np.empty((len(pts), dp.actions))
        for u in range(dp.actions):
            images = dp.transition(pts, u)
            rew[:, u] = dp.reward(pts, u)
            for i, img in enumerate(images):
                key = tuple(np.round(img, 12))
                if key not in lookup:
                    raise DomainError(f"transition leaves the finite state set at {pts[i].tolist()}")
                nxt[i, u] = lookup[key]
        return TabularDp(pts, nxt, rew)

    if not isinstance(space, LatticeSpace):
        raise DomainError("DpProblem has no materialisable state space")
    n_res = space.resolution
    if space.mode == "reachable":
        counts, edges = _explore(dp, space)
        pts = counts / n_res
        nxt = np.empty((len(pts), dp.actions), dtype=np.int64)
        for i, u, j in edges:
            nxt[i, u] = j
        rew = np.stack([dp.reward(pts, u) for u in range(dp.actions)], axis=1)
        return TabularDp(pts, nxt, rew, delta=space.delta)

    counts = _dense_counts(space)
    index = {k: i for i, k in enumerate(_keys(counts))}
    pts = counts / n_res
    rew = np.empty((len(pts), dp.actions))
    if space.interpolation == "nearest":
        nxt = np.empty((len(pts), dp.actions), dtype=np.int64)
        for u in range(dp.actions):
            rew[:, u] = dp.reward(pts, u)
            img = lattice_project(dp.transition(pts, u), space.blocks, n_res)
            nxt[:, u] = [index[k] for k in _keys(img)]
        return TabularDp(pts, nxt, rew, delta=space.delta)
    if space.interpolation != "barycentric":
        raise DomainError(f"unknown interpolation {space.interpolation!r}")
    k = math.prod(space.blocks)
    nxt = np.empty((len(pts), dp.actions, k), dtype=np.int64)
    wts = np.empty((len(pts), dp.actions, k))
    for u in range(dp.actions):
        rew[:, u] = dp.reward(pts, u)
        verts, w = lattice_interpolate(dp.transition(pts, u), space.blocks, n_res)
        flat = verts.reshape(-1, verts.shape[2])
        nxt[:, u] = np.array([index[key] for key in _keys(flat)]).reshape(len(pts), k)
        wts[:, u] = w
    return TabularDp(pts, nxt, rew, delta=space.delta, next_weight=wts)


def _dense_counts(space):
    count = lattice_size(space.blocks, space.resolution)
    if count > space.max_states:
        raise ResourceError(
            f"grid has {count} states (budget {space.max_states}); "
            "use a coarser delta, the reachable state space, or the finite special case")
    parts = [simplex_lattice(b, space.resolution) for b in space.blocks]
    counts = parts[0]
    for p in parts[1:]:
        counts = np.concatenate(
            [np.repeat(counts, len(p), axis=0), np.tile(p, (len(counts), 1))], axis=1)
    return counts


def _explore(dp, space):
    """Breadth-first search over snapped successors of the initial states.

    Returns the visited lattice counts (discovery order) and the edge list.
    """
    if space.initial is None:
        raise DomainError("reachable lattice needs initial states")
    n_res = space.resolution
    start = lattice_project(np.asarray(space.initial, dtype=float), space.blocks, n_res)
    index = {}
    rows = []
    for k, row in zip(_keys(start), start):
        if k not in index:
            index[k] = len(rows)
            rows.append(row)
    edges = []
    frontier = list(range(len(rows)))
    while frontier:
        pts = np.array([rows[i] for i in frontier]) / n_res
        new = []
        for u in range(dp.actions):
            img = lattice_project(dp.transition(pts, u), space.blocks, n_res)
            for i, k, row in zip(frontier, _keys(img), img):
                j = index.get(k)
                if j is None:
                    if len(rows) >= space.max_states:
                        raise ResourceError(
                            f"reachable set exceeds {space.max_states} states; "
                            "use a coarser resolution")
                    j = index[k] = len(rows)
                    rows.append(row)
                    new.append(j)
                edges.append((i, u, j))
        frontier = new
    return np.array(rows), edges


def state_points(dp):
    """The states a DP's space stands for, as float rows."""
    space = dp.space
    if isinstance(space, FiniteSpace):
        return np.asarray(space.points, dtype=float)
    if not isinstance(space, LatticeSpace):
        raise DomainError("DpProblem has no materialisable state space")
    if space.mode == "reachable":
        return _explore(dp, space)[0] / space.resolution
    if space.mode == "dense":
        return _dense_counts(space) / space.resolution
    raise DomainError(f"unknown lattice mode {space.mode!r}")


DEFAULT_PATIENCE = 2_000


def _stalled(span, best, it, patience):
    """Track the smallest span seen; True once it is ``patience`` sweeps old."""
    if span < best[0]:
        best[0], best[1] = span, it
    return patience is not None and it - best[1] >= patience


def relative_value_iteration(dp, tol=1e-9, max_iter=200_000, damping=1.0, ref=0, tie_tol=1e-9,
                             patience=DEFAULT_PATIENCE):
    """Relative value iteration on a tabulated (or tabulatable) DP.

    Each sweep computes ``TV(z) = max_u g(z,u) + V(next(z,u))``. For any V,
    ``min(TV - V) <= rho* <= max(TV - V)``; iteration stops once that span is
    within ``tol`` and ``rho`` is the midpoint. ``damping < 1`` mixes in the
    previous iterate, which breaks periodic oscillation without moving the
    fixed point. Ties in the policy go to the lowest action index. The
    loop also stops (unconverged) when the span has not improved for
    ``patience`` sweeps.
    """
    tab = dp if isinstance(dp, TabularDp) else tabulate(dp)
    if np.any(~np.isfinite(tab.rewards)):
        raise DomainError("rewards are not finite on the state space")
    V = np.zeros(tab.size)
    lo, hi = -np.inf, np.inf
    it = 0
    converged = False
    record = [np.inf, 0]
    for it in range(1, max_iter + 1):
        Q = tab.lookahead(V)
        TV = Q.max(axis=1)
        diff = TV - V
        lo, hi = float(diff.min()), float(diff.max())
        if hi - lo <= tol:
            converged = True
            break
        if _stalled(hi - lo, record, it, patience):
            break
        V = (1 - damping) * V + damping * TV
        V -= V[ref]
    Q = tab.lookahead(V)
    best = Q.max(axis=1, keepdims=True)
    policy = np.argmax(Q >= best - tie_tol, axis=1)
    return RviResult(
        rho=0.5 * (lo + hi), lower=lo, upper=hi, span=hi - lo, iterations=it,
        converged=converged, values=V - V[ref], policy=policy, delta=tab.delta,
        points=tab.points)


MAX_ALPHA_VECTORS = 20_000


def point_based_rvi(dp, points=None, tol=1e-9, max_iter=200_000, damping=1.0, ref=0,
                    tie_tol=1e-9, max_vectors=MAX_ALPHA_VECTORS, patience=DEFAULT_PATIENCE):
    """Relative value iteration for DPs whose reward and transition are linear
    in the state (belief DPs of unifilar channels).

    The value function is kept as the upper envelope of a set of linear
    functionals, V(z) = max_a a.z, which is exact for every finite horizon.
    Each sweep backs up one functional per point of ``points`` (default: the
    DP's state space), so the points only decide which pieces of the
    envelope are retained; successor states are never projected. With a
    fixed point set the iteration is not a contraction and can cycle, so it
    stops unconverged once the span has not improved for ``patience`` sweeps.
    """
    if dp.linear is None:
        raise DomainError("point-based iteration needs a DP with linear reward and transition")
    D, T = dp.linear
    P = state_points(dp) if points is None else np.atleast_2d(np.asarray(points, dtype=float))
    if not np.all(np.isfinite(D)):
        raise DomainError("rewards are not finite on the state space")
    n, d = P.shape
    # backed-up functional for action u against envelope G: D[:, u] + T[u] @ a
    Tt = np.transpose(T, (0, 2, 1))
    G = np.zeros((1, d))
    V = np.zeros(n)
    lo, hi = -np.inf, np.inf
    it = 0
    converged = False
    best = np.zeros(n, dtype=np.int64)
    record = [np.inf, 0]
    for it in range(1, max_iter + 1):
        cands, Q = [], np.empty((n, dp.actions))
        for u in range(dp.actions):
            pick = np.argmax((P @ T[u]) @ G.T, axis=1)
            a = D[:, u] + G[pick] @ Tt[u]
            cands.append(a)
            Q[:, u] = np.einsum("nd,nd->n", a, P)
        TV = Q.max(axis=1)
        best = np.argmax(Q >= TV[:, None] - tie_tol, axis=1)
        diff = TV - V
        lo, hi = float(diff.min()), float(diff.max())
        if hi - lo <= tol:
            converged = True
            break
        if _stalled(hi - lo, record, it, patience):
            break
        A = np.stack(cands, axis=1)[np.arange(n), best]
        if damping < 1:
            current = G[np.argmax(P @ G.T, axis=1)]
            A = damping * A + (1 - damping) * current
        shift = float(A[ref] @ P[ref])
        G = np.unique(np.round(A - shift, 12), axis=0)
        if len(G) > max_vectors:
            raise ResourceError(f"value envelope grew past {max_vectors} pieces")
        V = (P @ G.T).max(axis=1)
    res = RviResult(
        rho=0.5 * (lo + hi), lower=lo, upper=hi, span=hi - lo, iterations=it,
        converged=converged, values=V - V[ref], policy=best,
        delta=getattr(dp.space, "delta", None), points=P, envelope=G)
    return res


@dataclass
class ResidualReport:
    max_residual: float
    max_policy_gap: float
    worst_state: np.ndarray
    count: int


def bellman_residual(dp, cert, states):
    """Largest |rho + h(z) - max_u [g(z,u) + h(F(z,u))]| over ``states``.

    Also reports how far the certificate's policy falls short of the best
    action, when a policy is supplied.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    worst, worst_z, gap = -1.0, None, 0.0
    rewards = np.stack([dp.reward(states, u) for u in range(dp.actions)], axis=1)
    images = [dp.transition(states, u) for u in range(dp.actions)]
    for i, z in enumerate(states):
        rhs = np.empty(dp.actions)
        for u in range(dp.actions):
            try:
                hv = float(cert.h(images[u][i]))
            except Exception as exc:  # noqa: BLE001 - re-raised with the state named
                raise DomainError(f"h not evaluable at F({z.tolist()}, {u}): {exc}") from exc
            if not np.isfinite(hv):
                raise DomainError(f"h not finite at F({z.tolist()}, {u})")
            rhs[u] = rewards[i, u] + hv
        best = rhs.max()
        res = abs(cert.rho + float(cert.h(z)) - best)
        if res > worst:
            worst, worst_z = res, z
        if cert.policy is not None:
            gap = max(gap, best - rhs[int(cert.policy(z))])
    return ResidualReport(worst, gap, worst_z, len(states))


MAX_HORIZON_SEQUENCES = 1 << 20


def finite_horizon_bounds(ch, g, r, n, starts=None):
    """Brute-force the n-letter max-min and max-max normalised divergences.

    For every input sequence the belief over (node, state) pairs is pushed
    forward from each initial pair and the per-step rewards accumulated.
    Returns ``(lower, upper)``.
    """
    from .unifilar import belief_operators

    if n < 1:
        raise DomainError("horizon must be positive")
    if ch.input_count ** n > MAX_HORIZON_SEQUENCES:
        raise ResourceError(f"{ch.input_count}^{n} input sequences exceed the budget")
    D, T = belief_operators(ch, g, r)
    n_pairs = D.shape[0]
    if starts is None:
        starts = range(n_pairs)
    Z0 = np.eye(n_pairs)[list(starts)]
    best_lo, best_hi = -np.inf, -np.inf

    def visit(Z, acc, depth):
        nonlocal best_lo, best_hi
        if depth == n:
            best_lo = max(best_lo, acc.min())
            best_hi = max(best_hi, acc.max())
            return
        for u in range(ch.input_count):
            with np.errstate(invalid="ignore"):
                step = np.where(Z > 0, Z * D[:, u], 0.0).sum(axis=1)
            visit(Z @ T[u], acc + step, depth + 1)

    visit(Z0, np.zeros(len(Z0)), 0)
    return best_lo / n, best_hi / n
