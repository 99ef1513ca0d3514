"""Belief-state DP for unifilar channels.

The DP state is a pmf ``z`` over (node, state) pairs, flattened node-major:
``z[q * |S| + s]``. Both the reward and the transition are linear in ``z``
for a fixed action, so they reduce to a divergence matrix and one transition
matrix per input.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .channels import check_joint_indecomposable
from .dp import (DpProblem, FiniteSpace, LatticeSpace, lattice_project, lattice_size,
                 point_based_rvi, relative_value_iteration, tabulate, _explore)
from .errors import DomainError, Refusal, ResourceError
from .info import POSITIVE_TOL, kl_bits
from .qgraph import markov_node, markov_qgraph
from .results import BoundResult, digest
from .testdist import reachable_pairs, validate_support


@dataclass
class SolverOptions:
    """Settings shared by the belief DP solvers.

    ``solver``: ``"point-based"`` keeps the value function as an envelope of
    linear pieces backed up at the state-space points (needs a DP linear in
    the belief); ``"lattice"`` tabulates the DP with successors snapped or
    interpolated onto the lattice.

    ``state_space``: ``"grid"`` enumerates the full lattice with spacing
    ``delta``; ``"reachable"`` explores from the initial beliefs on a lattice
    of spacing ``1 / reachable_resolution``; ``"auto"`` uses the reachable set
    when its exploration closes within ``probe_states`` points, else the grid
    when that fits in ``max_states``, else the full reachable exploration. ``damping`` mixes
    each value update with the previous iterate (1 = plain iteration), which
    keeps periodic grid dynamics from stalling convergence.
    """

    solver: str = "point-based"
    delta: float = 0.02
    tol: float = 1e-9
    max_iter: int = 200_000
    patience: int = 2_000
    state_space: str = "auto"
    reachable_resolution: int = 10 ** 9
    max_states: int = 500_000
    probe_states: int = 5_000
    damping: float = 0.5
    interpolation: str = "nearest"
    s0: int = 0
    n_max: int = None
    # False computes the DP even without joint indecomposability; the result
    # is then only known to bound the rate from the chosen initial node
    require_indecomposable: bool = True

    @property
    def resolution(self):
        n = round(1.0 / self.delta)
        if n < 1 or abs(n * self.delta - 1.0) > 1e-9:
            raise DomainError(f"delta must be 1/N for an integer N, got {self.delta!r}")
        return n


def pair_index(q, s, state_count):
    return q * state_count + s


def divergence_matrix(ch, r):
    """``D[q*|S|+s, x] = D(P(.|x,s) || R(.|q))`` in bits (``inf`` if unsupported)."""
    py = ch.p_y
    n_q = r.node_count
    D = np.empty((n_q * ch.state_count, ch.input_count))
    for q in range(n_q):
        for s in range(ch.state_count):
            for x in range(ch.input_count):
                D[pair_index(q, s, ch.state_count), x] = kl_bits(py[s, x], r.table[q])
    return D


def transition_matrices(ch, g):
    """``T[x][(q,s), (q',s')] = sum_y P(s', y | x, s) 1{q' = phi(q, y)}``."""
    n_s, n_q = ch.state_count, g.node_count
    T = np.zeros((ch.input_count, n_q * n_s, n_q * n_s))
    for x in range(ch.input_count):
        for q in range(n_q):
            for s in range(n_s):
                row = pair_index(q, s, n_s)
                for s2 in range(n_s):
                    for y in range(ch.output_count):
                        w = ch.kernel[s, x, s2, y]
                        if w > 0:
                            T[x, row, pair_index(g.phi[q, y], s2, n_s)] += w
    return T


def belief_operators(ch, g, r):
    if g.output_count != ch.output_count or r.table.shape != (g.node_count, ch.output_count):
        raise DomainError("channel, Q-graph and test distribution alphabets disagree")
    return divergence_matrix(ch, r), transition_matrices(ch, g)


def _weighted_reward(Z, column):
    # zero-mass pairs contribute nothing even where the divergence is infinite
    with np.errstate(invalid="ignore"):
        terms = np.where(Z > POSITIVE_TOL, Z * column, 0.0)
    out = terms.sum(axis=1)
    bad = ~np.isfinite(out)
    if np.any(bad):
        raise DomainError(f"support violation at belief {Z[np.flatnonzero(bad)[0]].tolist()}")
    return out


def _require_unifilar(ch):
    if not ch.is_unifilar:
        raise DomainError("channel is not unifilar")


def reward_unifilar(z, u, ch, r):
    """Expected divergence sum_{q,s} z(q,s) D(P(.|u,s) || R(.|q)) in bits."""
    _require_unifilar(ch)
    D = divergence_matrix(ch, r)
    return float(_weighted_reward(np.atleast_2d(np.asarray(z, dtype=float)), D[:, u])[0])


def next_state_unifilar(z, u, ch, g):
    _require_unifilar(ch)
    return np.asarray(z, dtype=float) @ transition_matrices(ch, g)[u]


def support_coordinates(ch, g, starts=None):
    """Flattened indices of the (q, s) pairs reachable from the start pairs."""
    pairs = reachable_pairs(ch, g, starts)
    return sorted(pair_index(q, s, ch.state_count) for s, q in pairs)


def unifilar_dp(ch, g, r, coords=None):
    """Belief DP restricted to the coordinates ``coords`` (default: all pairs).

    The restriction is exact whenever ``coords`` is closed under the
    transitions, which holds for the reachable support.
    """
    _require_unifilar(ch)
    D, T = belief_operators(ch, g, r)
    if coords is None:
        coords = list(range(D.shape[0]))
    coords = np.asarray(coords)
    D = D[coords]
    T = T[:, coords][:, :, coords]
    return DpProblem(
        actions=ch.input_count,
        transition=lambda Z, u: np.atleast_2d(Z) @ T[u],
        reward=lambda Z, u: _weighted_reward(np.atleast_2d(Z), D[:, u]),
        linear=(D, T),
    )


def _initial_beliefs(ch, g, coords):
    starts = np.zeros((ch.state_count, len(coords)))
    where = {c: i for i, c in enumerate(coords)}
    for s in range(ch.state_count):
        starts[s, where[pair_index(g.q0, s, ch.state_count)]] = 1.0
    return starts


def _reachable_closes(dp, blocks, starts, opts):
    probe = LatticeSpace(tuple(blocks), opts.reachable_resolution, "reachable",
                         initial=starts, max_states=min(opts.probe_states, opts.max_states))
    try:
        _explore(dp, probe)
    except ResourceError:
        return False
    return True


def _pick_space(dp, blocks, starts, opts):
    mode = opts.state_space
    if mode == "auto":
        if _reachable_closes(dp, blocks, starts, opts):
            mode = "reachable"
        elif lattice_size(blocks, opts.resolution) <= opts.max_states:
            mode = "grid"
        else:
            mode = "reachable"
    if mode == "grid":
        return LatticeSpace(tuple(blocks), opts.resolution, "dense", max_states=opts.max_states,
                            interpolation=opts.interpolation)
    if mode == "reachable":
        return LatticeSpace(tuple(blocks), opts.reachable_resolution, "reachable",
                            initial=starts, max_states=opts.max_states)
    raise DomainError(f"unknown state space {opts.state_space!r}")


def check_preconditions(ch, g, r, n_max=None, require_indecomposable=True):
    """Raise ``Refusal`` when the bound would not be valid or finite."""
    joint = check_joint_indecomposable(ch, g, n_max)
    if require_indecomposable and joint.holds is None:
        raise Refusal("indecomposability-undecided",
                      "joint indecomposability not settled within n_max steps")
    if require_indecomposable and not joint.holds:
        raise Refusal("not-jointly-indecomposable",
                      "the bound would depend on the initial (state, node) pair")
    violations = validate_support(r, ch, g)
    if violations:
        q, s, x, y = violations[0]
        raise Refusal("support-violation",
                      f"{len(violations)} violations, first: R({y}|{q}) = 0 but P({y}|x={x}, s={s}) > 0")
    return joint


def solve_belief_dp(dp, space, starts, opts):
    """Run the configured solver and collect the shared diagnostics."""
    dp.space = space
    if opts.solver == "point-based":
        res = point_based_rvi(dp, tol=opts.tol, max_iter=opts.max_iter, damping=opts.damping,
                              patience=opts.patience)
    elif opts.solver == "lattice":
        res = relative_value_iteration(tabulate(dp), tol=opts.tol, max_iter=opts.max_iter,
                                       damping=opts.damping, patience=opts.patience)
    else:
        raise DomainError(f"unknown solver {opts.solver!r}")
    values = [float(res.values[res.index_of(space_project(z, space))]) for z in starts]
    diag = res.diagnostics()
    diag["solver"] = opts.solver
    diag["state_space"] = space.mode
    diag["resolution"] = space.resolution
    diag["initial_values"] = values
    diag["initial_value_spread"] = max(values) - min(values)
    return res, diag


def space_project(z, space):
    return lattice_project(np.asarray(z, dtype=float), space.blocks, space.resolution)[0] / space.resolution


def upper_bound_unifilar(ch, g, r, opts=None):
    """Capacity upper bound from the belief DP (bits per channel use)."""
    opts = opts or SolverOptions()
    _require_unifilar(ch)
    joint = check_preconditions(ch, g, r, opts.n_max, opts.require_indecomposable)
    coords = support_coordinates(ch, g)
    dp = unifilar_dp(ch, g, r, coords)
    starts = _initial_beliefs(ch, g, coords)
    s0 = opts.s0
    if not 0 <= s0 < ch.state_count:
        raise DomainError(f"s0 = {s0} out of range")
    starts = np.concatenate([starts[s0:s0 + 1], np.delete(starts, s0, axis=0)])
    space = _pick_space(dp, [len(coords)], starts, opts)
    res, diag = solve_belief_dp(dp, space, starts, opts)
    diag["coordinates"] = [divmod(c, ch.state_count) for c in coords]
    diag["jointly_indecomposable"] = joint.holds
    diag["joint_witness_depth"] = joint.depth
    diag["trivial_bound"] = math.log2(ch.output_count)
    return BoundResult(res.rho, "rvi", diag, _provenance(ch, g, r),
                       extras={"rvi": res})


def _provenance(ch, g, r):
    return {"channel": digest(ch), "qgraph": digest(g), "test_dist": digest(r)}


def special_case_dp(ch, k, r):
    """Finite DP for channels whose next state ignores the output.

    State ``(s, x_1, ..., x_k)``: the state before the last ``k`` inputs and
    those inputs, oldest first. The reward averages the divergence at the
    node given by the last ``k`` outputs over their conditional law.
    """
    _require_unifilar(ch)
    f = ch.unifilar_table  # [x, y, s]
    if np.any(f != f[:, :1, :]):
        raise Refusal("state-depends-on-output", "use the belief DP instead")
    n_y = ch.output_count
    g = markov_qgraph(k, n_y)
    if r.table.shape != (g.node_count, n_y):
        raise DomainError(f"test distribution must be on the order-{k} Markov graph")
    step = f[:, 0, :]  # step[x, s] = next state
    py = ch.p_y
    div = divergence_matrix(ch, r)
    n_s = ch.state_count
    points = np.array([(s,) + xs for s in range(n_s)
                       for xs in itertools.product(range(ch.input_count), repeat=k)], dtype=float)

    def state_path(row):
        s = int(row[0])
        path = [s]
        for x in row[1:]:
            s = int(step[int(x), s])
            path.append(s)
        return path

    def reward_one(row, u):
        path = state_path(row)
        xs = [int(x) for x in row[1:]]
        total = 0.0
        for ys in itertools.product(range(n_y), repeat=k):
            w = 1.0
            for i, y in enumerate(ys):
                w *= py[path[i], xs[i], y]
                if w == 0:
                    break
            if w == 0:
                continue
            d = div[pair_index(markov_node(ys, n_y), path[-1], n_s), u]
            if not np.isfinite(d):
                raise DomainError(f"support violation at state {row.astype(int).tolist()}")
            total += w * d
        return total

    def reward(Z, u):
        return np.array([reward_one(row, u) for row in np.atleast_2d(Z)])

    def transition(Z, u):
        Z = np.atleast_2d(Z)
        out = np.empty_like(Z)
        for i, row in enumerate(Z):
            s = int(step[int(row[1]), int(row[0])])
            out[i] = (s,) + tuple(row[2:]) + (u,)
        return out

    return DpProblem(ch.input_count, transition, reward, FiniteSpace(points))


def special_case_bound(ch, k, r, tol=1e-12, max_iter=100_000, damping=0.5):
    """RVI on ``special_case_dp``; returns a ``BoundResult``."""
    dp = special_case_dp(ch, k, r)
    res = relative_value_iteration(dp, tol=tol, max_iter=max_iter, damping=damping)
    return BoundResult(res.rho, "rvi", res.diagnostics(),
                       _provenance(ch, markov_qgraph(k, ch.output_count), r), extras={"rvi": res})
