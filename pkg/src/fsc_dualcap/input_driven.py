"""DP for input-driven channels, whose state evolves from the inputs alone.

The state is a pair of pmfs: ``beta`` over Q-graph nodes and ``gamma`` over
channel states, stored side by side as one vector ``[beta, gamma]``. The
reward is not linear in this state, so only the lattice solver applies.
"""

import math

import numpy as np

from .dp import DpProblem
from .errors import DomainError, Refusal
from .info import POSITIVE_TOL
from .results import BoundResult
from .unifilar import (SolverOptions, _pick_space, _provenance, check_preconditions,
                       solve_belief_dp)


def _require_input_driven(ch):
    if not ch.is_input_driven:
        raise DomainError("channel is not input-driven")


def _split(Z, n_q):
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    return Z[:, :n_q], Z[:, n_q:]


def _log_table(r):
    with np.errstate(divide="ignore"):
        return np.log2(r.table)


def _mixture_divergence(mix, logr):
    """``out[n, q] = D(mix[n] || R(.|q))``; ``inf`` where unsupported."""
    with np.errstate(divide="ignore", invalid="ignore"):
        neg_ent = np.where(mix > 0, mix * np.log2(np.where(mix > 0, mix, 1.0)), 0.0).sum(axis=1)
        cross = np.where(mix[:, None, :] > POSITIVE_TOL, mix[:, None, :] * logr[None, :, :], 0.0)
    return neg_ent[:, None] - cross.sum(axis=2)


def _routing(g):
    """One-hot ``route[q, y, q'] = 1{q' = phi(q, y)}``."""
    n_q, n_y = g.phi.shape
    route = np.zeros((n_q, n_y, n_q))
    route[np.arange(n_q)[:, None], np.arange(n_y)[None, :], g.phi] = 1.0
    return route


def _reward(B, Gm, u, py, logr):
    div = _mixture_divergence(Gm @ py[:, u, :], logr)
    with np.errstate(invalid="ignore"):
        out = np.where(B > POSITIVE_TOL, B * div, 0.0).sum(axis=1)
    bad = ~np.isfinite(out)
    if np.any(bad):
        i = np.flatnonzero(bad)[0]
        raise DomainError(f"support violation at beta={B[i].tolist()}, gamma={Gm[i].tolist()}")
    return out


def _transition(B, Gm, u, py, pn, route):
    mix = Gm @ py[:, u, :]
    return np.einsum("nq,ny,qyk->nk", B, mix, route), Gm @ pn[:, u, :]


def _check_shapes(ch, g, r):
    if g.output_count != ch.output_count or r.table.shape != (g.node_count, ch.output_count):
        raise DomainError("channel, Q-graph and test distribution alphabets disagree")


def input_driven_dp(ch, g, r):
    _require_input_driven(ch)
    _check_shapes(ch, g, r)
    n_q = g.node_count
    py, pn, logr, route = ch.p_y, ch.p_next, _log_table(r), _routing(g)

    def reward(Z, u):
        return _reward(*_split(Z, n_q), u, py, logr)

    def transition(Z, u):
        return np.concatenate(_transition(*_split(Z, n_q), u, py, pn, route), axis=1)

    return DpProblem(ch.input_count, transition, reward)


def reward_input_driven(beta, gamma, u, ch, r):
    """sum_q beta(q) D(sum_s gamma(s) P(.|u,s) || R(.|q)) in bits."""
    _require_input_driven(ch)
    B, Gm = np.atleast_2d(beta).astype(float), np.atleast_2d(gamma).astype(float)
    return float(_reward(B, Gm, u, ch.p_y, _log_table(r))[0])


def next_state_input_driven(beta, gamma, u, ch, g):
    """Returns ``(beta', gamma')``."""
    _require_input_driven(ch)
    B, Gm = np.atleast_2d(beta).astype(float), np.atleast_2d(gamma).astype(float)
    b2, g2 = _transition(B, Gm, u, ch.p_y, ch.p_next, _routing(g))
    return b2[0], g2[0]


def upper_bound_input_driven(ch, g, r, opts=None):
    """Capacity upper bound from the (node pmf, state pmf) DP, bits per use."""
    opts = opts or SolverOptions()
    _require_input_driven(ch)
    joint = check_preconditions(ch, g, r, opts.n_max, opts.require_indecomposable)
    dp = input_driven_dp(ch, g, r)
    n_q, n_s = g.node_count, ch.state_count
    order = [opts.s0] + [s for s in range(n_s) if s != opts.s0]
    starts = np.zeros((n_s, n_q + n_s))
    for i, s in enumerate(order):
        starts[i, g.q0] = 1.0
        starts[i, n_q + s] = 1.0
    changes = {"solver": "lattice"}
    if opts.state_space == "auto" and not r.strict_positive:
        # the product grid pairs node pmfs with state pmfs that never co-occur,
        # and zeros in R make some of those pairs infinitely rewarding
        changes["state_space"] = "reachable"
    opts = SolverOptions(**{**opts.__dict__, **changes})
    space = _pick_space(dp, [n_q, n_s], starts, opts)
    try:
        res, diag = solve_belief_dp(dp, space, starts, opts)
    except DomainError as exc:
        if space.mode != "dense" or "support violation" not in str(exc):
            raise
        raise Refusal("grid-outside-support",
                      f"{exc}; use the reachable state space with this test distribution") from None
    diag["jointly_indecomposable"] = joint.holds
    diag["joint_witness_depth"] = joint.depth
    diag["trivial_bound"] = math.log2(ch.output_count)
    return BoundResult(res.rho, "rvi", diag, _provenance(ch, g, r), extras={"rvi": res})
