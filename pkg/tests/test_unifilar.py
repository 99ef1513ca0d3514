import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fsc_dualcap.analytic import LOG2_3_2, dec_root, ising_h_table
from fsc_dualcap.channels import Fsc, make_dec, make_ising, make_post, make_trapdoor
from fsc_dualcap.errors import DomainError, Refusal
from fsc_dualcap.info import kl_bits
from fsc_dualcap.qgraph import dec_qgraph, markov_qgraph
from fsc_dualcap.testdist import (TestDist, binary_markov1, dec_test_dist, ising_test_dist,
                                  post_test_dist, trapdoor_test_dist)
from fsc_dualcap.unifilar import (SolverOptions, next_state_unifilar, pair_index,
                                  reward_unifilar, special_case_bound, special_case_dp,
                                  support_coordinates, transition_matrices, upper_bound_unifilar)

G1 = markov_qgraph(1, 2)
ISING_OPT = (0.68397, 0.87392, 0.64057, 0.79029)


def delta(q, s, n_q, n_s):
    z = np.zeros(n_q * n_s)
    z[pair_index(q, s, n_s)] = 1.0
    return z


# ---- reward -----------------------------------------------------------------

def test_trapdoor_point_mass_reward():
    z = delta(0, 0, 2, 2)
    assert reward_unifilar(z, 0, make_trapdoor(), trapdoor_test_dist()) == pytest.approx(LOG2_3_2)


def test_trapdoor_uniform_reward():
    assert reward_unifilar(np.full(4, 0.25), 0, make_trapdoor(),
                           trapdoor_test_dist()) == pytest.approx(LOG2_3_2)


@given(st.integers(0, 2 ** 32 - 1))
def test_trapdoor_reward_closed_form(seed):
    # g(z, 0) = log2(3/2) + (z00 + 3 z10 - 1) / 2 on (q, s) pairs
    z = np.random.default_rng(seed).dirichlet(np.ones(4))
    want = LOG2_3_2 + 0.5 * (z[0] + 3 * z[2] - 1)
    assert reward_unifilar(z, 0, make_trapdoor(), trapdoor_test_dist()) == pytest.approx(want)


def test_reward_vanishes_when_test_matches_channel():
    ch = make_ising()
    # on the one-node graph a single row cannot match both states, so use
    # a point-mass belief at s=0 and R equal to P(.|u=1, s=0)
    r = TestDist([ch.p_y[0, 1]])
    assert reward_unifilar(delta(0, 0, 1, 2), 1, ch, r) == pytest.approx(0.0, abs=1e-15)


@given(st.integers(0, 2 ** 32 - 1), st.integers(0, 1), st.integers(0, 1), st.integers(0, 1))
def test_point_mass_reward_is_single_divergence(seed, q, s, u):
    rng = np.random.default_rng(seed)
    r = TestDist(rng.dirichlet(np.ones(2), 2))
    for ch in (make_trapdoor(), make_ising(), make_post(0.3)):
        got = reward_unifilar(delta(q, s, 2, 2), u, ch, r)
        assert got == pytest.approx(kl_bits(ch.p_y[s, u], r.table[q]), abs=1e-12)


def test_support_violation_at_positive_mass():
    r = binary_markov1(0.0, 2 / 3)  # R(0|0) = 0
    with pytest.raises(DomainError, match="support"):
        reward_unifilar(delta(0, 0, 2, 2), 0, make_trapdoor(), r)
    # zero mass on the bad pair is fine
    assert math.isfinite(reward_unifilar(delta(1, 0, 2, 2), 0, make_trapdoor(), r))


def test_non_unifilar_rejected():
    ch = Fsc(np.full((2, 1, 2, 1), 0.5))
    with pytest.raises(DomainError):
        reward_unifilar([1, 0], 0, ch, TestDist([[1.0]]))


# ---- transition -------------------------------------------------------------

def test_trapdoor_uniform_step_with_input_one():
    z = next_state_unifilar(np.full(4, 0.25), 1, make_trapdoor(), G1)
    assert np.allclose(z, [0, 0.25, 0.25, 0.5])


def test_post_point_mass_is_fixed_under_repeat_input():
    z = next_state_unifilar(delta(0, 0, 2, 2), 0, make_post(0.3), G1)
    assert np.allclose(z, delta(0, 0, 2, 2))


CHANNELS = {
    "trapdoor": (make_trapdoor(), G1),
    "ising": (make_ising(), markov_qgraph(3, 2)),
    "post": (make_post(0.3), G1),
    "dec": (make_dec(0.4), dec_qgraph()),
}


@pytest.mark.parametrize("name", sorted(CHANNELS))
def test_transition_preserves_simplex(name):
    ch, g = CHANNELS[name]
    T = transition_matrices(ch, g)
    Z = np.random.default_rng(0).dirichlet(np.ones(T.shape[1]), 10_000)
    for u in range(ch.input_count):
        out = Z @ T[u]
        assert np.all(out >= 0)
        assert np.allclose(out.sum(axis=1), 1.0, atol=1e-12)


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(sorted(CHANNELS)))
def test_next_state_is_a_pmf(seed, name):
    ch, g = CHANNELS[name]
    z = np.random.default_rng(seed).dirichlet(np.ones(ch.state_count * g.node_count))
    for u in range(ch.input_count):
        out = next_state_unifilar(z, u, ch, g)
        assert abs(out.sum() - 1) < 1e-12 and out.min() >= 0


def test_support_coordinates_for_post():
    # starts are (every s, node 0); afterwards state and node both equal
    # the last output, so (node 1, state 0) is never reached
    assert support_coordinates(make_post(0.3), G1) == [pair_index(0, 0, 2), pair_index(0, 1, 2),
                                                       pair_index(1, 1, 2)]


# ---- upper bound ------------------------------------------------------------

def test_trapdoor_bound():
    res = upper_bound_unifilar(make_trapdoor(), G1, trapdoor_test_dist())
    assert res.value == pytest.approx(LOG2_3_2, abs=5e-3)
    assert 0.572 <= res.value <= 0.59
    d = res.diagnostics
    assert d["jointly_indecomposable"] is True
    assert d["trivial_bound"] == 1.0
    assert d["initial_value_spread"] >= 0


def test_post_bound():
    res = upper_bound_unifilar(make_post(0.5), G1, post_test_dist(0.5))
    assert res.value == pytest.approx(math.log2(1.25), abs=5e-3)


def test_dec_bound():
    p = dec_root(0.5)
    res = upper_bound_unifilar(make_dec(0.5), dec_qgraph(), dec_test_dist(0.5, p))
    assert res.value == pytest.approx(0.678, abs=5e-3)


def test_lattice_solver_refines_towards_the_bound():
    opts = dict(solver="lattice", state_space="grid")
    coarse = upper_bound_unifilar(make_post(0.5), G1, post_test_dist(0.5),
                                  SolverOptions(delta=0.05, **opts))
    fine = upper_bound_unifilar(make_post(0.5), G1, post_test_dist(0.5),
                                SolverOptions(delta=0.01, **opts))
    exact = math.log2(1.25)
    assert abs(fine.value - exact) <= abs(coarse.value - exact) + 1e-9


def test_refuses_support_violation():
    with pytest.raises(Refusal) as info:
        upper_bound_unifilar(make_trapdoor(), G1, binary_markov1(0.0, 2 / 3))
    assert info.value.reason == "support-violation"


def test_refuses_without_joint_indecomposability():
    with pytest.raises(Refusal) as info:
        upper_bound_unifilar(make_dec(0.0), dec_qgraph(), dec_test_dist(0.0, 0.5))
    assert info.value.reason == "not-jointly-indecomposable"


def test_opt_out_of_indecomposability_check():
    res = upper_bound_unifilar(make_dec(0.0), dec_qgraph(), dec_test_dist(0.0, 0.5),
                               SolverOptions(require_indecomposable=False))
    assert res.value == pytest.approx(1.0, abs=5e-3)


def test_refuses_undecided_check():
    with pytest.raises(Refusal) as info:
        upper_bound_unifilar(make_ising(), markov_qgraph(3, 2), ising_test_dist(*ISING_OPT),
                             SolverOptions(n_max=2))
    assert info.value.reason == "indecomposability-undecided"


def test_bad_initial_state():
    with pytest.raises(DomainError):
        upper_bound_unifilar(make_trapdoor(), G1, trapdoor_test_dist(), SolverOptions(s0=5))


def test_bad_delta():
    with pytest.raises(DomainError):
        upper_bound_unifilar(make_trapdoor(), G1, trapdoor_test_dist(),
                             SolverOptions(delta=0.03, state_space="grid"))


def test_result_serialises():
    res = upper_bound_unifilar(make_post(0.5), G1, post_test_dist(0.5))
    doc = res.to_dict()
    assert doc["method"] == "rvi"
    assert set(doc["provenance"]) == {"channel", "qgraph", "test_dist"}


# ---- finite special case ----------------------------------------------------

def test_ising_special_case_has_sixteen_states():
    dp = special_case_dp(make_ising(), 3, ising_test_dist(*ISING_OPT))
    assert len(dp.space.points) == 16
    # the Ising state is the previous input, so the window shifts as a whole
    assert dp.step([0, 0, 1, 1], 0).tolist() == [0, 1, 1, 0]
    assert dp.step([1, 0, 1, 0], 1).tolist() == [0, 1, 0, 1]


def test_ising_bellman_right_side_at_all_zero_state():
    a, b, c, d = ISING_OPT
    dp = special_case_dp(make_ising(), 3, ising_test_dist(*ISING_OPT))
    h = ising_h_table(*ISING_OPT)
    got = dp.gain([0, 0, 0, 0], 1) + h[(0, 0, 0, 1)]
    assert got == pytest.approx(0.25 * math.log2(1 / (32 * a ** 3 * c * d * (1 - a) ** 3)), abs=1e-12)


def implied_belief(ch, g, row):
    """Belief over (node, state) after feeding the window's inputs from the
    window's initial state, starting at any node."""
    z = delta(0, int(row[0]), g.node_count, ch.state_count)
    T = transition_matrices(ch, g)
    for x in row[1:]:
        z = z @ T[int(x)]
    return z


@pytest.mark.parametrize("make, k, r", [
    (make_ising, 3, ising_test_dist(*ISING_OPT)),
    (make_ising, 1, binary_markov1(0.7, 0.4)),
    (lambda: make_dec(0.3), 1, TestDist(np.full((4, 4), 0.25))),
    (lambda: make_dec(0.3), 2, TestDist(np.random.default_rng(0).dirichlet(np.ones(4), 16))),
], ids=["ising-3", "ising-1", "dec-1", "dec-2"])
def test_special_case_reward_equals_belief_reward(make, k, r):
    ch = make()
    g = markov_qgraph(k, ch.output_count)
    dp = special_case_dp(ch, k, r)
    for row in dp.space.points:
        z = implied_belief(ch, g, row)
        for u in range(ch.input_count):
            assert dp.gain(row, u) == pytest.approx(reward_unifilar(z, u, ch, r), abs=1e-12)


def test_dec_special_case_state_count():
    dp = special_case_dp(make_dec(0.3), 1, TestDist(np.full((4, 4), 0.25)))
    # (state before the window, last input): the DEC state is the last input
    assert len(dp.space.points) == 4


def test_special_case_refuses_output_dependent_state():
    with pytest.raises(Refusal) as info:
        special_case_dp(make_trapdoor(), 1, trapdoor_test_dist())
    assert info.value.reason == "state-depends-on-output"


def test_special_case_graph_mismatch():
    with pytest.raises(DomainError):
        special_case_dp(make_ising(), 2, trapdoor_test_dist())


def test_special_case_bound_matches_belief_dp():
    r = ising_test_dist(*ISING_OPT)
    fin = special_case_bound(make_ising(), 3, r)
    bel = upper_bound_unifilar(make_ising(), markov_qgraph(3, 2), r)
    assert fin.value == pytest.approx(bel.value, abs=1e-8)
    assert fin.value == pytest.approx(0.5482, abs=5e-4)
