import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fsc_dualcap.channels import make_dec, make_ising, make_post, make_trapdoor
from fsc_dualcap.errors import DomainError, SchemaError
from fsc_dualcap.qgraph import dec_qgraph, markov_node, markov_qgraph
from fsc_dualcap.testdist import (ISING_PAIRS, TestDist, binary_markov1, dec_test_dist,
                                  family_for, full_family, ising_test_dist, post_k,
                                  post_test_dist, reachable_pairs, stick_breaking,
                                  stick_breaking_inverse, trapdoor_test_dist, validate_support)

unit = st.floats(0.001, 0.999)


def test_trapdoor_table():
    assert trapdoor_test_dist().table[0, 0] == 2 / 3
    assert trapdoor_test_dist().table[1, 1] == 2 / 3


def test_dec_third_row():
    eps, p = 0.3, 0.6
    row = dec_test_dist(eps, p).table[2]
    assert np.allclose(row, [0.5 * p * 0.7, 0.4 * 0.7, 0.5 * p * 0.7, eps])


def test_post_k_at_half():
    assert post_k(0.5) == pytest.approx(0.8, abs=1e-15)
    assert post_test_dist(0.5).table[0, 0] == pytest.approx(0.8)


@given(unit, unit, unit, unit)
def test_ising_complement_symmetry(a, b, c, d):
    t = ising_test_dist(a, b, c, d).table
    for w, wc in ISING_PAIRS:
        assert t[markov_node(w, 2), 0] == pytest.approx(1 - t[markov_node(wc, 2), 0])
    assert np.allclose(t.sum(axis=1), 1.0)


@given(unit, unit)
def test_constructors_row_stochastic(e, p):
    for r in (dec_test_dist(e, p), post_test_dist(p), binary_markov1(e, p)):
        assert np.allclose(r.table.sum(axis=1), 1.0, atol=1e-12)


def test_out_of_range_parameters():
    with pytest.raises(DomainError):
        ising_test_dist(0.0, 0.5, 0.5, 0.5)
    with pytest.raises(DomainError):
        dec_test_dist(1.2, 0.5)
    with pytest.raises(DomainError):
        TestDist([[0.5, 0.6]])


def test_strict_positive_flag():
    assert trapdoor_test_dist().strict_positive
    assert not dec_test_dist(0.5, 0.6).strict_positive


def test_dec_matrix_satisfies_support():
    for eps in (0.1, 0.5, 0.9):
        assert validate_support(dec_test_dist(eps, 0.6), make_dec(eps), dec_qgraph()) == []


@given(st.integers(0, 2 ** 32 - 1))
def test_strictly_positive_tables_always_pass(seed):
    rng = np.random.default_rng(seed)
    g = markov_qgraph(1, 2)
    r = TestDist(rng.dirichlet(np.ones(2), 2))
    for ch in (make_trapdoor(), make_ising(), make_post(0.3)):
        assert validate_support(r, ch, g) == []


def test_zero_entry_is_reported():
    r = binary_markov1(0.0, 2 / 3)  # R(0 | 0) = 0
    bad = validate_support(r, make_trapdoor(), markov_qgraph(1, 2))
    assert bad
    assert all(v.q == 0 and v.y == 0 for v in bad)
    # from (s=0, q=0), input 0 emits y = 0 for sure
    assert (0, 0, 0, 0) in [tuple(v) for v in bad]


def test_dimension_mismatch():
    with pytest.raises(DomainError):
        validate_support(trapdoor_test_dist(), make_dec(0.5), dec_qgraph())


def test_reachable_pairs_default_starts():
    pairs = reachable_pairs(make_post(0.3), markov_qgraph(1, 2))
    # the POST state equals the last output, which is also the node
    assert pairs == {(0, 0), (1, 0), (1, 1)}


def test_json_round_trip():
    r = ising_test_dist(0.68, 0.87, 0.64, 0.79)
    assert np.array_equal(TestDist.from_dict(r.to_dict()).table, r.table)
    with pytest.raises(SchemaError):
        TestDist.from_dict({"rows": []})


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=5))
def test_stick_breaking_gives_pmf(v):
    p = stick_breaking(v)
    assert np.all(p >= -1e-15)
    assert abs(p.sum() - 1) < 1e-12


@given(st.lists(st.floats(0.01, 0.99), min_size=1, max_size=5))
def test_stick_breaking_inverse_round_trip(v):
    assert np.allclose(stick_breaking_inverse(stick_breaking(v)), v, atol=1e-9)


def test_full_family_default_is_uniform():
    fam = full_family(3, 4)
    assert fam.dim == 9
    assert np.allclose(fam(fam.default()).table, 0.25)


def test_named_families():
    g1 = markov_qgraph(1, 2)
    assert family_for("trapdoor", g1)([2 / 3, 2 / 3]).table[0, 0] == pytest.approx(2 / 3)
    assert family_for("post", g1).dim == 1
    assert family_for("ising", markov_qgraph(3, 2)).dim == 4
    assert family_for("dec", dec_qgraph()).dim == 2
    with pytest.raises(DomainError):
        family_for("ising", g1)
    with pytest.raises(DomainError):
        family_for("nope", g1)


def test_family_clamps_parameters():
    fam = family_for("trapdoor", markov_qgraph(1, 2))
    assert fam([0.0, 1.0]).table.min() >= 1e-4 - 1e-15
