import math

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from fsc_dualcap.info import binary_entropy, entropy_bits, kl_bits, kl_rows

pmf = st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6).map(lambda v: np.array(v) / sum(v))


def test_kl_of_point_mass_against_uniform_is_log_size():
    assert kl_bits([1.0, 0.0, 0.0, 0.0], [0.25] * 4) == 2.0


def test_kl_infinite_when_support_is_missing():
    assert kl_bits([0.5, 0.5], [1.0, 0.0]) == math.inf


def test_binary_entropy_endpoints_and_midpoint():
    assert binary_entropy(0.0) == 0.0
    assert binary_entropy(1.0) == 0.0
    assert binary_entropy(0.5) == 1.0


@given(pmf, pmf)
def test_kl_is_nonnegative_and_zero_on_diagonal(p, q):
    if len(p) != len(q):
        q = np.full(len(p), 1.0 / len(p))
    assert kl_bits(p, q) >= -1e-12
    assert abs(kl_bits(p, p)) < 1e-12


@given(pmf)
def test_kl_to_uniform_is_entropy_gap(p):
    n = len(p)
    assert math.isclose(kl_bits(p, np.full(n, 1 / n)), math.log2(n) - entropy_bits(p), abs_tol=1e-12)


def test_kl_rows_is_pairwise(rng):
    P = rng.dirichlet(np.ones(3), 5)
    Q = rng.dirichlet(np.ones(3), 4)
    out = kl_rows(P, Q)
    assert out.shape == (5, 4)
    assert out[2, 3] == kl_bits(P[2], Q[3])
