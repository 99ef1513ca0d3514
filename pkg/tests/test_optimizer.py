import math

import numpy as np
import pytest

from fsc_dualcap.analytic import LOG2_3_2, dec_lower_bound, post_bound
from fsc_dualcap.channels import make_dec, make_post, make_trapdoor
from fsc_dualcap.errors import DomainError, SearchFailure
from fsc_dualcap.optimizer import SearchSpec, optimize_test_dist, rank_qgraph_pool, worker_count
from fsc_dualcap.qgraph import QGraph, dec_qgraph, markov_qgraph
from fsc_dualcap.testdist import binary_markov1, family_for
from fsc_dualcap.unifilar import upper_bound_unifilar

G1 = markov_qgraph(1, 2)


def post_spec(**kw):
    base = dict(starts=3, budget=60, seed=7)
    base.update(kw)
    return SearchSpec(**base)


def test_budget_of_one_is_a_single_evaluation():
    out = optimize_test_dist(make_post(0.5), G1, "trapdoor", SearchSpec(budget=1, x0=[0.6, 0.7]))
    assert out.evaluations == 1
    direct = upper_bound_unifilar(make_post(0.5), G1, binary_markov1(0.6, 0.7))
    assert out.value == direct.value
    assert np.allclose(out.params, [0.6, 0.7])


def test_post_optimum_within_a_millibit():
    out = optimize_test_dist(make_post(0.5), G1, "post", post_spec())
    assert out.value == pytest.approx(post_bound(0.5).value, abs=1e-3)
    assert out.evaluations <= 60
    assert out.result.diagnostics["search"]["family"] == "post"


def test_same_seed_same_trace():
    a = optimize_test_dist(make_post(0.3), G1, "trapdoor", post_spec(budget=40))
    b = optimize_test_dist(make_post(0.3), G1, "trapdoor", post_spec(budget=40))
    assert a.incumbent_trace == b.incumbent_trace
    assert [e.params for e in a.log] == [e.params for e in b.log]
    assert a.value == b.value


def test_threads_do_not_change_the_result(monkeypatch):
    a = optimize_test_dist(make_post(0.3), G1, "trapdoor", post_spec(budget=40))
    monkeypatch.setenv("FSC_DUALCAP_THREADS", "3")
    assert worker_count() == 3
    b = optimize_test_dist(make_post(0.3), G1, "trapdoor", post_spec(budget=40))
    assert a.incumbent_trace == b.incumbent_trace
    assert a.value == b.value


def test_bad_thread_setting(monkeypatch):
    monkeypatch.setenv("FSC_DUALCAP_THREADS", "many")
    with pytest.raises(DomainError):
        worker_count()


def test_incumbent_is_monotone():
    out = optimize_test_dist(make_post(0.3), G1, "trapdoor", post_spec(starts=5, budget=80))
    trace = out.incumbent_trace
    assert len(trace) == 5
    assert all(b <= a for a, b in zip(trace, trace[1:]))


def test_log_records_both_stages():
    out = optimize_test_dist(make_post(0.3), G1, "post", post_spec(budget=30, finalists=2))
    stages = {e.stage for e in out.log}
    assert stages == {"coarse", "fine"}
    assert all(e.delta == 0.02 for e in out.log if e.stage == "fine")
    assert sum(e.stage == "fine" for e in out.log) <= 2


def test_constraint_rejections_are_logged():
    spec = post_spec(budget=20, constraint=lambda v: [0.5 - v[0]])
    out = optimize_test_dist(make_post(0.3), G1, "post", spec)
    assert out.params[0] <= 0.5
    assert any(e.status == "constraint" for e in out.log) or all(e.params[0] <= 0.5 for e in out.log)


def test_all_infeasible_is_a_failure_report():
    spec = post_spec(budget=10, constraint=lambda v: [-1.0])
    with pytest.raises(SearchFailure) as info:
        optimize_test_dist(make_post(0.3), G1, "post", spec)
    assert info.value.report and all(e["status"] == "constraint" for e in info.value.report)


def test_refused_evaluations_are_logged():
    # DEC without erasures is refused on its own graph for every parameter
    spec = SearchSpec(starts=1, budget=5)
    with pytest.raises(SearchFailure) as info:
        optimize_test_dist(make_dec(0.0), dec_qgraph(), "dec", spec)
    assert all(e["status"].startswith("refused") for e in info.value.report)


@pytest.mark.parametrize("kw", [dict(budget=0), dict(starts=0), dict(step=0.1, min_step=0.2),
                                dict(coarse_delta=0.02, fine_delta=0.05), dict(mode="other"),
                                dict(wall_time=-1.0)])
def test_spec_validation(kw):
    with pytest.raises(DomainError):
        SearchSpec(**kw)


def test_x0_dimension_checked():
    with pytest.raises(DomainError):
        optimize_test_dist(make_post(0.3), G1, "post", SearchSpec(budget=3, x0=[0.5, 0.5]))


def test_dec_bound_stays_above_lower_bound():
    out = optimize_test_dist(make_dec(0.5), dec_qgraph(), "dec", SearchSpec(starts=2, budget=60))
    assert out.value >= dec_lower_bound(0.5).value - 1e-6


# ---- trapdoor: search recovers the known optimum ------------------------------

@pytest.fixture(scope="module")
def trapdoor_pool():
    spec = SearchSpec(starts=1, budget=150)
    return rank_qgraph_pool(make_trapdoor(), [G1], "trapdoor", spec)


def test_single_graph_pool(trapdoor_pool):
    assert len(trapdoor_pool.entries) == 1
    assert trapdoor_pool.skipped == []
    assert trapdoor_pool.best.graph == G1


def test_trapdoor_top_bound(trapdoor_pool):
    assert trapdoor_pool.best.value <= 0.586
    assert trapdoor_pool.best.value == pytest.approx(LOG2_3_2, abs=5e-3)


def test_trapdoor_parameters_near_two_thirds(trapdoor_pool):
    assert np.allclose(trapdoor_pool.best.outcome.params, [2 / 3, 2 / 3], atol=0.02)


# ---- pools --------------------------------------------------------------------

def test_pool_skips_graphs_without_joint_indecomposability():
    spec = SearchSpec(starts=1, budget=8)
    ranking = rank_qgraph_pool(make_dec(0.0), [dec_qgraph(), markov_qgraph(1, 4)], "full", spec)
    assert [i for i, _, _ in ranking.skipped] == [0]
    assert ranking.skipped[0][2] == "not-jointly-indecomposable"
    assert len(ranking.entries) == 1


def test_pool_sorted_ascending():
    spec = SearchSpec(starts=1, budget=10)
    pool = [QGraph([[0, 0]]), G1]
    ranking = rank_qgraph_pool(make_post(0.3), pool, "full", spec)
    values = [e.value for e in ranking.entries]
    assert values == sorted(values)
    assert all(math.isfinite(v) for v in values)


def test_empty_pool():
    with pytest.raises(DomainError):
        rank_qgraph_pool(make_post(0.3), [])


def test_family_list_must_match_pool():
    with pytest.raises(DomainError):
        rank_qgraph_pool(make_post(0.3), [G1], ["post", "full"])


def test_pool_with_nothing_usable():
    with pytest.raises(SearchFailure):
        rank_qgraph_pool(make_dec(0.0), [dec_qgraph()], "dec", SearchSpec(budget=3))


def test_named_family_accepted():
    fam = family_for("post", G1)
    out = optimize_test_dist(make_post(0.5), G1, fam, SearchSpec(budget=1))
    assert out.evaluations == 1
