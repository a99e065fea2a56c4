import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from distclust.core import Dataset, closeness_error, lp_cost
from distclust.distsim import PartitionSpec, index_bits, partition
from distclust.oracle import brute_force_opt
from distclust.stability import (ESTIMATE, StabilityParams, ThresholdGraph, check_lp_structure,
                                 check_structural_properties, estimate_opt, estimate_wavg,
                                 greedy_mismatch, iterative_greedy, large_cluster_refine,
                                 lp_threshold, run_algorithm3, run_kcenter_2as, run_lp_variant,
                                 weighted_median)
from distclust.synth import GenSpec, generate, planted_clique_graph

from conftest import random_points


# threshold graphs and the greedy -----------------------------------------------------------

def test_threshold_graph_edges(line4):
    g = ThresholdGraph.build(line4, 1.0)
    assert g.adj.sum() == 4 and not g.adj.diagonal().any()
    assert g.adj[0, 1] and g.adj[2, 3] and not g.adj[1, 2]


def test_asymmetric_adjacency_rejected():
    with pytest.raises(ValueError):
        ThresholdGraph.from_adjacency([[0, 1], [0, 0]])


def test_greedy_recovers_disjoint_cliques():
    pg = planted_clique_graph([4, 3, 2], 0)
    res = iterative_greedy(ThresholdGraph.from_adjacency(pg.adjacency), 3)
    assert [sorted(c.tolist()) for c in res.clusters] == [c.tolist() for c in pg.cliques]
    assert greedy_mismatch(res.clusters, pg.cliques) == 0


def test_greedy_single_node():
    res = iterative_greedy(ThresholdGraph.from_adjacency(np.zeros((1, 1))), 1)
    assert res.centers == [0] and res.clusters[0].tolist() == [0]


def test_greedy_exhausts_gracefully():
    res = iterative_greedy(ThresholdGraph.from_adjacency(np.ones((2, 2))), 3)
    assert res.exhausted and res.centers[1:] == [None, None]
    assert res.labels(2).tolist() == [0, 0]


def test_greedy_uses_weights():
    # edge 0-1 plus an isolated node; the isolated node wins once it outweighs the pair
    adj = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]])
    assert iterative_greedy(ThresholdGraph.from_adjacency(adj, [1, 1, 1]), 1).centers == [0]
    assert iterative_greedy(ThresholdGraph.from_adjacency(adj, [1, 1, 2]), 1).centers == [0]
    res = iterative_greedy(ThresholdGraph.from_adjacency(adj, [1, 1, 5]), 2)
    assert res.centers == [2, 0]


@given(st.lists(st.integers(1, 8), min_size=1, max_size=5), st.integers(0, 10), st.integers(0, 10**6))
def test_greedy_mismatch_at_most_three_bad(sizes, n_bad, seed):
    pg = planted_clique_graph(sizes, n_bad, seed)
    res = iterative_greedy(ThresholdGraph.from_adjacency(pg.adjacency), len(sizes))
    assert greedy_mismatch(res.clusters, pg.cliques) <= 3 * n_bad


def test_mismatch_counts_missing_nodes():
    assert greedy_mismatch([np.array([0, 1]), np.array([2])], [np.array([0, 1, 2]), np.array([3])]) == 2


# structural checks ------------------------------------------------------------------------------

def _instance(seed, bad=0, n=400, k=4, p=1, eps=0.005):
    return generate(GenSpec("as_certified", n=n, d=2, k=k, seed=seed, bad_budget=bad, p=p, eps=eps))


@pytest.mark.parametrize("seed", range(5))
def test_no_violators_without_bad_points(seed):
    inst = _instance(seed)
    rep = check_structural_properties(inst.dataset, inst.truth, 1.0, 0.005)
    assert rep.bad_count == 0 and rep.ok


@pytest.mark.parametrize("bad", [1, 4, 9])
def test_violators_match_injected(bad):
    inst = _instance(3, bad, n=1000)
    rep = check_structural_properties(inst.dataset, inst.truth, 1.0, 0.005)
    assert np.flatnonzero(rep.bad).tolist() == inst.certification["bad_ids"]


@pytest.mark.parametrize("seed", range(10))
def test_markov_count(seed):
    ds = random_points(seed, 14)
    truth = brute_force_opt(ds, 3).clustering
    rep = check_structural_properties(ds, truth, 1.0, 0.05)
    assert rep.markov_lhs <= rep.markov_rhs * (1 + 1e-12)
    assert rep.p1_count <= rep.p1_bound


def test_lp_structure_relation_at_p1():
    inst = _instance(2, 3)
    rep = check_lp_structure(inst.dataset, inst.truth, 1.0, 0.005, 1.0)
    w_avg = rep.opt_cost / inst.dataset.n
    # the l_p threshold at p=1 is half the k-median threshold
    assert rep.t == pytest.approx(StabilityParams(1.0, 0.005).threshold(w_avg) / 2)
    assert lp_threshold(1, 0.5, 36, 1, 1) == 2.0


# algorithm 3 ----------------------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("bad", [0, 3, 8])
def test_algorithm3_error_bound(seed, bad):
    inst = _instance(seed, bad, n=1000)
    parts = partition(inst.dataset, PartitionSpec("random", 3, seed))
    w = inst.certification["w_avg"]
    res = run_algorithm3(parts, 4, StabilityParams(1.0, 0.005, w_avg=w))
    err = closeness_error(res.clustering, inst.truth)
    assert err <= 13 * bad / inst.dataset.n
    if bad == 0:
        assert err == 0
    P, I = res.ledger.point_bits, res.ledger.index_bits
    assert res.ledger.total_bits <= 2 * 3 * 4 * (P + I)


def test_algorithm3_estimate_mode_charges_estimation():
    inst = _instance(1)
    parts = partition(inst.dataset, PartitionSpec("random", 3, 1))
    known = run_algorithm3(parts, 4, StabilityParams(1.0, 0.005, w_avg=inst.certification["w_avg"]))
    est = run_algorithm3(parts, 4, StabilityParams(1.0, 0.005), seed=1)
    assert est.ledger.total_bits > known.ledger.total_bits
    assert est.info["w_avg"] >= inst.certification["w_avg"] * (1 - 1e-9)


def test_wavg_estimate_exact_with_oracle():
    ds = random_points(0, 9)
    w = estimate_wavg([ds], 2, "oracle", "oracle")
    assert w == pytest.approx(brute_force_opt(ds, 2).cost / 9)


@pytest.mark.parametrize("seed", range(10))
def test_wavg_estimate_overestimates(seed):
    ds = random_points(seed, 14)
    parts = partition(ds, PartitionSpec("random", 2, seed))
    assert estimate_wavg(parts, 2, seed=seed) >= brute_force_opt(ds, 2).cost / 14 * (1 - 1e-12)
    cost, ledger = estimate_opt(parts, 2, 2.0, seed=seed)
    assert cost >= brute_force_opt(ds, 2, p=2).cost * (1 - 1e-12) and ledger.total_bits > 0


# large-cluster refinement ------------------------------------------------------------------------

def test_weighted_median():
    d = np.array([[1.0, 2.0, 3.0], [3.0, 2.0, 1.0]])
    assert weighted_median(d, np.array([1, 1, 1])).tolist() == [2.0, 2.0]
    assert weighted_median(d, np.array([5, 1, 1])).tolist() == [1.0, 3.0]


@pytest.mark.parametrize("seed", range(4))
def test_refine_keeps_good_points_and_bounds_error(seed):
    eps = 0.005
    inst = _instance(seed, 6)
    n = inst.dataset.n
    parts = partition(inst.dataset, PartitionSpec("random", 3, seed))
    res = run_algorithm3(parts, 4, StabilityParams(1.0, eps, w_avg=inst.certification["w_avg"]))
    refined, ledger = large_cluster_refine(parts, res)
    bad = np.zeros(n, dtype=bool)
    bad[inst.certification["bad_ids"]] = True
    good = np.flatnonzero(~bad)
    # good points keep their cluster under the refinement
    assert np.array_equal(refined.labels[good], res.clustering.labels[good])
    assert closeness_error(refined, inst.truth) <= 6 * eps
    s, m = res.summary.n, 3
    P, I = ledger.point_bits, ledger.index_bits
    assert ledger.total_bits - res.ledger.total_bits == (m - 1) * s * (P + 2 * I)   # machine 1 is free
    assert ledger.total_bits <= 2 * (m * m * 4 * P + m * 4 * I) + 2 * m * s * I


# l_p variant -------------------------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("p,eps", [(2.0, 1e-4), (3.0, 1e-5)])
def test_lp_variant_exact_without_bad(seed, p, eps):
    inst = _instance(seed, 0, n=600, p=p, eps=eps)
    parts = partition(inst.dataset, PartitionSpec("random", 3, seed))
    res = run_lp_variant(parts, 4, StabilityParams(1.0, eps, p=p, opt_cost=inst.certification["opt_cost"]))
    assert closeness_error(res.clustering, inst.truth) == 0


def test_lp_variant_with_bad_points():
    inst = _instance(0, 3, n=600, p=2.0, eps=1e-4)
    parts = partition(inst.dataset, PartitionSpec("random", 3, 0))
    res = run_lp_variant(parts, 4, StabilityParams(1.0, 1e-4, p=2.0, opt_cost=inst.certification["opt_cost"]))
    rep = check_lp_structure(inst.dataset, inst.truth, 1.0, 1e-4, 2.0)
    assert closeness_error(res.clustering, inst.truth) <= 13 * rep.bad_count / inst.dataset.n


def test_lp_variant_refuses_large_p():
    ds = random_points(0, 16)
    with pytest.raises(ValueError):
        run_lp_variant([ds], 2, StabilityParams(1.0, 0.1, p=4.0, opt_cost=1.0))
    with pytest.raises(ValueError):
        run_lp_variant([ds], 2, StabilityParams(1.0, 0.1, p=0.5, opt_cost=1.0))


def test_params_validate():
    with pytest.raises(ValueError):
        StabilityParams(0.0, 0.1)
    with pytest.raises(ValueError):
        StabilityParams(1.0, 1.5)
    assert StabilityParams(2.0, 0.5).threshold(9.0) == 2.0


# k-center under (2,0)-stability -----------------------------------------------------------------

@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("mode", ["known", ESTIMATE])
def test_kcenter_exact_recovery(seed, mode):
    inst = generate(GenSpec("kcenter_2as", n=120, d=2, k=3, seed=seed))
    parts = partition(inst.dataset, PartitionSpec("random", 4, seed))
    r = inst.certification["r_star"] if mode == "known" else ESTIMATE
    res = run_kcenter_2as(parts, 3, r)
    assert closeness_error(res.clustering, inst.truth) == 0
    if mode == "known":
        assert res.ledger.total_bits <= 2 * 4 * 3 * 2 * 64
    else:
        assert res.r_star <= inst.certification["r_star"] * (1 + 1e-12)
        assert res.probes > 1


def test_kcenter_single_cluster():
    ds = random_points(0, 10)
    res = run_kcenter_2as(partition(ds, PartitionSpec("round_robin", 2)), 1, ESTIMATE)
    assert set(res.clustering.labels.tolist()) == {0}
    assert lp_cost(ds, res.clustering) <= 2 * res.r_star


def test_kcenter_wrong_radius_raises():
    inst = generate(GenSpec("kcenter_2as", n=60, d=2, k=3, seed=0))
    with pytest.raises(ValueError):
        run_kcenter_2as([inst.dataset], 3, 1e-6)


def test_index_bits_used_for_explicit_metric():
    pts = np.array([0.0, 1.0, 10.0, 11.0])
    ds = Dataset.from_matrix(np.abs(pts[:, None] - pts[None, :]))
    res = run_kcenter_2as(partition(ds, PartitionSpec("round_robin", 2)), 2, 0.5)
    assert res.ledger.point_bits == index_bits(4)
    assert math.isclose(res.r_star, 0.5)
