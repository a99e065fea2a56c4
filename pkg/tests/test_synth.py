import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distclust.core import OUTLIER, load_dataset
from distclust.spectral import check_spectral_stability
from distclust.stability import check_structural_properties
from distclust.synth import (CertificationError, GenSpec, InfeasibleSpecError, generate, load_truth,
                             planted_clique_graph, save_instance, truth_path)


def test_separated_fixture():
    ds, truth, cert = generate(GenSpec("separated_clusters", n=4, d=1, k=2))
    assert ds.coords.ravel().tolist() == [0, 1, 10, 11]
    assert truth.labels.tolist() == [0, 0, 1, 1]


@pytest.mark.parametrize("seed", range(5))
def test_certified_without_bad_points(seed):
    ds, truth, cert = generate(GenSpec("as_certified", n=300, d=3, k=3, seed=seed))
    assert cert["certified"] and cert["bad_count"] == 0
    rep = check_structural_properties(ds, truth, 1.0, 0.005)
    assert rep.bad_count == 0
    assert cert["max_good_intra"] <= 2 * cert["t"] and cert["min_good_inter"] > 16 * cert["t"]


@pytest.mark.parametrize("kind", ["far", "ambiguous", "mixed"])
def test_bad_points_are_exactly_the_injected(kind):
    ds, truth, cert = generate(GenSpec("as_certified", n=1000, d=2, k=4, seed=2, bad_budget=6, bad_kind=kind))
    rep = check_structural_properties(ds, truth, 1.0, 0.005)
    assert np.flatnonzero(rep.bad).tolist() == cert["bad_ids"]


def test_infeasible_specs_name_the_problem():
    with pytest.raises(InfeasibleSpecError, match="18"):
        generate(GenSpec("as_certified", n=100, d=2, k=2, bad_budget=40))
    with pytest.raises(InfeasibleSpecError, match="d >= 2"):
        generate(GenSpec("as_certified", n=100, d=1, k=2))
    with pytest.raises(InfeasibleSpecError, match="d > k"):
        generate(GenSpec("spectral_certified", n=30, d=3, k=3))
    with pytest.raises(ValueError):
        GenSpec("nope", n=3, d=1, k=1)
    with pytest.raises(ValueError):
        GenSpec("separated_clusters", n=2, d=1, k=3)


@pytest.mark.parametrize("seed", range(4))
def test_spectral_margin(seed):
    ds, truth, cert = generate(GenSpec("spectral_certified", n=200, d=6, k=3, seed=seed, margin=0.5))
    holds, rep = check_spectral_stability(ds.coords, truth.labels, truth.centers)
    assert holds and rep["min_ratio"] >= 1.5 - 1e-9
    assert np.linalg.norm(ds.coords, 2) == pytest.approx(3.0)


@pytest.mark.parametrize("seed", range(4))
def test_kcenter_instance(seed):
    ds, truth, cert = generate(GenSpec("kcenter_2as", n=90, d=3, k=3, seed=seed))
    assert cert["min_cross"] > 2 * cert["r_star"]
    dist = ds.dist_to_ids(truth.center_ids)[np.arange(ds.n), truth.labels]
    assert dist.max() == pytest.approx(cert["r_star"])


def test_outliers_far_away():
    ds, truth, cert = generate(GenSpec("outlier_injected", n=40, d=2, k=3, z=4, seed=1))
    assert (truth.labels == OUTLIER).sum() == 4 and truth.z == 4
    assert cert["min_outlier_gap"] >= 2 * cert["diameter"]


@settings(max_examples=15)
@given(st.sampled_from(["separated_clusters", "as_certified", "spectral_certified", "kcenter_2as",
                        "outlier_injected"]), st.integers(0, 1000))
def test_deterministic(kind, seed):
    spec = GenSpec(kind, n=60, d=4, k=2, seed=seed, z=2 if kind == "outlier_injected" else 0)
    a, b = generate(spec), generate(spec)
    assert np.array_equal(a.dataset.coords, b.dataset.coords)
    assert np.array_equal(a.truth.labels, b.truth.labels)


def test_certification_failure_reported(monkeypatch):
    import distclust.synth as synth
    monkeypatch.setitem(synth._BUILDERS, "kcenter_2as",
                        lambda spec, rng: synth.Instance(None, None, {"certified": False}))
    with pytest.raises(CertificationError):
        generate(GenSpec("kcenter_2as", n=10, d=2, k=2))


def test_sidecar_round_trip(tmp_path):
    inst = generate(GenSpec("outlier_injected", n=20, d=2, k=2, z=1, seed=3))
    path = tmp_path / "inst.json"
    side = save_instance(inst, path)
    assert side == truth_path(path) == tmp_path / "inst.truth.json"
    truth, cert = load_truth(side)
    assert np.array_equal(truth.labels, inst.truth.labels) and truth.z == 1
    assert cert["certified"]
    assert np.array_equal(load_dataset(path).coords, inst.dataset.coords)


def test_planted_graph_conditions():
    pg = planted_clique_graph([5, 4, 3], 6, seed=2)
    adj = pg.adjacency
    for c in pg.cliques:
        sub = adj[np.ix_(c, c)]
        assert sub.sum() == len(c) * (len(c) - 1)
    for i, a in enumerate(pg.cliques):
        for b in pg.cliques[i + 1:]:
            assert not adj[np.ix_(a, b)].any()
            assert not (adj[a].astype(int) @ adj[b].astype(int).T).any()
    assert pg.bad.tolist() == list(range(12, 18))
