"""Coarsening and condensed-container contracts.

Oracles: hand-computed supernode wiring on a four-node graph, an explicit
matrix-inverse solution for the propagation fit, and the nesting argument
for residual monotonicity.
"""

import numpy as np
import pytest

from graphslim.coarsen import (CoarsenError, coarsen_averaging, coarsen_vng,
                               fit_propagation_adjacency)
from graphslim.condense import CondensedGraph, CondenseError
from graphslim.data import Graph, normalize_adjacency


def make_graph(labels, src, dst, features=None, train=None, d=3, seed=0):
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    rng = np.random.default_rng(seed)
    feats = rng.standard_normal((n, d)) if features is None else np.asarray(features, float)
    train = np.ones(n, bool) if train is None else np.asarray(train, bool)
    return Graph(feats, labels, np.asarray(src, np.int64),
                 np.asarray(dst, np.int64), np.ones(len(src)),
                 train, np.zeros(n, bool), np.zeros(n, bool))


# ------------------------------------------------------- condensed container

def test_condensed_graph_validation():
    x = np.zeros((3, 2))
    y = np.zeros(3, dtype=np.int64)
    ok = np.array([[0, .5, 0], [.5, 0, 1], [0, 1, 0]], dtype=float)
    cg = CondensedGraph(x, y, ok)
    assert not cg.structure_free and cg.n == 3
    with pytest.raises(CondenseError):
        CondensedGraph(x, y, np.triu(ok))  # asymmetric
    bad_diag = ok.copy()
    np.fill_diagonal(bad_diag, 0.3)
    with pytest.raises(CondenseError):
        CondensedGraph(x, y, bad_diag)
    with pytest.raises(CondenseError):
        CondensedGraph(x, y, ok * 3.0)  # weights above 1
    with pytest.raises(CondenseError):
        CondensedGraph(x, y, ok, delta=1.0)
    with pytest.raises(CondenseError):
        CondensedGraph(x, y[:2], ok)


def test_condensed_to_graph_applies_delta_only_on_request():
    x = np.zeros((3, 1))
    y = np.array([0, 1, 2])
    a = np.array([[0, .8, .05], [.8, 0, 0], [.05, 0, 0]])
    cg = CondensedGraph(x, y, a, delta=0.1)
    assert cg.to_graph(apply_delta=False).num_edges == 2
    g = cg.to_graph(apply_delta=True)
    assert g.num_edges == 1 and g.train_mask.all()


def test_condensed_structure_free_roundtrip(tmp_path):
    cg = CondensedGraph(np.arange(6, dtype=float).reshape(3, 2),
                        np.array([0, 1, 1]), None, delta=0.05,
                        meta={"method": "gcondx"})
    assert cg.to_graph().num_edges == 0
    cg.save(str(tmp_path / "b"))
    back = CondensedGraph.load(str(tmp_path / "b"))
    assert back.structure_free and back.delta == 0.05
    assert back.meta["method"] == "gcondx"
    assert np.array_equal(back.features, cg.features)
    assert np.array_equal(back.labels, cg.labels)


def test_condensed_bundle_roundtrip_is_exact(tmp_path):
    rng = np.random.default_rng(3)
    a = rng.random((4, 4)) * 0.9
    a = 0.5 * (a + a.T)
    np.fill_diagonal(a, 0.0)
    cg = CondensedGraph(rng.standard_normal((4, 3)), np.array([0, 0, 1, 1]),
                        a, delta=0.2, meta={"method": "gcond", "rate": 0.026})
    cg.save(str(tmp_path / "b"))
    back = CondensedGraph.load(str(tmp_path / "b"))
    assert np.array_equal(back.features, cg.features)
    assert np.allclose(back.dense_adjacency(), a, atol=0)
    assert back.meta == cg.meta and back.delta == 0.2


# ---------------------------------------------------------------- averaging

def test_averaging_single_class_single_group_is_exact_mean():
    g = make_graph([0, 0, 0], src=[0, 1], dst=[1, 2], seed=1)
    cg = coarsen_averaging(g, np.array([1]))
    assert cg.n == 1
    assert np.allclose(cg.features[0], g.features.mean(axis=0), atol=1e-12)
    assert cg.labels.tolist() == [0]


def test_averaging_full_budget_keeps_original_nodes():
    g = make_graph([0, 0, 1, 1], src=[0, 2], dst=[1, 3], seed=2)
    cg = coarsen_averaging(g, np.array([2, 2]))
    got = {tuple(row) for row in np.round(cg.features, 12)}
    want = {tuple(row) for row in np.round(g.features, 12)}
    assert got == want


def test_averaging_supernode_wiring_matches_hand_count():
    # classes {0,1} and {2,3}; one intra edge each, three inter edges
    g = make_graph([0, 0, 1, 1], src=[0, 2, 0, 1, 1], dst=[1, 3, 2, 3, 2])
    cg = coarsen_averaging(g, np.array([1, 1]))
    a = cg.dense_adjacency()
    # raw P^T A P is [[2,3],[3,2]]; diagonal zeroed then peak-scaled to 1
    assert a[0, 1] == pytest.approx(1.0)
    assert a[0, 0] == 0.0 and a[1, 1] == 0.0


def test_averaging_features_stay_in_group_hull(sbm_small):
    from graphslim.data import ReductionConfig, reduction_budget
    budget = reduction_budget(ReductionConfig(rate=0.15), sbm_small.labels,
                              sbm_small.train_mask)
    cg = coarsen_averaging(sbm_small, budget, seed=4)
    lo = sbm_small.features[sbm_small.train_mask].min(axis=0) - 1e-12
    hi = sbm_small.features[sbm_small.train_mask].max(axis=0) + 1e-12
    assert np.all(cg.features >= lo) and np.all(cg.features <= hi)
    assert np.array_equal(np.bincount(cg.labels), budget)


def test_averaging_rejects_oversized_budget():
    g = make_graph([0, 0, 1], src=[], dst=[])
    with pytest.raises(CoarsenError):
        coarsen_averaging(g, np.array([3, 1]))


# ---------------------------------------------------------------------- vng

def test_vng_identity_budget_reproduces_propagation():
    g = make_graph([0] * 5, src=[0, 1, 2, 3], dst=[1, 2, 3, 4], d=8, seed=5)
    ahat = normalize_adjacency(g.adjacency(), add_self_loops=True)
    b = np.asarray(ahat @ g.features)
    # every node its own supernode: the raw fit must reproduce propagation
    a = fit_propagation_adjacency(np.eye(5), b, b)
    assert np.linalg.norm(a @ b - b) <= 1e-4


def test_fit_matches_explicit_inverse_oracle():
    rng = np.random.default_rng(6)
    p = np.zeros((6, 3))
    p[np.arange(6), np.array([0, 0, 1, 1, 2, 2])] = 1.0
    coarse_x = rng.standard_normal((3, 4))
    target = rng.standard_normal((6, 4))
    got = fit_propagation_adjacency(p, coarse_x, target, ridge=1e-6)
    inv_p = np.linalg.inv(p.T @ p + 1e-6 * np.eye(3))
    inv_x = np.linalg.inv(coarse_x @ coarse_x.T + 1e-6 * np.eye(3))
    oracle = inv_p @ (p.T @ target @ coarse_x.T) @ inv_x
    assert np.allclose(got, oracle, atol=1e-8)


def test_vng_merges_duplicate_nodes_to_shared_feature():
    # nodes 0 and 1 share features and the neighbor 2, so their propagated
    # rows coincide and a budget of 1 merges them onto that shared row
    feats = np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 0.0]])
    g = make_graph([0, 0, 1], src=[0, 1], dst=[2, 2], features=feats)
    cg = coarsen_vng(g, np.array([1, 1]))
    ahat = normalize_adjacency(g.adjacency(), add_self_loops=True)
    b = np.asarray(ahat @ feats)
    assert np.allclose(b[0], b[1], atol=1e-12)
    assert np.allclose(cg.features[0], b[0], atol=1e-12)


def test_vng_residual_non_increasing_under_refinement():
    rng = np.random.default_rng(7)
    target = rng.standard_normal((8, 5))
    fine_assign = np.repeat(np.arange(4), 2)
    coarse_assign = np.repeat(np.arange(2), 4)
    def residual(assign, m):
        p = np.zeros((8, m))
        p[np.arange(8), assign] = 1.0
        cx = np.stack([target[assign == k].mean(axis=0) for k in range(m)])
        a = fit_propagation_adjacency(p, cx, target)
        return np.linalg.norm(p @ a @ cx - target)
    assert residual(fine_assign, 4) <= residual(coarse_assign, 2) + 1e-9


def test_vng_output_contract(sbm_small):
    from graphslim.data import ReductionConfig, reduction_budget
    budget = reduction_budget(ReductionConfig(rate=0.1), sbm_small.labels,
                              sbm_small.train_mask)
    cg = coarsen_vng(sbm_small, budget, seed=8)
    a = cg.dense_adjacency()
    assert a.shape == (budget.sum(), budget.sum())
    assert np.allclose(a, a.T) and a.min() >= 0.0 and a.max() <= 1.0
    assert np.all(np.diag(a) == 0.0)
    assert np.array_equal(np.bincount(cg.labels), budget)
    cg2 = coarsen_vng(sbm_small, budget, seed=8)
    assert np.array_equal(cg.features, cg2.features)
    assert np.array_equal(cg.dense_adjacency(), cg2.dense_adjacency())
