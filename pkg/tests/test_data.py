"""Graph model, bundle round trips, budgets, converters, synthetic graphs."""

import json
import os

import numpy as np
import pytest
import scipy.sparse.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from graphslim.data import (DataError, Graph, ReductionConfig, SbmParams,
                            convert_content, induce_subgraph, load_bundle,
                            normalize_adjacency, reduction_budget, row_normalize,
                            save_bundle, sbm_generate, training_graph)


def toy_graph(n=6, seed=0, weighted=False):
    rng = np.random.default_rng(seed)
    src, dst = np.triu_indices(n, k=1)
    keep = rng.random(src.size) < 0.5
    src, dst = src[keep], dst[keep]
    w = rng.uniform(0.1, 1.0, src.size) if weighted else np.ones(src.size)
    labels = rng.integers(0, 3, n)
    masks = np.zeros((3, n), dtype=bool)
    masks[rng.integers(0, 3, n), np.arange(n)] = True
    return Graph(rng.normal(size=(n, 4)), labels, src, dst, w, *masks)


def test_two_node_path_bundle(tmp_path):
    p = tmp_path / "path2"
    p.mkdir()
    (p / "features.csv").write_text("1.0,0.0\n0.0,1.0\n")
    (p / "labels.csv").write_text("0\n1\n")
    (p / "edges.csv").write_text("0,1,1.0\n")
    (p / "splits.json").write_text(json.dumps({"train": [0], "val": [], "test": [1]}))
    g = load_bundle(str(p))
    assert g.n == 2 and g.num_edges == 1
    assert g.src[0] == 0 and g.dst[0] == 1


def test_bundle_round_trip(tmp_path):
    g = toy_graph(weighted=True)
    save_bundle(g, str(tmp_path / "b"))
    assert load_bundle(str(tmp_path / "b")) == g


def test_empty_edges_round_trip(tmp_path):
    g = Graph(np.eye(3), [0, 1, 2], [], [], [],
              [True, False, False], [False, True, False], [False, False, True])
    save_bundle(g, str(tmp_path / "b"))
    g2 = load_bundle(str(tmp_path / "b"))
    assert g2 == g and g2.num_edges == 0


def test_weighted_edges_full_precision(tmp_path):
    w = np.array([0.12345678901234567, 1.0 / 3.0])
    g = Graph(np.eye(3), [0, 0, 1], [0, 1], [1, 2], w,
              [True] * 3, [False] * 3, [False] * 3)
    save_bundle(g, str(tmp_path / "b"))
    assert np.array_equal(load_bundle(str(tmp_path / "b")).weight, w)


def test_missing_file_raises(tmp_path):
    with pytest.raises(DataError):
        load_bundle(str(tmp_path))


def test_mask_overlap_raises():
    with pytest.raises(DataError):
        Graph(np.eye(2), [0, 1], [0], [1], [1.0],
              [True, False], [True, False], [False, False])


def test_weight_range_raises():
    with pytest.raises(DataError):
        Graph(np.eye(2), [0, 1], [0], [1], [1.5],
              [True, False], [False, True], [False, False])


def test_edges_symmetrized_and_deduplicated():
    g = Graph(np.eye(3), [0, 1, 2], [0, 1, 1, 2, 0], [1, 0, 1, 0, 1],
              [1.0, 0.5, 1.0, 0.7, 0.9],
              [True] * 3, [False] * 3, [False] * 3)
    # self loop dropped, (0,1) collapsed keeping max weight, (1,0)->(0,1)
    assert g.num_edges == 2
    pairs = set(zip(g.src.tolist(), g.dst.tolist()))
    assert pairs == {(0, 1), (0, 2)}
    assert g.weight[(g.src == 0) & (g.dst == 1)][0] == 1.0


def test_normalize_single_node_self_loop():
    a = normalize_adjacency(np.zeros((1, 1)), add_self_loops=True)
    assert np.allclose(a, [[1.0]])


def test_normalize_two_nodes_unit_edge():
    g = Graph(np.eye(2), [0, 1], [0], [1], [1.0],
              [True, False], [False, True], [False, False])
    a = normalize_adjacency(g).toarray()
    assert np.allclose(a, 0.5)


def test_normalize_isolated_node_raises():
    with pytest.raises(DataError):
        normalize_adjacency(np.zeros((2, 2)), add_self_loops=False)


def test_normalize_cora_spectral_radius(cora):
    a = normalize_adjacency(cora)
    # independent eigensolver as oracle
    top = scipy.sparse.linalg.eigsh(a, k=1, return_eigenvectors=False,
                                    which="LA")[0]
    assert abs(top) <= 1 + 1e-9
    assert (a != a.T).nnz == 0


def test_training_graph_transductive_identity(cora):
    assert training_graph(cora, "transductive") is cora


def test_training_graph_inductive_set_filter():
    g = toy_graph(n=10, seed=3)
    sub = training_graph(g, "inductive")
    train_nodes = np.flatnonzero(g.train_mask)
    assert sub.n == train_nodes.size
    # oracle: recount intra-train edges directly
    tset = set(train_nodes.tolist())
    expected = sum(1 for s, d in zip(g.src, g.dst) if s in tset and d in tset)
    assert sub.num_edges == expected
    assert sub.train_mask.all()


def test_induce_subgraph_all_train_flag():
    g = toy_graph(n=8, seed=1)
    sub = induce_subgraph(g, [0, 2, 4], all_train=True)
    assert sub.train_mask.all() and not sub.val_mask.any() and not sub.test_mask.any()


def test_budget_cora_rate(cora):
    counts = reduction_budget(ReductionConfig(rate=0.026), cora.labels,
                              cora.train_mask)
    assert counts.sum() == 70
    assert np.array_equal(counts, np.full(7, 10))


def test_budget_citeseer_smallest_rate(citeseer):
    counts = reduction_budget(ReductionConfig(rate=0.0036), citeseer.labels,
                              citeseer.train_mask)
    assert counts.sum() == 12
    assert np.array_equal(counts, np.full(6, 2))


def test_budget_ipc():
    labels = np.repeat(np.arange(7), 20)
    counts = reduction_budget(ReductionConfig(ipc=1), labels)
    assert np.array_equal(counts, np.ones(7, dtype=np.int64))


def test_budget_rate_one_equals_histogram():
    labels = np.repeat(np.arange(4), [5, 9, 3, 7])
    counts = reduction_budget(ReductionConfig(rate=1.0), labels)
    assert np.array_equal(counts, [5, 9, 3, 7])


def test_budget_largest_remainder_oracle():
    # brute-force allocation check on an uneven histogram
    labels = np.repeat(np.arange(3), [7, 5, 3])
    counts = reduction_budget(ReductionConfig(rate=0.5), labels)
    total = max(3, round(0.5 * 15))
    assert counts.sum() == total
    quota = total * np.array([7, 5, 3]) / 15.0
    # no count strays more than one node from its quota
    assert np.all(np.abs(counts - quota) < 1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(min_value=1, max_value=40), min_size=2, max_size=6),
       st.floats(min_value=0.01, max_value=1.0))
def test_budget_properties(hist, rate):
    labels = np.repeat(np.arange(len(hist)), hist)
    counts = reduction_budget(ReductionConfig(rate=rate), labels)
    assert np.all(counts >= 1)
    assert counts.sum() == max(len(hist), round(rate * labels.size))
    bigger = reduction_budget(ReductionConfig(rate=min(1.0, rate * 1.5)), labels)
    assert bigger.sum() >= counts.sum()


def test_sbm_no_inter_edges():
    g = sbm_generate(SbmParams(block_sizes=(10, 10), p_intra=0.5, p_inter=0.0,
                               dim=4, seed=1))
    assert np.all(g.labels[g.src] == g.labels[g.dst])


def test_sbm_complete_block():
    g = sbm_generate(SbmParams(block_sizes=(4,), p_intra=1.0, p_inter=0.0,
                               dim=2, seed=2))
    assert g.num_edges == 6


def test_sbm_deterministic():
    p = SbmParams(block_sizes=(15, 15), p_intra=0.3, p_inter=0.05, dim=8, seed=5)
    assert sbm_generate(p) == sbm_generate(p)


def test_sbm_split_sizes():
    g = sbm_generate(SbmParams(block_sizes=(50, 50), p_intra=0.2, p_inter=0.02,
                               dim=4, seed=3))
    assert g.train_mask.sum() == 60 and g.val_mask.sum() == 20
    assert g.test_mask.sum() == 20


def test_reduction_config_validation():
    with pytest.raises(DataError):
        ReductionConfig(rate=0.1, ipc=2)
    with pytest.raises(DataError):
        ReductionConfig()
    with pytest.raises(DataError):
        ReductionConfig(rate=0.0)


def test_cora_statistics(cora):
    # published counts, with duplicate citation lines collapsed
    assert cora.n == 2708
    assert cora.num_edges == 5278
    assert cora.num_classes == 7
    assert cora.features.shape[1] == 1433
    assert (cora.train_mask.sum(), cora.val_mask.sum(), cora.test_mask.sum()) \
        == (140, 500, 1000)
    sums = cora.features.sum(axis=1)
    assert np.all((np.abs(sums - 1) < 1e-9) | (sums == 0))


def test_citeseer_statistics(citeseer):
    assert citeseer.n == 3327
    assert citeseer.num_edges == 4552
    assert citeseer.num_classes == 6
    assert citeseer.features.shape[1] == 3703
    assert (citeseer.train_mask.sum(), citeseer.val_mask.sum(),
            citeseer.test_mask.sum()) == (120, 500, 1000)


def test_convert_content_matches_planetoid_shape(cora):
    root = os.environ["GRAPHSLIM_DATA"]
    g = convert_content(os.path.join(root, "linqs", "cora.content"),
                        os.path.join(root, "linqs", "cora.cites"), seed=0)
    assert (g.n, g.num_edges, g.num_classes) == (cora.n, cora.num_edges, 7)
    assert g.features.shape == cora.features.shape
    assert np.array_equal(np.sort(np.bincount(g.labels)),
                          np.sort(np.bincount(cora.labels)))
    assert g.train_mask.sum() == 140


def test_row_normalize_zero_rows_safe():
    x = np.array([[0.0, 0.0], [2.0, 2.0]])
    out = row_normalize(x)
    assert np.allclose(out, [[0, 0], [0.5, 0.5]])
