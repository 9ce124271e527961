"""Synthetic initialization, the edge generator, thresholding, and config."""

import numpy as np
import pytest

from graphslim.condense import (CondenseConfig, CondenseError, gen_structure,
                                init_structure, init_synthetic, sparsify)
from graphslim.condense.synth import ahat_tape, structure_tape
from graphslim.coreset import select_kcenter
from graphslim.data import normalize_adjacency
from graphslim.engine import Tape
from graphslim.models import ModelSpec

BUDGET = np.array([2, 2, 2])


def test_random_sample_rows_are_training_copies(sbm_small):
    cond = init_synthetic(sbm_small, BUDGET, "random-sample", seed=3)
    train_rows = sbm_small.features[sbm_small.train_mask]
    for row in cond.features:
        assert np.any(np.all(np.isclose(train_rows, row), axis=1))


def test_averaging_budget_one_gives_class_means(sbm_small):
    cond = init_synthetic(sbm_small, np.array([1, 1, 1]), "averaging", seed=0)
    tr = np.flatnonzero(sbm_small.train_mask)
    for cls in range(3):
        rows = tr[sbm_small.labels[tr] == cls]
        np.testing.assert_allclose(cond.features[cls],
                                   sbm_small.features[rows].mean(axis=0))


def test_kcenter_init_equals_selector_rows(sbm_small):
    cond = init_synthetic(sbm_small, BUDGET, "kcenter", seed=0)
    sel = select_kcenter(sbm_small, BUDGET, seed=0)
    np.testing.assert_array_equal(cond.features,
                                  sbm_small.features[sel.ids])
    np.testing.assert_array_equal(cond.labels, sbm_small.labels[sel.ids])


@pytest.mark.parametrize("strategy",
                         ["random-sample", "kcenter", "herding", "averaging"])
def test_init_labels_follow_budget_and_no_structure(sbm_small, strategy):
    cond = init_synthetic(sbm_small, BUDGET, strategy, seed=1)
    assert cond.adj is None
    assert cond.features.shape == (6, sbm_small.features.shape[1])
    np.testing.assert_array_equal(np.bincount(cond.labels), BUDGET)


def test_init_unknown_strategy_raises(sbm_small):
    with pytest.raises(CondenseError):
        init_synthetic(sbm_small, BUDGET, "pagerank", seed=0)


# ---------------------------------------------------------- edge generator

def test_gen_structure_identical_rows_identical_entries():
    phi = init_structure(4, hidden=8, seed=0)
    x = np.tile(np.array([0.3, -1.0, 0.5, 2.0]), (3, 1))
    a = gen_structure(phi, x)
    assert a[0, 1] == a[0, 2] == a[1, 2]


def test_gen_structure_symmetric_zero_diag_open_unit_range(rng):
    phi = init_structure(5, hidden=16, seed=7)
    x = rng.normal(size=(9, 5))
    a = gen_structure(phi, x)
    np.testing.assert_array_equal(a, a.T)
    np.testing.assert_array_equal(np.diag(a), np.zeros(9))
    off = a[~np.eye(9, dtype=bool)]
    assert off.min() > 0.0 and off.max() < 1.0


def test_gen_structure_zero_weights_give_half():
    phi = {k: np.zeros_like(v) for k, v in init_structure(3, 4, 0).items()}
    a = gen_structure(phi, np.arange(12.0).reshape(4, 3))
    off = a[~np.eye(4, dtype=bool)]
    np.testing.assert_allclose(off, 0.5)
    np.testing.assert_array_equal(np.diag(a), np.zeros(4))


def test_gen_structure_width_mismatch_raises():
    phi = init_structure(3, 4, 0)
    with pytest.raises(CondenseError):
        gen_structure(phi, np.zeros((2, 5)))


def test_structure_tape_matches_numeric(rng):
    phi = init_structure(6, hidden=8, seed=2)
    x = rng.normal(size=(7, 6))
    tape = Tape()
    nodes = {k: tape.leaf(v) for k, v in phi.items()}
    a = structure_tape(tape, nodes, tape.leaf(x))
    np.testing.assert_allclose(a.value, gen_structure(phi, x), atol=1e-12)


def test_ahat_tape_matches_direct_normalization(rng):
    a = rng.random((5, 5))
    a = 0.5 * (a + a.T)
    np.fill_diagonal(a, 0.0)
    tape = Tape()
    got = ahat_tape(tape, tape.leaf(a)).value
    want = normalize_adjacency(a, add_self_loops=True)
    np.testing.assert_allclose(got, np.asarray(want), atol=1e-12)


# ----------------------------------------------------------------- sparsify

def _toy_cond():
    from graphslim.condense import CondensedGraph
    a = np.array([[0.0, 0.8, 0.3], [0.8, 0.0, 0.5], [0.3, 0.5, 0.0]])
    return CondensedGraph(np.eye(3), np.array([0, 1, 2]), a, delta=0.0)


def test_sparsify_zero_threshold_is_identity():
    cond = _toy_cond()
    out = sparsify(cond, 0.0)
    np.testing.assert_array_equal(out.adj, cond.adj)


def test_sparsify_above_one_empties():
    out = sparsify(_toy_cond(), 1.0 + 1e-9)
    np.testing.assert_array_equal(out.adj, np.zeros((3, 3)))


def test_sparsify_half_matches_elementwise_oracle():
    cond = _toy_cond()
    out = sparsify(cond, 0.5)
    want = cond.adj.copy()
    want[want < 0.5] = 0.0
    np.testing.assert_array_equal(out.adj, want)
    np.testing.assert_array_equal(out.adj, out.adj.T)
    assert out.delta == 0.0


def test_sparsify_structure_free_raises():
    from graphslim.condense import CondensedGraph
    cond = CondensedGraph(np.eye(2), np.array([0, 1]), None)
    with pytest.raises(CondenseError):
        sparsify(cond, 0.5)


# ------------------------------------------------------------------- config

def test_config_rejects_unknown_method():
    with pytest.raises(CondenseError):
        CondenseConfig(method="msgc")


def test_config_doscond_forces_one_step_joint_updates():
    cfg = CondenseConfig(method="doscond", matching_steps=9, inner_steps=7,
                         alternate=True)
    assert cfg.matching_steps == 1
    assert cfg.inner_steps == 0
    assert cfg.alternate is False


def test_config_gcondx_drops_inner_loop():
    cfg = CondenseConfig(method="gcondx", inner_steps=12)
    assert cfg.inner_steps == 0


def test_config_pins_trajectory_windows():
    assert CondenseConfig(method="sfgc", window="expanding").window == "fixed"
    assert CondenseConfig(method="geom", window="fixed").window == "expanding"


def test_config_validates_budget_epsilon_delta_backbone():
    with pytest.raises(CondenseError):
        CondenseConfig(budget=np.array([2, 0, 1]))
    with pytest.raises(CondenseError):
        CondenseConfig(epsilon=0.0)
    with pytest.raises(CondenseError):
        CondenseConfig(delta=1.0)
    with pytest.raises(CondenseError):
        CondenseConfig(backbone=ModelSpec(arch="appnp"))
    with pytest.raises(CondenseError):
        CondenseConfig(init="spectral")


def test_config_default_backbone_is_protocol_width():
    cfg = CondenseConfig()
    assert (cfg.backbone.arch, cfg.backbone.layers, cfg.backbone.hidden) == \
        ("gcn", 2, 256)
    assert cfg.backbone.dropout == 0.0
