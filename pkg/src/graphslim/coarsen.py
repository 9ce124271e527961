"""Coarsening baselines: class-wise Averaging and propagation-fitting VNG.

Both map training nodes to supernodes through a hard per-class assignment.
Averaging groups raw features and wires supernodes by summed edge counts;
VNG groups one-step propagated features with degree weights and fits the
supernode adjacency so that coarse propagation imitates the original one.
"""

import numpy as np
from sklearn.cluster import KMeans

from .condense import CondensedGraph
from .data import DataError, normalize_adjacency


class CoarsenError(ValueError):
    pass


def _hard_assignment(graph, budget, pool, seed, sample_weight=None):
    """Per-class k-means assignment of training nodes to supernodes.

    pool holds the clustered representation, one row per node. Returns
    (train_idx, assign) where assign[i] is the supernode of train node i
    and supernode ids run class by class.
    """
    budget = np.asarray(budget, dtype=np.int64)
    train_idx = np.flatnonzero(graph.train_mask)
    if train_idx.size == 0:
        raise DataError("empty training set")
    assign = np.full(train_idx.size, -1, dtype=np.int64)
    base = 0
    labels = graph.labels[train_idx]
    for c, b in enumerate(budget):
        members = np.flatnonzero(labels == c)
        if b < 1:
            raise CoarsenError("class %d budget must be at least 1" % c)
        if members.size == 0:
            raise CoarsenError("class %d has no training nodes" % c)
        if b > members.size:
            raise CoarsenError("class %d budget %d exceeds %d training nodes"
                               % (c, b, members.size))
        if b == members.size:
            assign[members] = base + np.arange(b)
        elif b == 1:
            assign[members] = base
        else:
            w = None if sample_weight is None else sample_weight[members]
            km = KMeans(n_clusters=int(b), n_init=1, max_iter=50,
                        random_state=int(seed) % (2 ** 31))
            grp = km.fit_predict(pool[members], sample_weight=w)
            assign[members] = base + grp
        base += b
    counts = np.bincount(assign, minlength=base)
    if np.any(counts == 0):
        raise CoarsenError("empty supernode after clustering")
    return train_idx, assign


def _group_means(values, assign, m, weights=None):
    w = np.ones(assign.size) if weights is None else np.asarray(weights, float)
    num = np.zeros((m, values.shape[1]))
    den = np.zeros(m)
    np.add.at(num, assign, values * w[:, None])
    np.add.at(den, assign, w)
    return num / den[:, None]


def _finish_adjacency(a):
    # symmetric, non-negative, zero diagonal, weights capped at 1
    a = 0.5 * (a + a.T)
    np.fill_diagonal(a, 0.0)
    a = np.maximum(a, 0.0)
    peak = a.max()
    if peak > 1.0:
        a = a / peak
    return a


def coarsen_averaging(graph, budget, seed=0):
    """Class-wise feature averaging with summed-edge supernode wiring."""
    budget = np.asarray(budget, dtype=np.int64)
    train_idx, assign = _hard_assignment(
        graph, budget, np.asarray(graph.features, dtype=np.float64), seed)
    m = int(budget.sum())
    feats = _group_means(graph.features[train_idx], assign, m)
    # P^T A P over the training-node adjacency, accumulated edge by edge
    pos = -np.ones(graph.n, dtype=np.int64)
    pos[train_idx] = assign
    a = np.zeros((m, m))
    for s, d, w in zip(graph.src, graph.dst, graph.weight):
        gs, gd = pos[s], pos[d]
        if gs >= 0 and gd >= 0:
            a[gs, gd] += w
            a[gd, gs] += w
    labels = np.repeat(np.arange(budget.size), budget)
    return CondensedGraph(feats, labels, _finish_adjacency(a),
                          meta={"method": "averaging", "seed": int(seed),
                                "budget": budget.tolist()})


def fit_propagation_adjacency(p_onehot, coarse_x, target, ridge=1e-6):
    """argmin_A || P A X' - target ||_F via ridge normal equations."""
    gram_p = p_onehot.T @ p_onehot + ridge * np.eye(p_onehot.shape[1])
    gram_x = coarse_x @ coarse_x.T + ridge * np.eye(coarse_x.shape[0])
    rhs = p_onehot.T @ target @ coarse_x.T
    half = np.linalg.solve(gram_p, rhs)
    return np.linalg.solve(gram_x, half.T).T


def coarsen_vng(graph, budget, seed=0, ridge=1e-6):
    """Degree-weighted k-means on propagated features plus adjacency fitting."""
    budget = np.asarray(budget, dtype=np.int64)
    ahat = normalize_adjacency(graph.adjacency(), add_self_loops=True)
    propagated = np.asarray(ahat @ np.asarray(graph.features, dtype=np.float64))
    deg = np.asarray(graph.adjacency().sum(axis=1)).ravel() + 1.0  # self loop
    train_idx, assign = _hard_assignment(
        graph, budget, propagated, seed, sample_weight=deg)
    m = int(budget.sum())
    b_rows = propagated[train_idx]
    feats = _group_means(b_rows, assign, m, weights=deg[train_idx])
    p_onehot = np.zeros((train_idx.size, m))
    p_onehot[np.arange(train_idx.size), assign] = 1.0
    a = fit_propagation_adjacency(p_onehot, feats, b_rows, ridge)
    labels = np.repeat(np.arange(budget.size), budget)
    return CondensedGraph(feats, labels, _finish_adjacency(a),
                          meta={"method": "vng", "seed": int(seed),
                                "budget": budget.tolist()})


COARSENERS = {"averaging": coarsen_averaging, "vng": coarsen_vng}
