"""Per-class coreset baselines: random, herding, kcenter, centrality.

All selectors operate on training nodes only and fill per-class budgets
exactly. Ties are broken toward the lowest node id so every strategy is
reproducible. The default embedding for the geometry-based selectors is
the two-hop propagated feature matrix, which needs no trained model.
"""

import json

import numpy as np

from .data import DataError, induce_subgraph, normalize_adjacency


class CoresetError(ValueError):
    pass


class Selection:
    """Chosen training node ids plus the bookkeeping to audit them."""

    def __init__(self, ids, per_class, strategy, seed):
        self.ids = np.asarray(ids, dtype=np.int64)
        self.per_class = np.asarray(per_class, dtype=np.int64)
        self.strategy = str(strategy)
        self.seed = int(seed)
        if np.unique(self.ids).size != self.ids.size:
            raise CoresetError("duplicate ids in selection")

    def validate(self, graph, budget):
        budget = np.asarray(budget, dtype=np.int64)
        if not np.array_equal(self.per_class, budget):
            raise CoresetError("per-class counts disagree with the budget")
        if not graph.train_mask[self.ids].all():
            raise CoresetError("selection leaks non-training nodes")
        counts = np.bincount(graph.labels[self.ids], minlength=budget.size)
        if not np.array_equal(counts, budget):
            raise CoresetError("selected class histogram disagrees with budget")
        return self

    def to_json(self):
        return json.dumps({"strategy": self.strategy, "seed": self.seed,
                           "ids": self.ids.tolist(),
                           "per_class": self.per_class.tolist()})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["ids"], d["per_class"], d["strategy"], d["seed"])


def two_hop_embedding(graph):
    """Parameter-free node embedding: normalized adjacency applied twice."""
    ahat = normalize_adjacency(graph.adjacency(), add_self_loops=True)
    x = np.asarray(graph.features, dtype=np.float64)
    return np.asarray(ahat @ (ahat @ x))


def trained_embedding(graph, seed=0):
    """Penultimate activations of a GCN trained on the graph itself.

    The embedding source the selection baselines were originally run with.
    Costs one full training run, so the parameter-free two-hop embedding
    stays the default; on small label budgets the trained space separates
    classes far better (herding gains several points from it).
    """
    from .models import ModelSpec, TrainConfig, train
    spec = ModelSpec(arch="gcn", hidden=256, dropout=0.5)
    params, _, _ = train(spec, graph, train_cfg=TrainConfig(), seed=seed)
    ahat = normalize_adjacency(graph.adjacency(), add_self_loops=True)
    h = np.asarray(graph.features, dtype=np.float64)
    for i in range(spec.layers - 1):
        h = np.asarray(ahat @ (h @ params["w%d" % i])) + params["b%d" % i]
        h = np.maximum(h, 0.0)
    return h


def _class_pools(graph, budget):
    budget = np.asarray(budget, dtype=np.int64)
    train_idx = np.flatnonzero(graph.train_mask)
    if train_idx.size == 0:
        raise DataError("empty training set")
    pools = []
    for c in range(budget.size):
        pool = train_idx[graph.labels[train_idx] == c]
        if budget[c] > pool.size:
            raise CoresetError(
                "class %d budget %d exceeds its %d training nodes"
                % (c, budget[c], pool.size))
        pools.append(pool)  # ascending ids; argmin/argmax ties pick lowest
    return budget, pools


def select_random(graph, budget, seed=0):
    """Uniform without replacement inside every class."""
    budget, pools = _class_pools(graph, budget)
    rng = np.random.default_rng(seed)
    chosen = [rng.choice(pool, size=b, replace=False)
              for pool, b in zip(pools, budget)]
    ids = np.sort(np.concatenate(chosen))
    return Selection(ids, budget, "random", seed).validate(graph, budget)


def select_kcenter(graph, budget, embedding=None, seed=0):
    """Greedy farthest-first per class, seeded at the node nearest the mean."""
    budget, pools = _class_pools(graph, budget)
    emb = two_hop_embedding(graph) if embedding is None else np.asarray(embedding)
    if emb.shape[0] != graph.n:
        raise CoresetError("embedding rows do not align with nodes")
    chosen = []
    for pool, b in zip(pools, budget):
        e = emb[pool]
        d_mean = np.linalg.norm(e - e.mean(axis=0), axis=1)
        picks = [int(np.argmin(d_mean))]
        dist = np.linalg.norm(e - e[picks[0]], axis=1)
        while len(picks) < b:
            dist[picks] = -1.0  # never re-pick a center
            nxt = int(np.argmax(dist))
            picks.append(nxt)
            dist = np.minimum(dist, np.linalg.norm(e - e[nxt], axis=1))
        chosen.append(pool[picks])
    ids = np.sort(np.concatenate(chosen))
    return Selection(ids, budget, "kcenter", seed).validate(graph, budget)


def select_herding(graph, budget, embedding=None, seed=0):
    """Greedy herding per class.

    Step t keeps the residual r = mu*(t+1) - sum(selected) and adds the
    node whose embedding lands closest to r, which keeps the mean of the
    selected set tracking the class mean.
    """
    budget, pools = _class_pools(graph, budget)
    emb = two_hop_embedding(graph) if embedding is None else np.asarray(embedding)
    if emb.shape[0] != graph.n:
        raise CoresetError("embedding rows do not align with nodes")
    chosen = []
    for pool, b in zip(pools, budget):
        e = emb[pool]
        mu = e.mean(axis=0)
        total = np.zeros_like(mu)
        taken = np.zeros(pool.size, dtype=bool)
        picks = []
        for t in range(b):
            r = mu * (t + 1) - total
            d = np.linalg.norm(e - r, axis=1)
            d[taken] = np.inf
            nxt = int(np.argmin(d))
            picks.append(nxt)
            taken[nxt] = True
            total = total + e[nxt]
        chosen.append(pool[picks])
    ids = np.sort(np.concatenate(chosen))
    return Selection(ids, budget, "herding", seed).validate(graph, budget)


def pagerank_scores(graph, damping=0.85, iters=100):
    adj = graph.adjacency().tocsr()
    n = graph.n
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv = np.where(deg > 0, 1.0 / np.maximum(deg, 1e-300), 0.0)
    p = np.full(n, 1.0 / n)
    for _ in range(iters):
        spread = adj.T @ (p * inv)
        dangling = p[deg == 0].sum()
        p = (1.0 - damping) / n + damping * (spread + dangling / n)
    return p


def select_centrality(graph, budget, kind="degree"):
    """Top scoring training nodes per class by degree or PageRank."""
    budget, pools = _class_pools(graph, budget)
    if kind == "degree":
        score = np.asarray(graph.adjacency().sum(axis=1)).ravel()
    elif kind == "pagerank":
        score = pagerank_scores(graph)
    else:
        raise CoresetError("unknown centrality kind %r" % kind)
    chosen = []
    for pool, b in zip(pools, budget):
        order = np.lexsort((pool, -score[pool]))
        chosen.append(pool[order[:b]])
    ids = np.sort(np.concatenate(chosen))
    return Selection(ids, budget, "cent-%s" % kind, 0).validate(graph, budget)


def coreset_graph(graph, selection):
    """Induced subgraph on the selection with every node marked train."""
    return induce_subgraph(graph, selection.ids, all_train=True)


SELECTORS = {
    "random": select_random,
    "kcenter": select_kcenter,
    "herding": select_herding,
    "cent-d": lambda graph, budget, seed=0: select_centrality(graph, budget, "degree"),
    "cent-p": lambda graph, budget, seed=0: select_centrality(graph, budget, "pagerank"),
}
