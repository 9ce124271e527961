"""Graph data model, on-disk bundles, dataset converters, and budgets.

A Graph keeps the undirected adjacency as a coordinate list with every edge
stored once (src < dst), no self loops. Bundles are plain text directories:
edges.csv, features.csv, labels.csv, splits.json.
"""

import functools
import json
import os
import pickle
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class DataError(ValueError):
    pass


class Graph:
    """Immutable-by-convention node-labeled weighted undirected graph."""

    def __init__(self, features, labels, src, dst, weight,
                 train_mask, val_mask, test_mask):
        self.features = np.asarray(features, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.n = self.features.shape[0]
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        weight = np.asarray(weight, dtype=np.float64)
        self.src, self.dst, self.weight = _canonical_edges(src, dst, weight, self.n)
        self.train_mask = np.asarray(train_mask, dtype=bool)
        self.val_mask = np.asarray(val_mask, dtype=bool)
        self.test_mask = np.asarray(test_mask, dtype=bool)
        self._adj = None
        self._validate()

    def _validate(self):
        if self.labels.shape[0] != self.n:
            raise DataError("labels/features length mismatch")
        if np.any(self.labels < 0):
            raise DataError("negative label")
        for m in (self.train_mask, self.val_mask, self.test_mask):
            if m.shape[0] != self.n:
                raise DataError("mask length mismatch")
        overlap = (self.train_mask.astype(int) + self.val_mask.astype(int)
                   + self.test_mask.astype(int))
        if np.any(overlap > 1):
            raise DataError("split masks overlap")
        if self.weight.size and (np.any(self.weight <= 0) or np.any(self.weight > 1)):
            raise DataError("edge weights must lie in (0, 1]")

    @property
    def num_classes(self):
        return int(self.labels.max()) + 1 if self.n else 0

    @property
    def num_edges(self):
        return self.src.shape[0]

    def adjacency(self):
        """Symmetric scipy CSR with both directions materialized."""
        if self._adj is None:
            rows = np.concatenate([self.src, self.dst])
            cols = np.concatenate([self.dst, self.src])
            vals = np.concatenate([self.weight, self.weight])
            self._adj = sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))
        return self._adj

    def degrees(self):
        return np.asarray(self.adjacency().sum(axis=1)).ravel()

    def replace(self, **kw):
        args = dict(features=self.features, labels=self.labels, src=self.src,
                    dst=self.dst, weight=self.weight, train_mask=self.train_mask,
                    val_mask=self.val_mask, test_mask=self.test_mask)
        args.update(kw)
        return Graph(**args)

    def __eq__(self, other):
        return (isinstance(other, Graph)
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.src, other.src)
                and np.array_equal(self.dst, other.dst)
                and np.array_equal(self.weight, other.weight)
                and np.array_equal(self.train_mask, other.train_mask)
                and np.array_equal(self.val_mask, other.val_mask)
                and np.array_equal(self.test_mask, other.test_mask))


def _canonical_edges(src, dst, weight, n):
    """Drop self loops, orient src<dst, deduplicate keeping the max weight."""
    if src.size == 0:
        return src, dst, weight
    if np.any(src >= n) or np.any(dst >= n) or np.any(src < 0) or np.any(dst < 0):
        raise DataError("edge endpoint out of range")
    keep = src != dst
    src, dst, weight = src[keep], dst[keep], weight[keep]
    lo = np.minimum(src, dst)
    hi = np.maximum(src, dst)
    # sort by (lo, hi, -weight) then take the first of each pair
    order = np.lexsort((-weight, hi, lo))
    lo, hi, weight = lo[order], hi[order], weight[order]
    first = np.ones(lo.size, dtype=bool)
    first[1:] = (lo[1:] != lo[:-1]) | (hi[1:] != hi[:-1])
    return lo[first], hi[first], weight[first]


@dataclass
class ReductionConfig:
    rate: float = None
    ipc: int = None
    setting: str = "transductive"

    def __post_init__(self):
        if (self.rate is None) == (self.ipc is None):
            raise DataError("set exactly one of rate and ipc")
        if self.rate is not None and not (0 < self.rate <= 1):
            raise DataError("rate must lie in (0, 1]")
        if self.ipc is not None and self.ipc < 1:
            raise DataError("ipc must be >= 1")
        if self.setting not in ("transductive", "inductive"):
            raise DataError("unknown setting %r" % self.setting)


@dataclass
class SbmParams:
    block_sizes: tuple
    p_intra: float
    p_inter: float
    dim: int
    separation: float = 1.0
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for p in (self.p_intra, self.p_inter):
            if not (0.0 <= p <= 1.0):
                raise DataError("block probabilities must lie in [0, 1]")


# ---------------------------------------------------------------- bundles

def save_bundle(graph, path):
    os.makedirs(path, exist_ok=True)
    np.savetxt(os.path.join(path, "features.csv"), graph.features,
               delimiter=",", fmt="%.17g")
    np.savetxt(os.path.join(path, "labels.csv"), graph.labels, fmt="%d")
    with open(os.path.join(path, "edges.csv"), "w") as f:
        for s, d, w in zip(graph.src, graph.dst, graph.weight):
            f.write("%d,%d,%.17g\n" % (s, d, w))
    splits = {name: np.flatnonzero(mask).tolist()
              for name, mask in [("train", graph.train_mask),
                                 ("val", graph.val_mask),
                                 ("test", graph.test_mask)]}
    with open(os.path.join(path, "splits.json"), "w") as f:
        json.dump(splits, f)


def load_bundle(path):
    for name in ("features.csv", "labels.csv", "edges.csv", "splits.json"):
        if not os.path.exists(os.path.join(path, name)):
            raise DataError("bundle is missing %s" % name)
    features = np.loadtxt(os.path.join(path, "features.csv"),
                          delimiter=",", ndmin=2, dtype=np.float64)
    labels = np.loadtxt(os.path.join(path, "labels.csv"), dtype=np.int64, ndmin=1)
    n = labels.shape[0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # empty edge files are legal
        edges = np.loadtxt(os.path.join(path, "edges.csv"),
                           delimiter=",", ndmin=2, dtype=np.float64)
    if edges.size:
        src, dst, weight = (edges[:, 0].astype(np.int64),
                            edges[:, 1].astype(np.int64), edges[:, 2])
    else:
        src = dst = np.zeros(0, dtype=np.int64)
        weight = np.zeros(0)
    with open(os.path.join(path, "splits.json")) as f:
        splits = json.load(f)
    masks = {}
    for name in ("train", "val", "test"):
        m = np.zeros(n, dtype=bool)
        m[np.asarray(splits.get(name, []), dtype=np.int64)] = True
        masks[name] = m
    return Graph(features, labels, src, dst, weight,
                 masks["train"], masks["val"], masks["test"])


# ---------------------------------------------------------------- normalization

def normalize_adjacency(graph_or_adj, add_self_loops=True):
    """Symmetric renormalization D^-1/2 (A + I) D^-1/2.

    Accepts a Graph, a scipy sparse matrix, or a dense square array and
    mirrors the sparse/dense family of its input.
    """
    if isinstance(graph_or_adj, Graph):
        adj = graph_or_adj.adjacency()
    else:
        adj = graph_or_adj
    if sp.issparse(adj):
        a = adj.tocsr().astype(np.float64)
        if add_self_loops:
            a = a + sp.eye(a.shape[0], format="csr")
        deg = np.asarray(a.sum(axis=1)).ravel()
        if np.any(deg <= 0):
            raise DataError("zero-degree node; enable self loops")
        dinv = sp.diags(1.0 / np.sqrt(deg))
        return (dinv @ a @ dinv).tocsr()
    a = np.asarray(adj, dtype=np.float64)
    if add_self_loops:
        a = a + np.eye(a.shape[0])
    deg = a.sum(axis=1)
    if np.any(deg <= 0):
        raise DataError("zero-degree node; enable self loops")
    dinv = 1.0 / np.sqrt(deg)
    return a * dinv[:, None] * dinv[None, :]


def training_graph(graph, setting="transductive"):
    """The graph a reduction method is allowed to see."""
    if not graph.train_mask.any():
        raise DataError("empty training set")
    if setting == "transductive":
        return graph
    nodes = np.flatnonzero(graph.train_mask)
    return induce_subgraph(graph, nodes)


def induce_subgraph(graph, nodes, all_train=False):
    nodes = np.asarray(nodes, dtype=np.int64)
    pos = -np.ones(graph.n, dtype=np.int64)
    pos[nodes] = np.arange(nodes.size)
    keep = (pos[graph.src] >= 0) & (pos[graph.dst] >= 0)
    src, dst = pos[graph.src[keep]], pos[graph.dst[keep]]
    if all_train:
        train = np.ones(nodes.size, dtype=bool)
        val = test = np.zeros(nodes.size, dtype=bool)
    else:
        train = graph.train_mask[nodes]
        val = graph.val_mask[nodes]
        test = graph.test_mask[nodes]
    return Graph(graph.features[nodes], graph.labels[nodes], src, dst,
                 graph.weight[keep], train, val, test)


# ---------------------------------------------------------------- budgets

def reduction_budget(config, labels, train_mask=None):
    """Per-class node counts for a reduction run.

    Total is max(c, round(rate * len(labels))); the split across classes is
    proportional to the labeled training histogram with largest-remainder
    rounding, every class getting at least one node.
    """
    labels = np.asarray(labels, dtype=np.int64)
    lab = labels if train_mask is None else labels[np.asarray(train_mask, dtype=bool)]
    if lab.size == 0:
        raise DataError("empty training label histogram")
    c = int(labels.max()) + 1
    hist = np.bincount(lab, minlength=c).astype(np.float64)
    if config.ipc is not None:
        return np.full(c, config.ipc, dtype=np.int64)
    total = max(c, int(round(config.rate * labels.shape[0])))
    quota = total * hist / hist.sum()
    counts = np.maximum(np.floor(quota).astype(np.int64), 1)
    rem = quota - np.floor(quota)
    # hand out leftovers by largest remainder, ties to larger classes
    order = np.lexsort((np.arange(c), -hist, -rem))
    i = 0
    while counts.sum() < total:
        counts[order[i % c]] += 1
        i += 1
    shed = np.lexsort((np.arange(c), hist, rem))
    i = 0
    while counts.sum() > total:
        k = shed[i % c]
        if counts[k] > 1:
            counts[k] -= 1
        i += 1
    return counts


# ---------------------------------------------------------------- synthetic

def sbm_generate(params):
    """Stochastic block model with Gaussian block features and 60/20/20 split."""
    rng = np.random.default_rng(params.seed)
    sizes = np.asarray(params.block_sizes, dtype=np.int64)
    n = int(sizes.sum())
    c = sizes.size
    labels = np.repeat(np.arange(c), sizes)
    src_all, dst_all = [], []
    for b in range(c):
        for b2 in range(b, c):
            p = params.p_intra if b == b2 else params.p_inter
            if p == 0.0:
                continue
            rows = np.flatnonzero(labels == b)
            cols = np.flatnonzero(labels == b2)
            mask = rng.random((rows.size, cols.size)) < p
            if b == b2:
                mask = np.triu(mask, k=1)
            r, cidx = np.nonzero(mask)
            src_all.append(rows[r])
            dst_all.append(cols[cidx])
    src = np.concatenate(src_all) if src_all else np.zeros(0, dtype=np.int64)
    dst = np.concatenate(dst_all) if dst_all else np.zeros(0, dtype=np.int64)
    means = np.zeros((c, params.dim))
    means[np.arange(c), np.arange(c) % params.dim] = params.separation
    features = means[labels] + params.noise * rng.standard_normal((n, params.dim))
    perm = rng.permutation(n)
    n_train = int(round(0.6 * n))
    n_val = int(round(0.2 * n))
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    train[perm[:n_train]] = True
    val[perm[n_train:n_train + n_val]] = True
    test[perm[n_train + n_val:]] = True
    return Graph(features, labels, src, dst, np.ones(src.size),
                 train, val, test)


# ---------------------------------------------------------------- converters

def row_normalize(x):
    s = x.sum(axis=1, keepdims=True)
    s[s == 0] = 1.0
    return x / s


def convert_content(content_path, cites_path, seed=0, val_size=500, test_size=1000):
    """Ingest the .content/.cites citation format into a Graph.

    Node order follows .content; labels are sorted label strings; the split
    samples 20 nodes per class for train, then val and test from the rest.
    """
    ids, rows, labels_raw = [], [], []
    with open(content_path) as f:
        for line in f:
            parts = line.strip().split()
            if not parts:
                continue
            ids.append(parts[0])
            rows.append(np.asarray(parts[1:-1], dtype=np.float64))
            labels_raw.append(parts[-1])
    index = {pid: i for i, pid in enumerate(ids)}
    classes = sorted(set(labels_raw))
    labels = np.asarray([classes.index(l) for l in labels_raw], dtype=np.int64)
    features = row_normalize(np.vstack(rows))
    src, dst = [], []
    skipped = 0
    with open(cites_path) as f:
        for line in f:
            parts = line.strip().split()
            if len(parts) != 2:
                continue
            a, b = index.get(parts[0]), index.get(parts[1])
            if a is None or b is None:
                skipped += 1
                continue
            src.append(a)
            dst.append(b)
    n = len(ids)
    rng = np.random.default_rng(seed)
    train = np.zeros(n, dtype=bool)
    for cl in range(len(classes)):
        members = np.flatnonzero(labels == cl)
        train[rng.choice(members, size=min(20, members.size), replace=False)] = True
    rest = rng.permutation(np.flatnonzero(~train))
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    val[rest[:val_size]] = True
    test[rest[val_size:val_size + test_size]] = True
    g = Graph(features, labels, np.asarray(src, dtype=np.int64),
              np.asarray(dst, dtype=np.int64), np.ones(len(src)),
              train, val, test)
    return g


def convert_planetoid(directory, name):
    """Ingest the pickled ind.<name>.* files with their canonical splits."""
    objs = {}
    for part in ("x", "y", "tx", "ty", "allx", "ally", "graph"):
        fname = os.path.join(directory, "ind.%s.%s" % (name, part))
        with open(fname, "rb") as f:
            with warnings.catch_warnings():
                # the pickles reference pre-1.8 scipy module paths
                warnings.simplefilter("ignore", DeprecationWarning)
                objs[part] = pickle.load(f, encoding="latin1")
    with open(os.path.join(directory, "ind.%s.test.index" % name)) as f:
        test_idx = np.asarray([int(line.strip()) for line in f if line.strip()],
                              dtype=np.int64)
    allx = np.asarray(objs["allx"].todense(), dtype=np.float64)
    tx = np.asarray(objs["tx"].todense(), dtype=np.float64)
    n = int(test_idx.max()) + 1
    # tx rows belong to the ids listed in test.index; ids missing from the
    # test range keep zero rows (a handful of isolated citeseer nodes)
    features = np.zeros((n, allx.shape[1]))
    features[:allx.shape[0]] = allx
    features[test_idx] = tx
    onehot = np.zeros((n, objs["ally"].shape[1]))
    onehot[:allx.shape[0]] = objs["ally"]
    onehot[test_idx] = objs["ty"]
    labels = onehot.argmax(axis=1).astype(np.int64)
    src, dst = [], []
    for node, nbrs in objs["graph"].items():
        for nb in nbrs:
            src.append(node)
            dst.append(nb)
    n_train = objs["y"].shape[0]
    train = np.zeros(n, dtype=bool)
    train[:n_train] = True
    val = np.zeros(n, dtype=bool)
    val[n_train:n_train + 500] = True
    test = np.zeros(n, dtype=bool)
    test[test_idx] = True
    return Graph(row_normalize(features), labels,
                 np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64),
                 np.ones(len(src)), train, val, test)


def dataset_root():
    return os.environ.get("GRAPHSLIM_DATA", "data")


@functools.lru_cache(maxsize=8)
def load_dataset(name, root=None):
    """Load a named dataset, preferring the vendored planetoid pickles."""
    root = root or dataset_root()
    planetoid = os.path.join(root, "planetoid")
    if os.path.exists(os.path.join(planetoid, "ind.%s.x" % name)):
        return convert_planetoid(planetoid, name)
    bundle = os.path.join(root, name)
    if os.path.exists(bundle):
        return load_bundle(bundle)
    raise DataError("no dataset named %r under %s" % (name, root))
