"""Synthetic node initialization, the MLP edge generator, and thresholding."""

import numpy as np
from scipy.special import expit

from ..coreset import select_herding, select_kcenter, select_random
from .types import CondensedGraph, CondenseError


def init_synthetic(graph, budget, strategy="random-sample", seed=0):
    """Seed the synthetic node set from the training nodes.

    Feature rows are copied from the chosen training nodes (class means
    for averaging); labels follow the per-class budget; no structure yet.
    """
    budget = np.asarray(budget, dtype=np.int64)
    if strategy == "averaging":
        # deferred import: coarsening shares the condensed-graph container
        from ..coarsen import coarsen_averaging
        cg = coarsen_averaging(graph, budget, seed)
        return CondensedGraph(cg.features, cg.labels, None,
                              meta={"init": strategy})
    if strategy == "random-sample":
        sel = select_random(graph, budget, seed)
    elif strategy == "kcenter":
        sel = select_kcenter(graph, budget, seed=seed)
    elif strategy == "herding":
        sel = select_herding(graph, budget)
    else:
        raise CondenseError("unknown init strategy %r" % strategy)
    ids = sel.ids
    return CondensedGraph(graph.features[ids], graph.labels[ids], None,
                          meta={"init": strategy})


def init_structure(dim, hidden=128, seed=0):
    """Glorot-uniform pairwise MLP: concat [x_i; x_j] -> hidden -> logit."""
    rng = np.random.default_rng(seed)

    def mat(fi, fo):
        lim = np.sqrt(6.0 / (fi + fo))
        return rng.uniform(-lim, lim, size=(fi, fo))

    return {"w0": mat(2 * dim, hidden), "b0": np.zeros(hidden),
            "w1": mat(hidden, 1), "b1": np.zeros(1)}


def gen_structure(phi, x):
    """Symmetric edge probabilities a_ij = sigmoid of the averaged pair logit.

    The first linear layer splits over the concatenation, so the m^2 pair
    matrix is never materialized at feature width.
    """
    x = np.asarray(x, dtype=np.float64)
    m, d = x.shape
    w0 = phi["w0"]
    if w0.shape[0] != 2 * d:
        raise CondenseError("generator width does not match features")
    u = x @ w0[:d] + phi["b0"]
    v = x @ w0[d:]
    h = np.maximum(u[:, None, :] + v[None, :, :], 0.0)
    logit = (h.reshape(m * m, -1) @ phi["w1"]).reshape(m, m) + phi["b1"][0]
    a = expit(0.5 * (logit + logit.T))
    np.fill_diagonal(a, 0.0)
    return a


def structure_tape(tape, phi, x):
    """Tape twin of gen_structure; phi maps names to nodes, x is a node."""
    m, d = x.value.shape
    hid = phi["w0"].value.shape[1]
    ws = tape.slice_axis(phi["w0"], 0, 0, d)
    wd = tape.slice_axis(phi["w0"], 0, d, 2 * d)
    u = tape.add(tape.matmul(x, ws), phi["b0"])
    v = tape.matmul(x, wd)
    h = tape.relu(tape.add(tape.reshape(u, (m, 1, hid)),
                           tape.reshape(v, (1, m, hid))))
    logit = tape.reshape(tape.matmul(tape.reshape(h, (m * m, hid)), phi["w1"]),
                         (m, m))
    logit = tape.add(logit, phi["b1"])
    sym = tape.mul(tape.add(logit, tape.transpose(logit)), 0.5)
    mask = 1.0 - np.eye(m)
    return tape.mul(tape.sigmoid(sym), tape.constant(mask))


def ahat_tape(tape, a):
    """Symmetric degree-normalized operator of a dense adjacency node."""
    m = a.value.shape[0]
    apl = tape.add(a, tape.constant(np.eye(m)))
    s = tape.pow_const(tape.sum(apl, axis=1, keepdims=True), -0.5)
    return tape.mul(tape.mul(apl, s), tape.transpose(s))


def sparsify(cond, delta):
    """Zero out adjacency entries below delta; weights above it survive."""
    if cond.adj is None:
        raise CondenseError("cannot sparsify a structure-free graph")
    a = cond.adj.copy()
    a[a < delta] = 0.0
    meta = dict(cond.meta)
    meta["sparsified"] = float(delta)
    return CondensedGraph(cond.features, cond.labels, a, 0.0, meta)
