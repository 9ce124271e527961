"""Infinite-width kernel condensation: GNTK recursion plus ridge regression."""

import numpy as np
import scipy.sparse as sp

from ..data import normalize_adjacency
from ..engine import AdamState, Tape, adam_step
from .synth import init_synthetic
from .types import CondenseConfig, CondensedGraph, CondenseError, \
    CondenseResult, config_hash

_TINY = 1e-30
_EDGE = 1e-9  # keep arccos inputs off the exact boundary on the tape


def _k0(u):
    return (np.pi - np.arccos(u)) / np.pi


def _k1(u):
    return (u * (np.pi - np.arccos(u))
            + np.sqrt(np.maximum(1.0 - u * u, 0.0))) / np.pi


def _agg(adj):
    return None if adj is None else normalize_adjacency(adj, add_self_loops=True)


def _gram(x):
    g = x @ x.T
    return g.toarray() if sp.issparse(g) else np.asarray(g)


def gntk(x_a, adj_a, x_b, adj_b, depth=2):
    """Node-level tangent kernel of a depth-layer ReLU GCN.

    Covariances start from the feature Grams; each layer aggregates with the
    normalized operators (identity when adj is None), then passes through
    the arc-cosine covariance and derivative maps, accumulating the kernel.
    """
    xa = x_a if sp.issparse(x_a) else np.asarray(x_a, dtype=np.float64)
    xb = x_b if sp.issparse(x_b) else np.asarray(x_b, dtype=np.float64)
    if xa.shape[1] != xb.shape[1]:
        raise CondenseError("feature dimensions differ")
    aa, ab = _agg(adj_a), _agg(adj_b)
    saa, sbb = _gram(xa), _gram(xb)
    sab = xa @ xb.T
    sab = sab.toarray() if sp.issparse(sab) else np.asarray(sab)
    th = sab.copy()
    for _ in range(depth):
        if aa is not None:
            saa = aa @ saa @ aa.T
            sab = aa @ sab
            th = aa @ th
        if ab is not None:
            sbb = ab @ sbb @ ab.T
            sab = sab @ ab.T
            th = th @ ab.T
        da = np.maximum(np.diag(saa), 0.0)
        db = np.maximum(np.diag(sbb), 0.0)
        nab = np.sqrt(np.outer(da, db) + _TINY)
        u = np.clip(sab / nab, -1.0, 1.0)
        sab = nab * _k1(u)
        th = th * _k0(u) + sab
        naa = np.sqrt(np.outer(da, da) + _TINY)
        saa = naa * _k1(np.clip(saa / naa, -1.0, 1.0))
        nbb = np.sqrt(np.outer(db, db) + _TINY)
        sbb = nbb * _k1(np.clip(sbb / nbb, -1.0, 1.0))
    return th


def krr_loss(k_ss, k_ts, y_s, y_t, eps):
    """Half squared error of the kernel ridge predictor on the targets."""
    if eps <= 0.0:
        raise CondenseError("ridge epsilon must be positive")
    m = k_ss.shape[0]
    alpha = np.linalg.solve(k_ss + eps * np.eye(m), y_s)
    resid = y_t - k_ts @ alpha
    return float(0.5 * (resid * resid).sum())


def _tside_diagonals(x, ahat, depth):
    # per-layer post-aggregation variances of the original side
    s = _gram(x)
    out = []
    for _ in range(depth):
        s = ahat @ s @ ahat.T
        d = np.maximum(np.diag(s).copy(), 0.0)
        out.append(d)
        n = np.sqrt(np.outer(d, d) + _TINY)
        s = n * _k1(np.clip(s / n, -1.0, 1.0))
    return out


def _diag_node(tape, s, eye):
    return tape.sum(tape.mul(s, eye), axis=1, keepdims=True)


def _krr_loss_node(tape, xs, x_const, ahat, dts, train_idx, y_s, y_t, eps,
                   depth):
    """L_KRR as a tape node; only the synthetic features are differentiable."""
    m = xs.value.shape[0]
    eye = tape.constant(np.eye(m))
    sss = tape.matmul(xs, tape.transpose(xs))
    sts = tape.matmul(x_const, tape.transpose(xs))
    tss, tts = sss, sts
    for layer in range(depth):
        sts = tape.matmul(ahat, sts)
        tts = tape.matmul(ahat, tts)
        dss = _diag_node(tape, sss, eye)
        dt = tape.constant(dts[layer][:, None])
        nts = tape.pow_const(
            tape.add(tape.mul(dt, tape.transpose(dss)), _TINY), 0.5)
        uts = tape.clip(tape.div(sts, nts), -1.0 + _EDGE, 1.0 - _EDGE)
        sts = tape.mul(nts, tape.kappa1(uts))
        tts = tape.add(tape.mul(tts, tape.kappa0(uts)), sts)
        nss = tape.pow_const(
            tape.add(tape.mul(dss, tape.transpose(dss)), _TINY), 0.5)
        uss = tape.clip(tape.div(sss, nss), -1.0 + _EDGE, 1.0 - _EDGE)
        sss = tape.mul(nss, tape.kappa1(uss))
        tss = tape.add(tape.mul(tss, tape.kappa0(uss)), sss)
    k_ts = tape.take_rows(tts, train_idx)
    k_reg = tape.add(tss, tape.constant(eps * np.eye(m)))
    alpha = tape.solve(k_reg, tape.constant(y_s))
    resid = tape.sub(tape.constant(y_t), tape.matmul(k_ts, alpha))
    return tape.mul(tape.sum(tape.mul(resid, resid)), 0.5)


def condense_krr(graph, budget, eps=None, config=None):
    """Learn synthetic features whose kernel ridge predictor hits the
    original training labels. Targets are the fixed one-hot labels of the
    per-class budget; the synthetic side is structure-free."""
    cfg = config or CondenseConfig(method="gcsntk", budget=budget)
    if cfg.method != "gcsntk":
        raise CondenseError("condense_krr expects the kernel method")
    eps = cfg.epsilon if eps is None else float(eps)
    if eps <= 0.0:
        raise CondenseError("ridge epsilon must be positive")
    budget = np.asarray(budget, dtype=np.int64)
    c = int(graph.labels.max()) + 1
    if budget.size != c:
        raise CondenseError("budget does not cover every class")
    cond0 = init_synthetic(graph, budget, cfg.init, cfg.seed)
    x_syn = cond0.features.copy()
    y_syn = cond0.labels
    m = x_syn.shape[0]
    train_idx = np.flatnonzero(graph.train_mask)
    y_t = np.zeros((train_idx.size, c))
    y_t[np.arange(train_idx.size), graph.labels[train_idx]] = 1.0
    y_s = np.zeros((m, c))
    y_s[np.arange(m), y_syn] = 1.0
    ahat = normalize_adjacency(graph.adjacency(), add_self_loops=True)
    x = np.asarray(graph.features, dtype=np.float64)
    xc = sp.csr_matrix(x) if np.count_nonzero(x) < 0.05 * x.size else x
    dts = _tside_diagonals(xc, ahat, cfg.depth)
    opt = AdamState(lr=cfg.lr_feat)
    losses, snaps = [], []
    snap_every = max(1, cfg.outer // max(1, cfg.snapshots))

    def emit():
        meta = {"method": cfg.method, "config": config_hash(cfg.to_meta()),
                "init": cfg.init, "epsilon": eps}
        return CondensedGraph(x_syn.copy(), y_syn, None, 0.0, meta)

    for it in range(cfg.outer):
        tape = Tape()
        xs = tape.leaf(x_syn, requires_grad=True)
        loss = _krr_loss_node(tape, xs, xc, ahat, dts, train_idx, y_s, y_t,
                              eps, cfg.depth)
        if not np.isfinite(loss.value):
            raise CondenseError("kernel ridge loss diverged")
        g = tape.grad(loss, [xs])[0].value
        x_syn, opt = adam_step({"x": x_syn}, {"x": g}, opt)
        x_syn = x_syn["x"]
        losses.append(float(loss.value))
        if (it + 1) % snap_every == 0 or it == cfg.outer - 1:
            snaps.append((it + 1, emit()))
    return CondenseResult(emit(), snaps, losses)
