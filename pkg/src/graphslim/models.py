"""Forward passes, initialization, training, and evaluation for the GNN zoo.

All architectures run on the tape engine so the same forward code serves
plain training, gradient matching, and differentiation wrt synthetic inputs.
Constant graph-side operators (normalized adjacencies, Chebyshev bases,
neighbor means) are prepared once per training run by build_propagator.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .data import normalize_adjacency
from .engine import AdamState, Node, Tape, adam_step, backward


class ModelError(ValueError):
    pass


ACTIVATIONS = ("sigmoid", "tanh", "relu", "linear", "softplus",
               "leaky_relu", "relu6", "elu")


@dataclass
class ModelSpec:
    arch: str = "gcn"
    layers: int = 2
    hidden: int = 256
    dropout: float = 0.5
    activation: str = "relu"
    k: int = 2
    alpha: float = 0.1

    def __post_init__(self):
        if self.arch not in ("gcn", "sgc", "appnp", "cheby", "sage"):
            raise ModelError("unknown arch %r" % self.arch)
        if self.activation not in ACTIVATIONS:
            raise ModelError("unknown activation %r" % self.activation)
        if self.hidden <= 0 or self.layers < 1:
            raise ModelError("bad width/depth")
        if not (0 < self.alpha <= 1):
            raise ModelError("alpha must lie in (0, 1]")


@dataclass
class TrainConfig:
    lr: float = 0.01
    weight_decay: float = 5e-4
    epochs: int = 300
    snapshot_every: int = 0  # 0 disables intermediate snapshots


@dataclass
class Trajectory:
    epochs: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    val_accs: list = field(default_factory=list)

    def append(self, epoch, params, val_acc):
        if self.epochs and epoch <= self.epochs[-1]:
            raise ModelError("trajectory epochs must increase")
        self.epochs.append(epoch)
        self.snapshots.append({k: v.copy() for k, v in params.items()})
        self.val_accs.append(val_acc)


def _act(tape, name, x):
    if name == "linear":
        return x
    return getattr(tape, {"leaky_relu": "leaky_relu"}.get(name, name))(x)


def _linear_dims(spec, in_dim, out_dim):
    if spec.layers == 1:
        return [(in_dim, out_dim)]
    dims = [(in_dim, spec.hidden)]
    dims += [(spec.hidden, spec.hidden)] * (spec.layers - 2)
    dims.append((spec.hidden, out_dim))
    return dims


def init_params(spec, in_dim, out_dim, seed):
    """Uniform fan-in initialization, deterministic per seed."""
    rng = np.random.default_rng(seed)
    params = {}

    def mat(name, fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[name.replace("w", "b", 1)] = rng.uniform(-bound, bound, size=fan_out)

    if spec.arch in ("gcn", "sgc", "appnp"):
        for i, (fi, fo) in enumerate(_linear_dims(spec, in_dim, out_dim)):
            mat("w%d" % i, fi, fo)
    elif spec.arch == "cheby":
        for i, (fi, fo) in enumerate(_linear_dims(spec, in_dim, out_dim)):
            bound = 1.0 / np.sqrt(fi)
            for kk in range(spec.k):
                params["w%d_%d" % (i, kk)] = rng.uniform(
                    -bound, bound, size=(fi, fo))
            params["b%d" % i] = rng.uniform(-bound, bound, size=fo)
    elif spec.arch == "sage":
        for i, (fi, fo) in enumerate(_linear_dims(spec, in_dim, out_dim)):
            mat("w%d" % i, 2 * fi, fo)
    return params


def _estimate_lmax(lap_apply, n, iters=100):
    v = np.ones(n) + 1e-3 * np.arange(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = lap_apply(v)
        norm = np.linalg.norm(w)
        if norm < 1e-12:
            return 2.0
        v = w / norm
        lam_next = float(v @ lap_apply(v))
        if abs(lam_next - lam) < 1e-9 * max(1.0, abs(lam_next)):
            return lam_next
        lam = lam_next
    return lam


def _scaled_laplacian(adj):
    """2 L_sym / lmax - I as an explicit matrix, sparse in, sparse out."""
    n = adj.shape[0]
    dense = not sp.issparse(adj)
    a = np.asarray(adj, dtype=np.float64) if dense else adj.tocsr()
    deg = a.sum(axis=1) if dense else np.asarray(a.sum(axis=1)).ravel()
    dinv = 1.0 / np.sqrt(np.maximum(deg, 1e-12))
    if dense:
        lsym = np.eye(n) - a * dinv[:, None] * dinv[None, :]
    else:
        d = sp.diags(dinv)
        lsym = sp.eye(n, format="csr") - (d @ a @ d).tocsr()
    lmax = _estimate_lmax(lambda v: lsym @ v, n)
    lmax = max(lmax, 1e-9)
    if dense:
        return 2.0 / lmax * lsym - np.eye(n)
    return (2.0 / lmax * lsym - sp.eye(n, format="csr")).tocsr()


def _row_normalized(adj):
    if sp.issparse(adj):
        a = adj.tocsr()
        deg = np.asarray(a.sum(axis=1)).ravel()
        inv = np.where(deg > 0, 1.0 / np.maximum(deg, 1e-12), 0.0)
        return (sp.diags(inv) @ a).tocsr()
    a = np.asarray(adj, dtype=np.float64)
    deg = a.sum(axis=1)
    inv = np.where(deg > 0, 1.0 / np.maximum(deg, 1e-12), 0.0)
    return a * inv[:, None]


def _maybe_sparse(x):
    # sparse payoff: citation features are around one percent dense
    if isinstance(x, np.ndarray) and x.size > 65536:
        nnz = np.count_nonzero(x)
        if nnz < 0.05 * x.size:
            return sp.csr_matrix(x)
    return x


def build_propagator(spec, adj, x):
    """Precompute the constant pieces of a forward pass.

    adj is the raw symmetric adjacency (sparse, dense, or None for the
    identity graph); x the constant feature matrix. Returns the prop dict
    consumed by forward. Only valid while adj and x stay constant.
    """
    if isinstance(adj, Node) or isinstance(x, Node):
        raise ModelError("build_propagator expects constant inputs")
    prop = {"kind": spec.arch, "n": x.shape[0]}
    identity = adj is None
    if spec.arch in ("gcn", "appnp", "sgc"):
        # keep x sparse and aggregate the (much smaller) hidden states instead
        prop["ahat"] = None if identity else normalize_adjacency(
            adj, add_self_loops=True)
        prop["x0"] = _maybe_sparse(x)
    elif spec.arch == "cheby":
        if identity:
            # scaled laplacian of the identity graph is -I; bases alternate sign
            prop["tx"] = [np.asarray(x, dtype=np.float64) * (1.0, -1.0)[kk % 2]
                          for kk in range(spec.k)]
            prop["lt"] = None
        else:
            lt = _scaled_laplacian(adj)
            bases = [np.asarray(x, dtype=np.float64)]
            if spec.k > 1:
                bases.append(lt @ bases[0])
            for _ in range(2, spec.k):
                bases.append(2.0 * (lt @ bases[-1]) - bases[-2])
            prop["tx"] = bases
            prop["lt"] = lt
        prop["tx"] = [_maybe_sparse(np.asarray(b)) for b in prop["tx"]]
    elif spec.arch == "sage":
        arow = None if identity else _row_normalized(adj)
        xd = np.asarray(x, dtype=np.float64)
        nbr = np.zeros_like(xd) if identity else np.asarray(arow @ xd)
        prop["x0"] = _maybe_sparse(np.concatenate([xd, nbr], axis=1))
        prop["arow"] = arow
    return prop


def _hop_closure(adj_csr, seed_idx, hops):
    """Indices reachable from seed_idx within the given hop count."""
    reach = np.zeros(adj_csr.shape[0], dtype=bool)
    reach[seed_idx] = True
    frontier = np.asarray(seed_idx)
    for _ in range(hops):
        nxt = adj_csr[frontier].indices
        new = nxt[~reach[nxt]]
        if new.size == 0:
            break
        reach[new] = True
        frontier = np.unique(new)
    return np.flatnonzero(reach)


def _loss_restricted_prop(spec, adj, x, train_idx):
    """Training-loss compute plan restricted to the train hop closure.

    Only rows within h hops of the training nodes can influence the loss of
    an h-hop architecture, so the normalized operator and features can be
    sliced to that closure. Degrees are taken from the full graph before
    slicing, which keeps the arithmetic on every loss-relevant row identical
    to the unrestricted pass. Returns (prop, remapped train indices) or None
    when the closure covers most of the graph anyway.
    """
    if not sp.issparse(adj) or spec.arch not in ("gcn", "sgc"):
        return None
    hops = spec.layers if spec.arch == "gcn" else spec.k
    rows = _hop_closure(adj.tocsr(), train_idx, hops)
    if rows.size >= 0.9 * adj.shape[0]:
        return None
    ahat = normalize_adjacency(adj, add_self_loops=True).tocsr()
    prop = {"kind": spec.arch, "n": rows.size,
            "ahat": ahat[rows][:, rows].tocsr(),
            "x0": _maybe_sparse(np.asarray(x, dtype=np.float64)[rows])}
    remap = np.full(adj.shape[0], -1, dtype=np.int64)
    remap[rows] = np.arange(rows.size)
    return prop, remap[train_idx]


def _dropout(tape, h, rate, rng, train_mode):
    if not train_mode or rate <= 0 or rng is None:
        return h
    draw = rng.random(h.value.shape, dtype=np.float32)
    mask = (draw >= rate) / (1.0 - rate)
    return tape.mul(h, tape.constant(mask))


def _mm(tape, a, b):
    # a may be None (identity), sparse, ndarray, or a Node
    if a is None:
        return b
    return tape.matmul(a, b)


def forward_tape(tape, spec, params, prop, train_mode=False, rng=None):
    """Logits as a tape node. params maps names to Nodes or arrays."""
    P = {k: (v if isinstance(v, Node) else tape.constant(v))
         for k, v in params.items()}
    drop = lambda h: _dropout(tape, h, spec.dropout, rng, train_mode)
    act = lambda h: _act(tape, spec.activation, h)
    kind = prop["kind"]

    if kind in ("gcn", "sgc"):
        h = prop["x0"]
        ahat = prop.get("ahat")
        nl = spec.layers
        for i in range(nl):
            hw = tape.matmul(h, P["w%d" % i])
            if ahat is not None:
                if kind == "gcn":
                    hw = _mm(tape, ahat, hw)
                elif i == 0:
                    # (A^k X) W == A^k (X W), applied where it is cheapest
                    for _ in range(spec.k):
                        hw = _mm(tape, ahat, hw)
            hw = tape.add(hw, P["b%d" % i])
            h = act(hw) if i < nl - 1 else hw
            if i < nl - 1:
                h = drop(h)
        return h

    if kind == "appnp":
        h = prop["x0"]
        for i in range(spec.layers):
            hw = tape.add(tape.matmul(h, P["w%d" % i]), P["b%d" % i])
            h = drop(act(hw)) if i < spec.layers - 1 else hw
        z = h
        if prop["ahat"] is None:
            return z
        for _ in range(spec.k):
            h = tape.add(tape.mul(_mm(tape, prop["ahat"], h), 1.0 - spec.alpha),
                         tape.mul(z, spec.alpha))
        return h

    if kind == "cheby":
        nl = spec.layers
        h = None
        for i in range(nl):
            if i == 0:
                terms = [tape.matmul(prop["tx"][kk], P["w0_%d" % kk])
                         for kk in range(min(spec.k, len(prop["tx"])))]
            else:
                bases = [h]
                if spec.k > 1:
                    bases.append(_mm(tape, prop["lt"], h) if prop["lt"] is not None
                                 else tape.neg(h))
                for _ in range(2, spec.k):
                    nxt = _mm(tape, prop["lt"], bases[-1]) if prop["lt"] is not None \
                        else tape.neg(bases[-1])
                    bases.append(tape.sub(tape.mul(nxt, 2.0), bases[-2]))
                terms = [tape.matmul(bases[kk], P["w%d_%d" % (i, kk)])
                         for kk in range(spec.k)]
            hw = terms[0]
            for t in terms[1:]:
                hw = tape.add(hw, t)
            hw = tape.add(hw, P["b%d" % i])
            h = act(hw) if i < nl - 1 else hw
            if i < nl - 1:
                h = drop(h)
        return h

    if kind == "sage":
        h = prop["x0"]
        for i in range(spec.layers):
            if i > 0:
                nbr = _mm(tape, prop["arow"], h) if prop["arow"] is not None \
                    else tape.mul(h, 0.0)
                h = tape.concat([h, nbr], axis=1)
            hw = tape.add(tape.matmul(h, P["w%d" % i]), P["b%d" % i])
            h = act(hw) if i < spec.layers - 1 else hw
            if i < spec.layers - 1:
                h = drop(h)
        return h

    raise ModelError("unknown arch %r" % kind)


def forward(spec, params, adj, x, train_mode=False, dropout_mask_seed=0):
    """Numeric logits for a constant graph. adj is the raw adjacency."""
    prop = build_propagator(spec, adj, x)
    tape = Tape()
    rng = np.random.default_rng(dropout_mask_seed) if train_mode else None
    return forward_tape(tape, spec, params, prop, train_mode, rng).value


def train(spec, graph, adjacency_override=None, train_cfg=None, seed=0,
          val_graph=None):
    """Full-batch Adam on the train mask. Returns (params, trajectory, best val).

    adjacency_override: None uses the graph's own adjacency; the string
    "identity" trains without structure; a matrix substitutes the adjacency.
    Validation accuracy is measured on val_graph (default: the graph itself)
    at every snapshot.
    """
    cfg = train_cfg or TrainConfig()
    if adjacency_override is None:
        adj = graph.adjacency()
    elif isinstance(adjacency_override, str) and adjacency_override == "identity":
        adj = None
    else:
        adj = adjacency_override
    d = graph.features.shape[1]
    c = graph.num_classes
    params = init_params(spec, d, c, seed)
    train_idx = np.flatnonzero(graph.train_mask)
    if train_idx.size == 0:
        raise ModelError("empty training mask")
    labels = graph.labels[train_idx]
    restricted = _loss_restricted_prop(spec, adj, graph.features, train_idx)
    if restricted is not None:
        prop, fit_idx = restricted
    else:
        prop, fit_idx = build_propagator(spec, adj, graph.features), train_idx
    vg = val_graph if val_graph is not None else graph
    eval_prop = None

    def val_acc_now(p):
        nonlocal eval_prop
        if not vg.val_mask.any():
            return float("nan")
        if eval_prop is None:
            eval_prop = build_propagator(spec, vg.adjacency(), vg.features)
        t = Tape()
        logits = forward_tape(t, spec, p, eval_prop).value
        pred = logits.argmax(axis=1)
        return float((pred[vg.val_mask] == vg.labels[vg.val_mask]).mean())

    traj = Trajectory()
    traj.append(0, params, val_acc_now(params))
    state = AdamState(lr=cfg.lr)
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 2654435761, epoch)))
        tape = Tape()
        leaves = {k: tape.leaf(v, requires_grad=True) for k, v in params.items()}
        try:
            logits = forward_tape(tape, spec, leaves, prop, True, rng)
            loss = tape.cross_entropy(tape.take_rows(logits, fit_idx), labels)
        except Exception as e:
            raise ModelError("loss failed at epoch %d: %s" % (epoch + 1, e)) from e
        grads = backward(tape, loss)
        gmap = {}
        for k in params:
            g = grads[leaves[k].nid]
            if cfg.weight_decay:
                g = g + cfg.weight_decay * params[k]
            gmap[k] = g
        params, state = adam_step(params, gmap, state)
        ep = epoch + 1
        if cfg.snapshot_every and (ep % cfg.snapshot_every == 0 or ep == cfg.epochs):
            traj.append(ep, params, val_acc_now(params))
    if not (cfg.snapshot_every and cfg.epochs in traj.epochs) and cfg.epochs > 0:
        traj.append(cfg.epochs, params, val_acc_now(params))
    accs = [a for a in traj.val_accs if not np.isnan(a)]
    best = max(accs) if accs else float("nan")
    return params, traj, best


def evaluate(spec, params, graph, mask):
    """Accuracy of the argmax prediction over the masked nodes."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ModelError("empty evaluation mask")
    logits = forward(spec, params, graph.adjacency(), graph.features)
    pred = logits.argmax(axis=1)
    return float((pred[mask] == graph.labels[mask]).mean())
