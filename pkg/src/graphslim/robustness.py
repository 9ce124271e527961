"""Graph corruptions: feature masking, random edge noise, and a projected
gradient structural attack, plus the poisoning / poisoning+evasion split."""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .data import Graph
from .engine import Tape, backward
from .models import ModelSpec, _act, forward, train

_EPS = 1e-7


class RobustnessError(ValueError):
    pass


@dataclass
class CorruptionSpec:
    kind: str
    rate: float
    scenario: str = "poisoning+evasion"
    repeats: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("feature", "structure", "attack"):
            raise RobustnessError("unknown corruption kind %r" % self.kind)
        if not (0.0 <= self.rate <= 1.0):
            raise RobustnessError("rate must lie in [0,1]")
        if self.scenario not in ("poisoning", "poisoning+evasion"):
            raise RobustnessError("unknown scenario %r" % self.scenario)
        if self.repeats < 1:
            raise RobustnessError("repeats must be >= 1")


def corrupt_features(graph, rate, seed=0):
    """Zero each feature entry independently with probability rate."""
    if not (0.0 <= rate <= 1.0):
        raise RobustnessError("rate must lie in [0,1]")
    rng = np.random.default_rng(seed)
    keep = rng.random(graph.features.shape) >= rate
    return graph.replace(features=graph.features * keep)


def _pair_lin(src, dst, n):
    # unique id of an i<j pair
    return src * n + dst


def corrupt_structure(graph, rate, seed=0):
    """Add round(rate * |E|) uniformly sampled absent edges with weight 1."""
    if not (0.0 <= rate <= 1.0):
        raise RobustnessError("rate must lie in [0,1]")
    n = graph.n
    k = int(round(rate * graph.src.size))
    if k == 0:
        return graph.replace()
    total = n * (n - 1) // 2
    if total - graph.src.size < k:
        raise RobustnessError("not enough absent pairs to add %d edges" % k)
    rng = np.random.default_rng(seed)
    taken = set(_pair_lin(graph.src, graph.dst, n).tolist())
    new = []
    while len(new) < k:
        cand = rng.integers(0, n, size=(max(4 * k, 64), 2))
        cand = cand[cand[:, 0] != cand[:, 1]]
        cand.sort(axis=1)
        for i, j in cand:
            lin = int(i) * n + int(j)
            if lin in taken:
                continue
            taken.add(lin)
            new.append((int(i), int(j)))
            if len(new) == k:
                break
    add = np.asarray(new, dtype=np.int64)
    return graph.replace(src=np.concatenate([graph.src, add[:, 0]]),
                         dst=np.concatenate([graph.dst, add[:, 1]]),
                         weight=np.concatenate([graph.weight, np.ones(k)]))


def apply_scenario(clean, corrupted, scenario):
    """(training input, inference input) for the chosen corruption scenario."""
    if clean.n != corrupted.n or not np.array_equal(clean.labels,
                                                    corrupted.labels):
        raise RobustnessError("clean and corrupted graphs disagree on nodes")
    if scenario == "poisoning+evasion":
        return corrupted, corrupted
    if scenario == "poisoning":
        return corrupted, clean
    raise RobustnessError("unknown scenario %r" % scenario)


def corrupt(graph, spec, repeat=0, surrogate=None):
    """Dispatch one corruption repeat of a CorruptionSpec."""
    seed = np.random.SeedSequence((spec.seed, 97, repeat))
    if spec.kind == "feature":
        return corrupt_features(graph, spec.rate, seed)
    if spec.kind == "structure":
        return corrupt_structure(graph, spec.rate, seed)
    return attack_prbcd(graph, surrogate, spec.rate, seed)


# ------------------------------------------------------------ the attack

def _sample_pairs(rng, n, count, exclude):
    """count unique i<j pairs none of which appear in the exclude id set."""
    out = []
    for _ in range(20):
        cand = rng.integers(0, n, size=(2 * count + 64, 2))
        cand = cand[cand[:, 0] != cand[:, 1]]
        cand.sort(axis=1)
        lin = cand[:, 0] * n + cand[:, 1]
        for row, ident in zip(cand, lin):
            if ident in exclude:
                continue
            exclude.add(int(ident))
            out.append((int(row[0]), int(row[1])))
            if len(out) == count:
                return np.asarray(out, dtype=np.int64)
    raise RobustnessError("could not sample a candidate block; shrink it")


def _project(w, budget):
    """Clip to [0,1]; if the mass exceeds budget, shift down by bisection."""
    wc = np.clip(w, 0.0, 1.0)
    if wc.sum() <= budget:
        return wc
    lo, hi = (w - 1.0).min(), w.max()
    for _ in range(80):
        mu = 0.5 * (lo + hi)
        if np.clip(w - mu, 0.0, 1.0).sum() > budget:
            lo = mu
        else:
            hi = mu
    return np.clip(w - hi, 0.0, 1.0)


def _perturbed_agg(tape, apl, deg_node, sw, pairs, h):
    # D'^-1/2 (A + I + sign.P) D'^-1/2 h without densifying the perturbation
    s = tape.pow_const(deg_node, -0.5)
    hs = tape.mul(h, s)
    base = tape.matmul(apl, hs)
    return tape.mul(tape.add(base, tape.pair_aggregate(sw, pairs, hs)), s)


def _surrogate_loss_node(tape, spec, params, graph, w_node, sign, pairs,
                         deg0, apl, xw0):
    n = graph.n
    sw = tape.mul(w_node, sign)
    ddeg = tape.pair_aggregate(sw, pairs, tape.constant(np.ones((n, 1))))
    deg = tape.add(ddeg, deg0[:, None])
    h = xw0
    for i in range(spec.layers):
        hw = tape.matmul(h, params["w%d" % i]) if i > 0 else tape.constant(h)
        hw = _perturbed_agg(tape, apl, deg, sw, pairs, hw)
        hw = tape.add(hw, params["b%d" % i])
        h = _act(tape, spec.activation, hw) if i < spec.layers - 1 else hw
    idx = np.flatnonzero(graph.train_mask)
    return tape.cross_entropy(tape.take_rows(h, idx), graph.labels[idx])


def _flip_edges(graph, flip_pairs):
    """Graph with the given i<j pairs toggled (weight 1 for additions)."""
    n = graph.n
    existing = _pair_lin(graph.src, graph.dst, n)
    flips = _pair_lin(flip_pairs[:, 0], flip_pairs[:, 1], n)
    drop = np.isin(existing, flips)
    added = flip_pairs[~np.isin(flips, existing)]
    return graph.replace(
        src=np.concatenate([graph.src[~drop], added[:, 0]]),
        dst=np.concatenate([graph.dst[~drop], added[:, 1]]),
        weight=np.concatenate([graph.weight[~drop],
                               np.ones(added.shape[0])]))


def _train_ce(logits, labels, idx):
    z = logits[idx]
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(idx.size), labels[idx]].mean())


def attack_prbcd(graph, surrogate=None, budget_rate=0.25, seed=0, steps=100,
                 block_size=10000, lr=100.0, final_draws=20, train_cfg=None,
                 return_info=False):
    """Poison the structure by projected gradient ascent on a surrogate.

    Flips (additions and deletions) are relaxed to [0,1] weights on a random
    block of candidate pairs; after each ascent step the weights are
    projected onto the budget simplex and exhausted coordinates are
    resampled. The final graph flips exactly budget pairs, keeping the
    sampled set with the highest surrogate training loss.
    """
    if not (0.0 <= budget_rate < 1.0):
        raise RobustnessError("budget_rate must lie in [0,1)")
    spec = surrogate or ModelSpec(arch="gcn", layers=2, hidden=64,
                                  dropout=0.5)
    if spec.arch != "gcn":
        raise RobustnessError("the attack surrogate must be a gcn")
    budget = int(round(budget_rate * graph.src.size))
    info = {"budget": budget, "mass": [], "loss": []}
    if budget == 0:
        out = graph.replace()
        return (out, info) if return_info else out
    n = graph.n
    block = min(block_size, n * (n - 1) // 2 - 1)
    if block < budget:
        raise RobustnessError("candidate block smaller than the budget")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 131))
                                if np.isscalar(seed) else seed)
    try:
        params, _, _ = train(spec, graph, train_cfg=train_cfg, seed=0)
    except Exception as e:
        raise RobustnessError("surrogate training failed: %s" % e) from e
    info["surrogate_params"] = params

    adj = graph.adjacency().tocsr()
    apl = (adj + sp.eye(n, format="csr")).tocsr()
    deg0 = np.asarray(apl.sum(axis=1)).ravel()
    existing = np.sort(_pair_lin(graph.src, graph.dst, n))
    xw0 = graph.features @ params["w0"]

    def draw_block(count, known):
        pairs = _sample_pairs(rng, n, count, known)
        lin = _pair_lin(pairs[:, 0], pairs[:, 1], n)
        sign = np.where(np.isin(lin, existing), -1.0, 1.0)
        return pairs, sign

    pairs, sign = draw_block(block, set())
    w = np.full(block, _EPS)
    for step in range(steps):
        tape = Tape()
        w_node = tape.leaf(w, requires_grad=True)
        loss = _surrogate_loss_node(tape, spec, params, graph, w_node, sign,
                                    (pairs[:, 0], pairs[:, 1]), deg0, apl,
                                    xw0)
        g = backward(tape, loss)[w_node.nid]
        step_lr = budget / n * lr / np.sqrt(step + 1)
        w = _project(w + step_lr * g, budget)
        info["mass"].append(float(w.sum()))
        info["loss"].append(float(loss.value))
        if step < steps - 1:
            # swap out coordinates the projection zeroed, at least half
            order = np.argsort(w)
            drop = max(int((w <= _EPS).sum()), block // 2)
            drop = min(drop, block - budget)
            keep = order[drop:]
            kept_lin = set(_pair_lin(pairs[keep, 0], pairs[keep, 1],
                                     n).tolist())
            fresh, fresh_sign = draw_block(block - keep.size, kept_lin)
            pairs = np.concatenate([pairs[keep], fresh])
            sign = np.concatenate([sign[keep], fresh_sign])
            w = np.concatenate([w[keep], np.full(fresh.shape[0], _EPS)])

    train_idx = np.flatnonzero(graph.train_mask)
    best_loss, best_pairs = -np.inf, None
    mass = np.where(w > _EPS, w, 0.0)
    for d in range(final_draws):
        if d == 0 or mass.sum() == 0.0:
            pick = np.argsort(-mass)[:budget]  # top-k heuristic first
        else:
            p = mass / mass.sum()
            m = min(budget, int((p > 0).sum()))
            pick = rng.choice(block, size=m, replace=False, p=p)
            if m < budget:
                rest = np.setdiff1d(np.argsort(-mass), pick,
                                    assume_unique=False)
                pick = np.concatenate([pick, rest[:budget - m]])
        cand = _flip_edges(graph, pairs[np.sort(pick)])
        logits = forward(spec, params, cand.adjacency(), cand.features)
        cur = _train_ce(logits, graph.labels, train_idx)
        if cur > best_loss:
            best_loss, best_pairs = cur, pairs[np.sort(pick)]
    out = _flip_edges(graph, best_pairs)
    info["flips"] = best_pairs
    info["final_loss"] = best_loss
    return (out, info) if return_info else out
