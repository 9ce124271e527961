"""Trajectory matching against a buffer of expert training runs."""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from ..engine import AdamState, Tape, adam_step
from ..models import ModelSpec, TrainConfig, forward_tape, train
from .synth import init_synthetic
from .types import CondensedGraph, CondenseError, CondenseResult, config_hash

_SPEC_FIELDS = ("arch", "layers", "hidden", "dropout", "activation", "k",
                "alpha")


def _spec_dict(spec):
    return {f: getattr(spec, f) for f in _SPEC_FIELDS}


def _graph_fingerprint(graph):
    return config_hash({"n": int(graph.n), "d": int(graph.features.shape[1]),
                        "classes": int(graph.labels.max()) + 1,
                        "edges": int(graph.src.size),
                        "labelsum": int(graph.labels.sum())})


@dataclass
class ExpertBuffer:
    """Parameter snapshots from repeated whole-graph trainings.

    All trajectories share the backbone spec and the snapshot epochs, so a
    (trajectory, index) pair addresses a consistent point in training time.
    """

    spec: ModelSpec
    interval: int
    epochs: list
    trajectories: list = field(default_factory=list)  # one list of param dicts each
    seeds: list = field(default_factory=list)
    source: str = ""

    def __post_init__(self):
        if len(self.trajectories) != len(self.seeds):
            raise CondenseError("one seed per trajectory required")
        for tr in self.trajectories:
            if len(tr) != len(self.epochs):
                raise CondenseError("trajectory length mismatch")

    @property
    def n_experts(self):
        return len(self.trajectories)

    @property
    def length(self):
        return len(self.epochs)

    def save(self, path):
        os.makedirs(path, exist_ok=True)
        manifest = {"interval": int(self.interval),
                    "epochs": [int(e) for e in self.epochs],
                    "seeds": [int(s) for s in self.seeds],
                    "source": self.source,
                    "spec": _spec_dict(self.spec),
                    "n_experts": self.n_experts}
        with open(os.path.join(path, "manifest.json"), "w") as f:
            json.dump(manifest, f, indent=1, sort_keys=True)
        for e, tr in enumerate(self.trajectories):
            arrays = {}
            for i, params in enumerate(tr):
                for k, v in params.items():
                    arrays["s%04d.%s" % (i, k)] = v
            np.savez(os.path.join(path, "expert_%03d.npz" % e), **arrays)

    @classmethod
    def load(cls, path):
        with open(os.path.join(path, "manifest.json")) as f:
            manifest = json.load(f)
        spec = ModelSpec(**manifest["spec"])
        trajectories = []
        for e in range(manifest["n_experts"]):
            with np.load(os.path.join(path, "expert_%03d.npz" % e)) as z:
                tr = [{} for _ in manifest["epochs"]]
                for key in z.files:
                    snap, name = key.split(".", 1)
                    tr[int(snap[1:])][name] = z[key]
            trajectories.append(tr)
        return cls(spec, manifest["interval"], manifest["epochs"],
                   trajectories, manifest["seeds"], manifest["source"])


def build_expert_buffer(graph, spec, n_experts, epochs, snapshot_every=1,
                        seed=0):
    """Train the backbone n_experts times, snapshotting along the way."""
    if n_experts < 1:
        raise CondenseError("need at least one expert")
    cfg = TrainConfig(epochs=epochs, snapshot_every=snapshot_every)
    trajectories, seeds, shared = [], [], None
    for e in range(n_experts):
        _, traj, _ = train(spec, graph, train_cfg=cfg, seed=seed + e)
        if shared is None:
            shared = traj.epochs
        elif traj.epochs != shared:
            raise CondenseError("experts disagree on snapshot epochs")
        trajectories.append(traj.snapshots)
        seeds.append(seed + e)
    return ExpertBuffer(spec, snapshot_every, shared, trajectories, seeds,
                        _graph_fingerprint(graph))


def _soft_ce(tape, logits, ys, m):
    # mean cross entropy against the softmax of learnable label logits
    p = tape.exp(tape.log_softmax(ys))
    return tape.mul(tape.sum(tape.mul(p, tape.log_softmax(logits))),
                    -1.0 / float(m))


def condense_tm(graph, buffer, config):
    """Fit synthetic features so short student runs reproduce expert moves.

    Per outer iteration: sample an expert and a start index t, unroll N
    student steps from the expert's parameters on the structure-free
    synthetic graph, and push the endpoint toward the expert's parameters
    M snapshots later. The window for t+M is fixed for sfgc and expands
    linearly over the run for geom.
    """
    cfg = config
    if cfg.method not in ("sfgc", "geom"):
        raise CondenseError("condense_tm expects a trajectory method")
    if cfg.budget is None:
        raise CondenseError("config.budget is required")
    spec = buffer.spec
    b = cfg.backbone
    if (spec.arch, spec.layers, spec.hidden) != (b.arch, b.layers, b.hidden):
        raise CondenseError("buffer spec does not match the config backbone")
    L = buffer.length
    M, N = cfg.expert_span, cfg.student_steps
    if M >= L:
        raise CondenseError("expert span exceeds the trajectory")
    cond0 = init_synthetic(graph, cfg.budget, cfg.init, cfg.seed)
    x_syn = cond0.features.copy()
    y_syn = cond0.labels
    m = x_syn.shape[0]
    c = int(graph.labels.max()) + 1
    soft = bool(cfg.soft_labels)
    y_logit = np.zeros((m, c))
    y_logit[np.arange(m), y_syn] = 1.0
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 11)))
    opt_x = AdamState(lr=cfg.lr_feat)
    opt_y = AdamState(lr=cfg.lr_label)
    keys = sorted(buffer.trajectories[0][0])
    losses, snaps = [], []
    snap_every = max(1, cfg.outer // max(1, cfg.snapshots))

    def emit():
        meta = {"method": cfg.method, "config": config_hash(cfg.to_meta()),
                "init": cfg.init}
        if soft:
            meta["soft_labels"] = np.round(y_logit, 6).tolist()
        return CondensedGraph(x_syn.copy(), y_syn, None, 0.0, meta)

    for it in range(cfg.outer):
        eid = int(rng.integers(buffer.n_experts))
        if cfg.window == "fixed":
            t = int(rng.integers(0, L - M))
        else:
            ub = M + int(np.floor((L - 1 - M) * it / max(1, cfg.outer - 1)))
            t = int(rng.integers(0, ub - M + 1))
        start = buffer.trajectories[eid][t]
        target = buffer.trajectories[eid][t + M]
        den = sum(float(((start[k] - target[k]) ** 2).sum()) for k in keys)
        tape = Tape()
        xs = tape.leaf(x_syn, requires_grad=True)
        ys = tape.leaf(y_logit, requires_grad=True) if soft else None
        theta = {k: tape.leaf(start[k], requires_grad=True) for k in keys}
        prop = {"kind": spec.arch, "n": m, "ahat": None, "x0": xs}
        for _ in range(N):
            logits = forward_tape(tape, spec, theta, prop)
            ce = _soft_ce(tape, logits, ys, m) if soft \
                else tape.cross_entropy(logits, y_syn)
            gs = tape.grad(ce, [theta[k] for k in keys])
            theta = {k: tape.sub(theta[k], tape.mul(g, cfg.lr_student))
                     for k, g in zip(keys, gs)}
        num = None
        for k in keys:
            diff = tape.sub(theta[k], tape.constant(target[k]))
            s = tape.sum(tape.mul(diff, diff))
            num = s if num is None else tape.add(num, s)
        loss = tape.mul(num, 1.0 / (den + 1e-12))
        if not np.isfinite(loss.value):
            raise CondenseError("trajectory loss diverged")
        wrt = [xs] + ([ys] if soft else [])
        gs = tape.grad(loss, wrt)
        x_syn, opt_x = adam_step({"x": x_syn}, {"x": gs[0].value}, opt_x)
        x_syn = x_syn["x"]
        if soft:
            y_logit, opt_y = adam_step({"y": y_logit}, {"y": gs[1].value},
                                       opt_y)
            y_logit = y_logit["y"]
        losses.append(float(loss.value))
        if (it + 1) % snap_every == 0 or it == cfg.outer - 1:
            snaps.append((it + 1, emit()))
    return CondenseResult(emit(), snaps, losses)
