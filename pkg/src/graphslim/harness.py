"""One evaluation protocol for every reduction method, plus the studies
built on top of it: snapshot selection, cross-architecture transfer,
architecture search, and the corruption pipeline.

The protocol trains a fixed 2-layer GCN (256 hidden, dropout 0.5) on the
reduced data for 300 epochs and always validates and tests on the original
graph. Structure-free outputs train against the identity adjacency.
Independent jobs (runs, grid cells, architectures) go through a worker
pool bounded by GRAPHSLIM_WORKERS.
"""

import os
import resource
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import rankdata

from .condense.types import CondensedGraph, CondenseResult
from .data import Graph
from .engine import EngineError
from .metrics import pearson
from .models import (ACTIVATIONS, ModelError, ModelSpec, TrainConfig,
                     evaluate, train)
from .robustness import apply_scenario, corrupt


class HarnessError(ValueError):
    pass


PROTOCOL_SPEC = ModelSpec(arch="gcn", layers=2, hidden=256, dropout=0.5)
PROTOCOL_TRAIN = TrainConfig(lr=0.01, weight_decay=5e-4, epochs=300)


def worker_count():
    raw = os.environ.get("GRAPHSLIM_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise HarnessError("GRAPHSLIM_WORKERS must be an integer, got %r"
                           % raw) from None


def parallel_map(fn, items):
    """Order-preserving map over immutable job tuples."""
    items = list(items)
    w = min(worker_count(), len(items))
    if w <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=w) as pool:
        return list(pool.map(fn, items))


def class_budget(graph, reduction):
    """Per-class node counts for a rate or ipc reduction setting.

    Rates count against all nodes transductively and against training
    nodes inductively; the total is split across classes proportionally
    to training-label frequency with at least one node per class.
    """
    counts = np.bincount(graph.labels[graph.train_mask],
                         minlength=graph.num_classes)
    if np.any(counts == 0):
        raise HarnessError("a class has no training nodes")
    if reduction.ipc is not None:
        return np.full(graph.num_classes, reduction.ipc, dtype=np.int64)
    base = graph.n if reduction.setting == "transductive" else counts.sum()
    target = max(graph.num_classes, int(round(reduction.rate * base)))
    quota = target * counts / counts.sum()
    budget = np.maximum(1, np.floor(quota).astype(np.int64))
    # largest remainders get the leftover seats
    order = np.argsort(-(quota - np.floor(quota)))
    short = target - budget.sum()
    for c in order[:max(0, short)]:
        budget[c] += 1
    return budget


# --------------------------------------------------------------- protocol

def _resolve_reduced(reduced):
    """(training graph, adjacency override, structure_free flag)."""
    if isinstance(reduced, CondenseResult):
        reduced = reduced.condensed
    if isinstance(reduced, CondensedGraph):
        override = "identity" if reduced.structure_free else None
        return reduced.to_graph(), override, reduced.structure_free
    if isinstance(reduced, Graph):
        return reduced, None, False
    raise HarnessError("expected a Graph, CondensedGraph or CondenseResult")


def _protocol_run(job):
    """One training on the reduced data, measured on the original graph."""
    spec, train_graph, override, cfg, seed, original = job
    try:
        params, _, best_val = train(spec, train_graph,
                                    adjacency_override=override,
                                    train_cfg=cfg, seed=seed,
                                    val_graph=original)
    except (ModelError, EngineError) as e:
        return None, str(e)
    return evaluate(spec, params, original, original.test_mask), best_val


@dataclass
class EvalReport:
    accuracies: list
    val_accuracies: list
    mean: float
    std: float
    failures: list
    metadata: dict
    resources: dict

    def to_dict(self):
        return {"accuracies": self.accuracies,
                "val_accuracies": self.val_accuracies,
                "mean": self.mean, "std": self.std,
                "failures": self.failures, "metadata": self.metadata,
                "resources": self.resources}


def evaluate_protocol(reduced, original, n_runs=10, spec=None, train_cfg=None,
                      seed=0, metadata=None):
    """Protocol accuracy of reduced data, mean and sample stddev over
    n_runs seeds. Failed runs are excluded from the mean and flagged."""
    t_start = time.perf_counter()
    spec = spec or PROTOCOL_SPEC
    cfg = train_cfg or PROTOCOL_TRAIN
    train_graph, override, sfree = _resolve_reduced(reduced)
    if not train_graph.train_mask.any():
        raise HarnessError("reduced data has no training nodes")
    prep = time.perf_counter() - t_start
    jobs = [(spec, train_graph, override, cfg, seed + r, original)
            for r in range(n_runs)]
    accs, vals, failures = [], [], []
    for r, (acc, val) in enumerate(parallel_map(_protocol_run, jobs)):
        if acc is None:
            failures.append("run %d: %s" % (r, val))
        else:
            accs.append(float(acc))
            vals.append(float(val))
    total = time.perf_counter() - t_start
    meta = {"n_runs": n_runs, "seed": seed, "structure_free": sfree,
            "train_nodes": int(train_graph.train_mask.sum()),
            "arch": spec.arch, "hidden": spec.hidden, "epochs": cfg.epochs}
    meta.update(metadata or {})
    return EvalReport(
        accuracies=accs, val_accuracies=vals,
        mean=float(np.mean(accs)) if accs else float("nan"),
        std=float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0,
        failures=failures, metadata=meta,
        resources={"preprocess_s": prep, "total_s": total,
                   "per_epoch_s": (total - prep) / max(1, n_runs * cfg.epochs),
                   "peak_rss_kb": resource.getrusage(
                       resource.RUSAGE_SELF).ru_maxrss})


@dataclass
class SnapshotChoice:
    condensed: object
    step: int
    index: int
    val_accs: list


def select_snapshot(run, original, spec=None, train_cfg=None, seed=0):
    """Pick the intermediate snapshot with the best single-run validation
    accuracy; ties go to the later snapshot."""
    snaps = run.snapshots if isinstance(run, CondenseResult) else list(run)
    if not snaps:
        raise HarnessError("no snapshots to select from")
    items = [s if isinstance(s, tuple) else (i + 1, s)
             for i, s in enumerate(snaps)]
    vals = []
    for _, cg in items:
        rep = evaluate_protocol(cg, original, n_runs=1, spec=spec,
                                train_cfg=train_cfg, seed=seed)
        vals.append(rep.val_accuracies[0] if rep.val_accuracies
                    else float("-inf"))
    best = max(range(len(vals)), key=lambda i: (vals[i], i))
    return SnapshotChoice(condensed=items[best][1], step=items[best][0],
                          index=best, val_accs=vals)


# ------------------------------------------------- transfer across models

DEFAULT_TRANSFER_SPECS = tuple(
    ModelSpec(arch=a, layers=2, hidden=256, dropout=0.5)
    for a in ("gcn", "sgc", "appnp", "cheby", "sage"))

DEFAULT_HYPER_GRID = {"hidden": (64, 256), "lr": (0.01, 0.001),
                      "weight_decay": (0.0, 5e-4), "dropout": (0.0, 0.5)}


def _grid_cells(spec, grid, base_cfg):
    cells = []
    for h in grid.get("hidden", (spec.hidden,)):
        for lr in grid.get("lr", (base_cfg.lr,)):
            for wd in grid.get("weight_decay", (base_cfg.weight_decay,)):
                for dr in grid.get("dropout", (spec.dropout,)):
                    cells.append((replace(spec, hidden=int(h), dropout=dr),
                                  replace(base_cfg, lr=lr, weight_decay=wd)))
    return cells


@dataclass
class TransferResult:
    rows: list
    failures: list = field(default_factory=list)

    def to_dict(self):
        return {"rows": self.rows, "failures": self.failures}


def transferability_matrix(reduced, original, specs=None, hyper_grid=None,
                           train_cfg=None, seed=0):
    """Grid-search each architecture on the reduced data and on the whole
    training graph; report test accuracy of the validation-best cell and
    its ratio to the whole-graph result."""
    specs = tuple(specs) if specs else DEFAULT_TRANSFER_SPECS
    grid = hyper_grid or DEFAULT_HYPER_GRID
    base_cfg = train_cfg or PROTOCOL_TRAIN
    if not grid or not specs:
        raise HarnessError("empty grid or model list")
    red_graph, override, _ = _resolve_reduced(reduced)
    substrates = (("reduced", red_graph, override), ("whole", original, None))
    rows, failures = [], []
    for spec in specs:
        cells = _grid_cells(spec, grid, base_cfg)
        picked = {}
        for name, graph, ovr in substrates:
            jobs = [(cs, graph, ovr, cc, seed, original) for cs, cc in cells]
            best = (float("-inf"), None, None)
            for (cs, cc), (acc, val) in zip(cells,
                                            parallel_map(_protocol_run, jobs)):
                if acc is None:
                    failures.append("%s/%s: %s" % (spec.arch, name, val))
                    continue
                if val >= best[0]:
                    best = (val, acc, {"hidden": cs.hidden,
                                       "dropout": cs.dropout, "lr": cc.lr,
                                       "weight_decay": cc.weight_decay})
            if best[1] is None:
                raise HarnessError("every %s cell failed on %s substrate"
                                   % (spec.arch, name))
            picked[name] = best
        rows.append({"arch": spec.arch,
                     "reduced_val": picked["reduced"][0],
                     "reduced_test": picked["reduced"][1],
                     "reduced_choice": picked["reduced"][2],
                     "whole_val": picked["whole"][0],
                     "whole_test": picked["whole"][1],
                     "whole_choice": picked["whole"][2],
                     "relative": picked["reduced"][1] / picked["whole"][1]})
    return TransferResult(rows=rows, failures=failures)


# ------------------------------------------------------ architecture search

def nas_space(reduced=False):
    """APPNP search space: 480 architectures, or 24 under the desk-scale
    flag."""
    if reduced:
        ks, alphas, hiddens, acts = ((2, 10), (0.1, 0.2), (16, 64, 256),
                                     ("relu", "tanh"))
    else:
        ks, alphas, hiddens, acts = ((2, 4, 6, 8, 10), (0.1, 0.2),
                                     (16, 32, 64, 128, 256, 512), ACTIVATIONS)
    return [ModelSpec(arch="appnp", layers=2, hidden=h, dropout=0.5,
                      activation=act, k=k, alpha=a)
            for k in ks for a in alphas for h in hiddens for act in acts]


def nas_correlations(cond_val, whole_val):
    """(accuracy Pearson, rank Pearson) between two validation vectors."""
    acc = pearson(cond_val, whole_val)
    rank = pearson(rankdata(cond_val), rankdata(whole_val))
    return acc, rank


@dataclass
class NasResult:
    archs: list
    cond_val: list
    cond_test: list
    whole_val: list
    whole_test: list
    top1_test: float
    accuracy_pearson: float
    rank_pearson: float

    def to_dict(self):
        return {"archs": self.archs, "cond_val": self.cond_val,
                "cond_test": self.cond_test, "whole_val": self.whole_val,
                "whole_test": self.whole_test, "top1_test": self.top1_test,
                "accuracy_pearson": self.accuracy_pearson,
                "rank_pearson": self.rank_pearson}


def nas_search(reduced, original, space=None, reduced_space=False,
               train_cfg=None, seed=0):
    """Train every architecture once per substrate; report the whole-graph
    test accuracy of the best-by-condensed-validation architecture and how
    well the condensed substrate preserves the architecture ranking."""
    space = list(space) if space is not None else nas_space(reduced_space)
    if not space:
        raise HarnessError("empty architecture space")
    cfg = train_cfg or PROTOCOL_TRAIN
    red_graph, override, _ = _resolve_reduced(reduced)
    out = {}
    for name, graph, ovr in (("cond", red_graph, override),
                             ("whole", original, None)):
        jobs = [(spec, graph, ovr, cfg, seed, original) for spec in space]
        vals, tests = [], []
        for spec, (acc, val) in zip(space, parallel_map(_protocol_run, jobs)):
            if acc is None:
                raise HarnessError("architecture %s failed on %s: %s"
                                   % (spec, name, val))
            vals.append(val)
            tests.append(acc)
        out[name] = (vals, tests)
    cond_val, cond_test = out["cond"]
    whole_val, whole_test = out["whole"]
    acc_r, rank_r = nas_correlations(cond_val, whole_val)
    top = int(np.argmax(cond_val))
    archs = [{"k": s.k, "alpha": s.alpha, "hidden": s.hidden,
              "activation": s.activation} for s in space]
    return NasResult(archs=archs, cond_val=cond_val, cond_test=cond_test,
                     whole_val=whole_val, whole_test=whole_test,
                     top1_test=whole_test[top], accuracy_pearson=acc_r,
                     rank_pearson=rank_r)


# --------------------------------------------------- corruption pipeline

def robustness_pipeline(original, methods, corruptions, clean=None,
                        n_runs=10, spec=None, train_cfg=None, seed=0,
                        surrogate=None):
    """Corrupt, reduce, evaluate; average over repeats.

    methods maps a name to callable(graph, seed) -> reduced data (use an
    identity callable for whole-graph training). clean maps method names
    to clean-baseline mean accuracies; missing entries are computed here.
    perf drop = (clean - corrupted) / clean.
    """
    if hasattr(corruptions, "kind"):
        corruptions = [corruptions]
    if not corruptions or not methods:
        raise HarnessError("need at least one method and one corruption")
    clean = dict(clean or {})
    for name, fn in methods.items():
        if name not in clean:
            rep = evaluate_protocol(fn(original, seed), original,
                                    n_runs=n_runs, spec=spec,
                                    train_cfg=train_cfg, seed=seed)
            clean[name] = rep.mean
    rows = []
    for cspec in corruptions:
        per_method = {name: [] for name in methods}
        for r in range(cspec.repeats):
            corrupted = corrupt(original, cspec, repeat=r,
                                surrogate=surrogate)
            train_in, infer_in = apply_scenario(original, corrupted,
                                                cspec.scenario)
            for name, fn in methods.items():
                red = fn(train_in, seed + r)
                rep = evaluate_protocol(red, infer_in, n_runs=n_runs,
                                        spec=spec, train_cfg=train_cfg,
                                        seed=seed)
                per_method[name].append(rep.mean)
        for name in methods:
            corr = float(np.mean(per_method[name]))
            rows.append({"method": name, "kind": cspec.kind,
                         "rate": cspec.rate, "scenario": cspec.scenario,
                         "clean": float(clean[name]), "corrupted": corr,
                         "per_repeat": per_method[name],
                         "drop": (clean[name] - corr) / clean[name]})
    return rows
