"""Command line front end.

Every subcommand takes --config (INI file; command line flags win),
--seed, and --out. Reports land under <out>/reports as JSON plus a CSV
table, graph artifacts under <out>/bundles, expert trajectories under
<out>/experts. Exit codes: 0 success, 1 bad configuration or usage,
2 runtime failure. GRAPHSLIM_WORKERS bounds the worker pool.
"""

import argparse
import configparser
import csv
import json
import os
import sys

import numpy as np

from .coarsen import COARSENERS
from .condense import (CondenseConfig, CondensedGraph, ExpertBuffer,
                       build_expert_buffer, condense_gm, condense_krr,
                       condense_tm)
from .coreset import (Selection, coreset_graph, select_centrality,
                      select_herding, select_kcenter, select_random,
                      trained_embedding, two_hop_embedding)
from .data import (DataError, ReductionConfig, SbmParams, convert_content,
                   convert_planetoid, load_bundle, load_dataset, save_bundle,
                   sbm_generate)
from .harness import (class_budget, evaluate_protocol, nas_search,
                      robustness_pipeline, select_snapshot,
                      transferability_matrix)
from .metrics import METRIC_NAMES, property_report, property_vector
from .models import ModelSpec, TrainConfig
from .robustness import CorruptionSpec


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # unknown flags and malformed values are configuration errors
    def error(self, message):
        raise ConfigError("%s\n%s" % (message, self.format_usage()))


# ------------------------------------------------------------ config file

_BOOLS = {"1": True, "true": True, "yes": True, "on": True,
          "0": False, "false": False, "no": False, "off": False}


def _bool(raw):
    return _BOOLS[str(raw).strip().lower()]


def _ints(raw):
    return tuple(int(x) for x in str(raw).split(","))


def _words(raw):
    return tuple(w.strip() for w in str(raw).split(",") if w.strip())


def read_config(path):
    cp = configparser.ConfigParser()
    if path:
        if not os.path.exists(path):
            raise ConfigError("config file %r does not exist" % path)
        try:
            cp.read(path)
        except configparser.Error as e:
            raise ConfigError("unreadable config: %s" % e) from None
    return cp


def cfg_get(cp, section, key, default=None, cast=str):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key)
    try:
        return cast(raw)
    except (ValueError, KeyError):
        raise ConfigError("bad value %r for [%s] %s"
                          % (raw, section, key)) from None


def _pick(flag_value, cp, section, key, default=None, cast=str):
    if flag_value is not None:
        return flag_value
    return cfg_get(cp, section, key, default, cast)


# -------------------------------------------------------------- loading

def _load_graph(args, cp):
    name = _pick(getattr(args, "dataset", None), cp, "dataset", "name")
    if name is None:
        raise ConfigError("no dataset (use --dataset or [dataset] name)")
    if name == "sbm":
        params = SbmParams(
            block_sizes=cfg_get(cp, "sbm", "block_sizes", (60, 60, 60),
                                _ints),
            p_intra=cfg_get(cp, "sbm", "p_intra", 0.1, float),
            p_inter=cfg_get(cp, "sbm", "p_inter", 0.01, float),
            dim=cfg_get(cp, "sbm", "dim", 16, int),
            separation=cfg_get(cp, "sbm", "separation", 1.0, float),
            noise=cfg_get(cp, "sbm", "noise", 1.0, float),
            seed=cfg_get(cp, "sbm", "seed", 0, int))
        return name, sbm_generate(params)
    try:
        return name, load_dataset(name, cfg_get(cp, "dataset", "root"))
    except DataError as e:
        raise ConfigError(str(e)) from None


def _load_bundle_arg(args, cp):
    path = _pick(getattr(args, "bundle", None), cp, "evaluate", "bundle")
    if path is None:
        raise ConfigError("no bundle (use --bundle or [evaluate] bundle)")
    if not os.path.isdir(path):
        raise ConfigError("bundle directory %r does not exist" % path)
    if os.path.exists(os.path.join(path, "meta.json")):
        return CondensedGraph.load(path)
    return load_bundle(path)


def _reduction(args, cp):
    rate = _pick(getattr(args, "rate", None), cp, "reduce", "rate",
                 cast=float)
    ipc = _pick(getattr(args, "ipc", None), cp, "reduce", "ipc", cast=int)
    if rate is None and ipc is None:
        raise ConfigError("no reduction size (use --rate or --ipc)")
    setting = cfg_get(cp, "reduce", "setting", "transductive")
    try:
        return ReductionConfig(rate=rate, ipc=ipc, setting=setting)
    except DataError as e:
        raise ConfigError(str(e)) from None


def _protocol(args, cp):
    spec = ModelSpec(arch="gcn", layers=2,
                     hidden=cfg_get(cp, "protocol", "hidden", 256, int),
                     dropout=cfg_get(cp, "protocol", "dropout", 0.5, float))
    cfg = TrainConfig(lr=cfg_get(cp, "protocol", "lr", 0.01, float),
                      weight_decay=cfg_get(cp, "protocol", "weight_decay",
                                           5e-4, float),
                      epochs=cfg_get(cp, "protocol", "epochs", 300, int))
    n_runs = _pick(getattr(args, "runs", None), cp, "protocol", "n_runs",
                   10, int)
    return spec, cfg, n_runs


def _backbone(cp):
    return ModelSpec(
        arch=cfg_get(cp, "backbone", "arch", "gcn"),
        layers=cfg_get(cp, "backbone", "layers", 2, int),
        hidden=cfg_get(cp, "backbone", "hidden", 256, int),
        dropout=cfg_get(cp, "backbone", "dropout", 0.0, float),
        activation=cfg_get(cp, "backbone", "activation", "relu"))


# -------------------------------------------------------------- writing

def _ensure_layout(out):
    for sub in ("bundles", "reports", "experts"):
        os.makedirs(os.path.join(out, sub), exist_ok=True)


def _write_report(out, stem, payload, rows=None, fields=None):
    path = os.path.join(out, "reports", stem + ".json")
    with open(path, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
        f.write("\n")
    if rows is not None:
        with open(os.path.join(out, "reports", stem + ".csv"), "w",
                  newline="") as f:
            w = csv.DictWriter(f, fieldnames=fields)
            w.writeheader()
            for row in rows:
                w.writerow({k: row.get(k) for k in fields})
    print(path)


# ------------------------------------------------------------- commands

def cmd_convert(args, cp, out, seed):
    if args.planetoid:
        if not args.name:
            raise ConfigError("convert --planetoid needs --name")
        graph = convert_planetoid(args.planetoid, args.name)
        name = args.name
    elif args.content and args.cites:
        graph = convert_content(args.content, args.cites, seed=seed)
        name = args.name or "converted"
    else:
        raise ConfigError("convert needs --planetoid or --content/--cites")
    dest = os.path.join(out, "bundles", name)
    save_bundle(graph, dest)
    _write_report(out, "convert_%s" % name,
                  {"bundle": dest, "nodes": graph.n,
                   "edges": graph.num_edges,
                   "classes": graph.num_classes,
                   "train": int(graph.train_mask.sum()),
                   "val": int(graph.val_mask.sum()),
                   "test": int(graph.test_mask.sum())})
    return 0


_SELECTORS = ("random", "herding", "kcenter", "degree", "pagerank")


def cmd_reduce(args, cp, out, seed):
    name, graph = _load_graph(args, cp)
    method = _pick(args.method, cp, "reduce", "method", "random")
    budget = class_budget(graph, _reduction(args, cp))
    tag = "%s_%s" % (method, name)
    dest = os.path.join(out, "bundles", tag)
    info = {"method": method, "dataset": name, "seed": seed,
            "budget": budget.tolist(), "bundle": dest}
    if method in _SELECTORS:
        if method in ("herding", "kcenter"):
            emb_kind = cfg_get(cp, "reduce", "embedding", "two_hop")
            if emb_kind == "trained":
                emb = trained_embedding(graph, seed=seed)
            elif emb_kind == "two_hop":
                emb = two_hop_embedding(graph)
            else:
                raise ConfigError("unknown embedding %r" % emb_kind)
            fn = select_herding if method == "herding" else select_kcenter
            sel = fn(graph, budget, embedding=emb, seed=seed)
        elif method == "random":
            sel = select_random(graph, budget, seed=seed)
        else:
            sel = select_centrality(graph, budget, kind=method)
        save_bundle(coreset_graph(graph, sel), dest)
        with open(os.path.join(dest, "selection.json"), "w") as f:
            f.write(sel.to_json())
        info["selected"] = sel.ids.tolist()
    elif method in COARSENERS:
        cond = COARSENERS[method](graph, budget, seed=seed)
        cond.save(dest)
    else:
        raise ConfigError("unknown reduction method %r" % method)
    _write_report(out, "reduce_%s" % tag, info)
    return 0


def _expert_buffer(graph, name, cp, out, backbone, seed):
    cache = os.path.join(out, "experts", "%s_%s%d_h%d"
                         % (name, backbone.arch, backbone.layers,
                            backbone.hidden))
    if os.path.exists(os.path.join(cache, "manifest.json")):
        return ExpertBuffer.load(cache)
    buf = build_expert_buffer(
        graph, backbone,
        n_experts=cfg_get(cp, "condense", "experts", 3, int),
        epochs=cfg_get(cp, "condense", "expert_epochs", 120, int),
        snapshot_every=cfg_get(cp, "condense", "expert_interval", 10, int),
        seed=seed)
    buf.save(cache)
    return buf


def cmd_condense(args, cp, out, seed):
    name, graph = _load_graph(args, cp)
    method = _pick(args.method, cp, "condense", "method", "gcond")
    budget = class_budget(graph, _reduction(args, cp))
    backbone = _backbone(cp)
    overrides = {}
    for key, cast in (("outer", int), ("matching_steps", int),
                      ("inner_steps", int), ("student_steps", int),
                      ("expert_span", int), ("lr_feat", float),
                      ("lr_struct", float), ("lr_student", float),
                      ("epsilon", float), ("depth", int), ("delta", float),
                      ("snapshots", int), ("init", str),
                      ("neighborhood_cap", int), ("soft_labels", _bool)):
        val = cfg_get(cp, "condense", key, None, cast)
        if val is not None:
            overrides[key] = val
    try:
        ccfg = CondenseConfig(method=method, budget=budget,
                              backbone=backbone, seed=seed, **overrides)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if method in ("gcond", "gcondx", "doscond"):
        res = condense_gm(graph, ccfg)
    elif method in ("sfgc", "geom"):
        buf = _expert_buffer(graph, name, cp, out, backbone, seed)
        res = condense_tm(graph, buf, ccfg)
    else:
        res = condense_krr(graph, budget, eps=ccfg.epsilon, config=ccfg)
    chosen, step = res.condensed, None
    if args.select_snapshot:
        spec, cfg, _ = _protocol(args, cp)
        choice = select_snapshot(res, graph, spec=spec, train_cfg=cfg,
                                 seed=seed)
        chosen, step = choice.condensed, choice.step
    tag = "%s_%s" % (method, name)
    dest = os.path.join(out, "bundles", tag)
    chosen.save(dest)
    _write_report(out, "condense_%s" % tag,
                  {"method": method, "dataset": name, "seed": seed,
                   "budget": budget.tolist(), "bundle": dest,
                   "losses": [float(v) for v in res.losses],
                   "snapshot_steps": [int(s) for s, _ in res.snapshots],
                   "selected_step": step})
    return 0


def cmd_evaluate(args, cp, out, seed):
    name, graph = _load_graph(args, cp)
    reduced = _load_bundle_arg(args, cp)
    spec, cfg, n_runs = _protocol(args, cp)
    rep = evaluate_protocol(reduced, graph, n_runs=n_runs, spec=spec,
                            train_cfg=cfg, seed=seed,
                            metadata={"dataset": name,
                                      "bundle": args.bundle})
    rows = [{"run": i, "test_accuracy": a, "val_accuracy": v}
            for i, (a, v) in enumerate(zip(rep.accuracies,
                                           rep.val_accuracies))]
    _write_report(out, "evaluate_%s" % os.path.basename(args.bundle.rstrip("/")),
                  rep.to_dict(), rows,
                  ("run", "test_accuracy", "val_accuracy"))
    return 0


def cmd_transfer(args, cp, out, seed):
    name, graph = _load_graph(args, cp)
    reduced = _load_bundle_arg(args, cp)
    _, cfg, _ = _protocol(args, cp)
    archs = cfg_get(cp, "transfer", "archs",
                    ("gcn", "sgc", "appnp", "cheby", "sage"), _words)
    specs = [ModelSpec(arch=a, layers=2, hidden=256, dropout=0.5)
             for a in archs]
    result = transferability_matrix(reduced, graph, specs=specs,
                                    train_cfg=cfg, seed=seed)
    fields = ("arch", "reduced_val", "reduced_test", "whole_val",
              "whole_test", "relative")
    _write_report(out, "transfer_%s" % name, result.to_dict(), result.rows,
                  fields)
    return 0


def cmd_nas(args, cp, out, seed):
    name, graph = _load_graph(args, cp)
    reduced = _load_bundle_arg(args, cp)
    _, cfg, _ = _protocol(args, cp)
    reduced_space = args.reduced_space or cfg_get(cp, "nas", "reduced_space",
                                                  False, _bool)
    result = nas_search(reduced, graph, reduced_space=reduced_space,
                        train_cfg=cfg, seed=seed)
    rows = [dict(a, cond_val=cv, whole_val=wv, whole_test=wt)
            for a, cv, wv, wt in zip(result.archs, result.cond_val,
                                     result.whole_val, result.whole_test)]
    _write_report(out, "nas_%s" % name, result.to_dict(), rows,
                  ("k", "alpha", "hidden", "activation", "cond_val",
                   "whole_val", "whole_test"))
    return 0


def _method_callable(name, cp, seed):
    if name == "whole":
        return lambda g, s: g
    if name in _SELECTORS or name in COARSENERS:
        def reduce_fn(g, s, _m=name):
            budget = class_budget(g, _reduction_from_cp(cp))
            if _m == "random":
                return coreset_graph(g, select_random(g, budget, seed=s))
            if _m in ("herding", "kcenter"):
                emb = two_hop_embedding(g)
                fn = select_herding if _m == "herding" else select_kcenter
                return coreset_graph(g, fn(g, budget, embedding=emb, seed=s))
            if _m in ("degree", "pagerank"):
                return coreset_graph(g, select_centrality(g, budget, kind=_m))
            return COARSENERS[_m](g, budget, seed=s)
        return reduce_fn
    if name in ("gcond", "gcondx", "doscond", "gcsntk"):
        def condense_fn(g, s, _m=name):
            budget = class_budget(g, _reduction_from_cp(cp))
            overrides = {}
            for key, cast in (("outer", int), ("matching_steps", int),
                              ("inner_steps", int), ("lr_feat", float),
                              ("lr_struct", float), ("epsilon", float),
                              ("delta", float)):
                val = cfg_get(cp, "condense", key, None, cast)
                if val is not None:
                    overrides[key] = val
            ccfg = CondenseConfig(method=_m, budget=budget,
                                  backbone=_backbone(cp), seed=s,
                                  **overrides)
            if _m == "gcsntk":
                return condense_krr(g, budget, eps=ccfg.epsilon, config=ccfg)
            return condense_gm(g, ccfg)
        return condense_fn
    raise ConfigError("unknown robustness method %r" % name)


def _reduction_from_cp(cp):
    rate = cfg_get(cp, "reduce", "rate", None, float)
    ipc = cfg_get(cp, "reduce", "ipc", None, int)
    if rate is None and ipc is None:
        raise ConfigError("robustness methods need [reduce] rate or ipc")
    try:
        return ReductionConfig(rate=rate, ipc=ipc,
                               setting=cfg_get(cp, "reduce", "setting",
                                               "transductive"))
    except DataError as e:
        raise ConfigError(str(e)) from None


def cmd_robustness(args, cp, out, seed):
    name, graph = _load_graph(args, cp)
    cspec = CorruptionSpec(
        kind=_pick(args.kind, cp, "corruption", "kind", "structure"),
        rate=_pick(args.rate, cp, "corruption", "rate", 0.5, float),
        scenario=_pick(args.scenario, cp, "corruption", "scenario",
                       "poisoning+evasion"),
        repeats=cfg_get(cp, "corruption", "repeats", 3, int),
        seed=seed)
    names = _pick(args.methods, cp, "robustness", "methods", ("whole",),
                  _words)
    if isinstance(names, str):
        names = _words(names)
    methods = {m: _method_callable(m, cp, seed) for m in names}
    spec, cfg, n_runs = _protocol(args, cp)
    rows = robustness_pipeline(graph, methods, cspec, n_runs=n_runs,
                               spec=spec, train_cfg=cfg, seed=seed)
    _write_report(out, "robustness_%s" % name, {"dataset": name,
                                                "rows": rows},
                  rows, ("method", "kind", "rate", "scenario", "clean",
                         "corrupted", "drop"))
    return 0


def cmd_properties(args, cp, out, seed):
    name, graph = _load_graph(args, cp)
    delta = cfg_get(cp, "properties", "delta", 0.0, float)
    if args.bundle:
        pairs = []
        for b in args.bundle:
            if not os.path.isdir(b):
                raise ConfigError("bundle directory %r does not exist" % b)
            if os.path.exists(os.path.join(b, "meta.json")):
                pairs.append((graph, CondensedGraph.load(b)))
            else:
                pairs.append((graph, load_bundle(b)))
        report = property_report(pairs, delta)
        rows = []
        for b, row in zip(args.bundle, report["rows"]):
            flat = {"bundle": b}
            for side in ("original", "condensed"):
                for m in METRIC_NAMES:
                    flat["%s_%s" % (side, m)] = row[side][m]
            rows.append(flat)
        fields = ["bundle"] + ["%s_%s" % (s, m)
                               for s in ("original", "condensed")
                               for m in METRIC_NAMES]
        _write_report(out, "properties_%s" % name, report, rows, fields)
    else:
        vec = property_vector(graph, 0.0)
        _write_report(out, "properties_%s" % name, {"dataset": name,
                                                    "properties": vec},
                      [dict(vec, dataset=name)],
                      ["dataset"] + list(METRIC_NAMES))
    return 0


def cmd_report(args, cp, out, seed):
    reports = os.path.join(out, "reports")
    rows = []
    names = sorted(os.listdir(reports)) if os.path.isdir(reports) else []
    for fname in names:
        if not fname.endswith(".json") or fname == "summary.json":
            continue
        with open(os.path.join(reports, fname)) as f:
            payload = json.load(f)
        row = {"report": fname[:-5]}
        for key, val in sorted(payload.items()):
            if isinstance(val, (int, float, str, bool)) or val is None:
                row[key] = val
        for key in ("mean", "std", "top1_test", "accuracy_pearson",
                    "rank_pearson"):
            if key in payload:
                row[key] = payload[key]
        rows.append(row)
    fields = sorted({k for row in rows for k in row},
                    key=lambda k: (k != "report", k))
    summary = {"reports": rows}
    _write_report(out, "summary", summary, rows, fields)
    return 0


COMMANDS = {"convert": cmd_convert, "reduce": cmd_reduce,
            "condense": cmd_condense, "evaluate": cmd_evaluate,
            "transfer": cmd_transfer, "nas": cmd_nas,
            "robustness": cmd_robustness, "properties": cmd_properties,
            "report": cmd_report}


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default="run")
    p = _Parser(prog="graphslim",
                description="graph reduction toolkit and benchmark")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("convert", parents=[common])
    c.add_argument("--planetoid")
    c.add_argument("--content")
    c.add_argument("--cites")
    c.add_argument("--name")

    r = sub.add_parser("reduce", parents=[common])
    r.add_argument("--dataset")
    r.add_argument("--method")
    r.add_argument("--rate", type=float)
    r.add_argument("--ipc", type=int)

    d = sub.add_parser("condense", parents=[common])
    d.add_argument("--dataset")
    d.add_argument("--method")
    d.add_argument("--rate", type=float)
    d.add_argument("--ipc", type=int)
    d.add_argument("--select-snapshot", action="store_true")

    e = sub.add_parser("evaluate", parents=[common])
    e.add_argument("--dataset")
    e.add_argument("--bundle")
    e.add_argument("--runs", type=int)

    t = sub.add_parser("transfer", parents=[common])
    t.add_argument("--dataset")
    t.add_argument("--bundle")

    n = sub.add_parser("nas", parents=[common])
    n.add_argument("--dataset")
    n.add_argument("--bundle")
    n.add_argument("--reduced-space", action="store_true")

    b = sub.add_parser("robustness", parents=[common])
    b.add_argument("--dataset")
    b.add_argument("--kind")
    b.add_argument("--rate", type=float)
    b.add_argument("--scenario")
    b.add_argument("--methods")

    q = sub.add_parser("properties", parents=[common])
    q.add_argument("--dataset")
    q.add_argument("--bundle", action="append")

    sub.add_parser("report", parents=[common])
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        cp = read_config(args.config)
        out = args.out
        seed = args.seed if args.seed is not None else cfg_get(
            cp, "protocol", "seed", 0, int)
        _ensure_layout(out)
        return COMMANDS[args.command](args, cp, out, seed)
    except ConfigError as e:
        print(str(e), file=sys.stderr)
        return 1
    except SystemExit:
        raise
    except Exception as e:
        print("error: %s" % e, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
