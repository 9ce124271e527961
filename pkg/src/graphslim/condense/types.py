"""Condensed graph container with bundle persistence.

A condensed graph is a small synthetic training set: features X', labels
y', and (unless the method is structure-free) a symmetric weighted
adjacency A' with entries in [0,1] and a zero diagonal. The sparsification
threshold delta is carried around but never applied before evaluation.
"""

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from ..data import DataError, Graph, load_bundle, save_bundle
from ..models import ModelSpec


class CondenseError(ValueError):
    pass


def config_hash(config):
    """Stable short hash of a jsonable config mapping."""
    text = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


class CondensedGraph:
    def __init__(self, features, labels, adjacency=None, delta=0.0, meta=None):
        self.features = np.asarray(features, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.delta = float(delta)
        self.meta = dict(meta or {})
        m = self.features.shape[0]
        if self.labels.shape != (m,):
            raise CondenseError("labels do not align with features")
        if adjacency is None:
            self.adj = None
        else:
            a = np.asarray(adjacency, dtype=np.float64)
            if a.shape != (m, m):
                raise CondenseError("adjacency shape mismatch")
            if not np.allclose(a, a.T, atol=1e-12):
                raise CondenseError("adjacency must be symmetric")
            if np.any(np.diag(a) != 0.0):
                raise CondenseError("adjacency diagonal must be zero")
            if a.min() < 0.0 or a.max() > 1.0 + 1e-12:
                raise CondenseError("adjacency weights must lie in [0,1]")
            self.adj = 0.5 * (a + a.T)
        if not (0.0 <= self.delta < 1.0):
            raise CondenseError("delta must lie in [0,1)")

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def structure_free(self):
        return self.adj is None

    def adjacency(self):
        """Evaluation-time adjacency: delta applied, None when structure-free."""
        return None if self.adj is None else self.dense_adjacency(apply_delta=True)

    def dense_adjacency(self, apply_delta=False):
        if self.adj is None:
            return None
        a = self.adj.copy()
        if apply_delta and self.delta > 0.0:
            a[a < self.delta] = 0.0
        return a

    def to_graph(self, apply_delta=True):
        """A Graph whose nodes are all training nodes.

        Structure-free outputs become edgeless graphs; the caller decides
        whether training then uses the identity adjacency.
        """
        m = self.n
        a = self.dense_adjacency(apply_delta=apply_delta)
        if a is None:
            src = dst = np.zeros(0, dtype=np.int64)
            weight = np.zeros(0)
        else:
            iu, ju = np.triu_indices(m, k=1)
            keep = a[iu, ju] > 0.0
            src, dst, weight = iu[keep], ju[keep], a[iu, ju][keep]
        return Graph(self.features, self.labels, src, dst, weight,
                     np.ones(m, bool), np.zeros(m, bool), np.zeros(m, bool))

    def save(self, path):
        save_bundle(self.to_graph(apply_delta=False), path)
        meta = dict(self.meta)
        meta["delta"] = self.delta
        meta["structure_free"] = self.structure_free
        with open(os.path.join(path, "meta.json"), "w") as f:
            json.dump(meta, f, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path):
        meta_path = os.path.join(path, "meta.json")
        if not os.path.exists(meta_path):
            raise DataError("bundle is missing meta.json")
        with open(meta_path) as f:
            meta = json.load(f)
        g = load_bundle(path)
        if meta.pop("structure_free", False):
            adj = None
        else:
            adj = np.asarray(g.adjacency().todense(), dtype=np.float64)
        delta = meta.pop("delta", 0.0)
        return cls(g.features, g.labels, adj, delta, meta)


_METHODS = ("gcond", "gcondx", "doscond", "sfgc", "geom", "gcsntk")
_INITS = ("random-sample", "kcenter", "herding", "averaging")


@dataclass
class CondenseConfig:
    """Knobs shared by all condensers; methods read the subset they use.

    Method quirks are normalized here so downstream code never branches on
    them: doscond is one matching step per sampled initialization with
    joint feature/structure updates, gcondx drops the structure generator
    and the inner loop, sfgc/geom pin their window policy.
    """

    method: str = "gcond"
    budget: object = None            # per-class synthetic node counts
    init: str = "random-sample"
    backbone: ModelSpec = None
    outer: int = 40
    matching_steps: int = 10         # gradient matchings per sampled init
    inner_steps: int = 4             # tau model updates on S between matchings
    lr_feat: float = 0.01
    lr_struct: float = 0.001
    lr_label: float = 0.01
    lr_model: float = 0.01
    alternate: bool = True           # feature epochs alternate with structure epochs
    neighborhood_cap: int = 256
    struct_hidden: int = 128
    student_steps: int = 10          # N
    expert_span: int = 10            # M, in buffer snapshots
    lr_student: float = 0.1
    window: str = "fixed"
    soft_labels: bool = False
    epsilon: float = 1e-6            # kernel ridge
    depth: int = 2                   # kernel layers
    delta: float = 0.5
    snapshots: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.method not in _METHODS:
            raise CondenseError("unknown method %r" % self.method)
        if self.init not in _INITS:
            raise CondenseError("unknown init strategy %r" % self.init)
        if self.window not in ("fixed", "expanding"):
            raise CondenseError("window must be fixed or expanding")
        if self.backbone is None:
            self.backbone = ModelSpec(arch="gcn", layers=2, hidden=256,
                                      dropout=0.0)
        if self.backbone.arch not in ("gcn", "sgc"):
            raise CondenseError("condensation backbone must be gcn or sgc")
        if self.method == "doscond":
            self.matching_steps = 1
            self.inner_steps = 0
            self.alternate = False
        elif self.method == "gcondx":
            self.inner_steps = 0
        if self.method == "sfgc":
            self.window = "fixed"
        elif self.method == "geom":
            self.window = "expanding"
        if self.budget is not None:
            self.budget = np.asarray(self.budget, dtype=np.int64)
            if self.budget.ndim != 1 or np.any(self.budget < 1):
                raise CondenseError("budget must be a positive per-class vector")
        for name in ("outer", "matching_steps", "student_steps", "expert_span",
                     "inner_steps"):
            if getattr(self, name) < 0:
                raise CondenseError("%s must be nonnegative" % name)
        if self.epsilon <= 0.0:
            raise CondenseError("ridge epsilon must be positive")
        if not (0.0 <= self.delta < 1.0):
            raise CondenseError("delta must lie in [0,1)")

    def to_meta(self):
        """Jsonable summary used for hashing and bundle metadata."""
        d = {k: v for k, v in self.__dict__.items() if k != "backbone"}
        d["budget"] = None if self.budget is None else self.budget.tolist()
        b = self.backbone
        d["backbone"] = {"arch": b.arch, "layers": b.layers, "hidden": b.hidden,
                         "dropout": b.dropout, "activation": b.activation,
                         "k": b.k, "alpha": b.alpha}
        return d


@dataclass
class CondenseResult:
    """Final output plus the intermediate snapshots the harness picks from."""
    condensed: object
    snapshots: list = field(default_factory=list)   # (outer step, CondensedGraph)
    losses: list = field(default_factory=list)
