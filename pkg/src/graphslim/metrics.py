"""Graph property metrics and the original-vs-condensed preservation report."""

import numpy as np
import scipy.sparse as sp

from .data import Graph, normalize_adjacency


class MetricError(ValueError):
    pass


def _adjacency_of(obj):
    if isinstance(obj, Graph):
        return obj.adjacency()
    return obj.adjacency()


def _edge_weights(adj):
    """Upper-triangle weights of a symmetric adjacency, one per pair."""
    if sp.issparse(adj):
        coo = sp.triu(adj, k=1).tocoo()
        return coo.row, coo.col, coo.data
    a = np.asarray(adj)
    r, c = np.nonzero(np.triu(a, k=1))
    return r, c, a[r, c]


def _qualifying(w, delta):
    return w > 0 if delta <= 0 else w >= delta


def density(graph, delta=0.0):
    adj = _adjacency_of(graph)
    n = adj.shape[0]
    if n < 2:
        raise MetricError("density needs n >= 2")
    _, _, w = _edge_weights(adj)
    m = int(np.count_nonzero(_qualifying(w, delta)))
    return m / (n * (n - 1) / 2.0)


def max_laplacian_eig(graph, tol=1e-6, max_iter=10000):
    """Largest eigenvalue of the unnormalized Laplacian D - A by power iteration."""
    adj = _adjacency_of(graph)
    n = adj.shape[0]
    if sp.issparse(adj):
        deg = np.asarray(adj.sum(axis=1)).ravel()
        apply_a = lambda v: adj @ v
    else:
        a = np.asarray(adj, dtype=np.float64)
        deg = a.sum(axis=1)
        apply_a = lambda v: a @ v
    if n == 1:
        return 0.0

    def apply_l(v):
        return deg * v - apply_a(v)

    # deterministic start with a tilt so no eigenvector is missed by symmetry
    v = np.ones(n) + 1e-3 * np.arange(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = apply_l(v)
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        v_next = w / norm
        lam_next = float(v_next @ apply_l(v_next))
        if abs(lam_next - lam) <= tol * max(1.0, abs(lam_next)):
            return lam_next
        v, lam = v_next, lam_next
    residual = np.linalg.norm(apply_l(v) - lam * v)
    raise MetricError("power iteration did not converge; residual %.3e" % residual)


def dbi(features, labels):
    """Davies-Bouldin index with Euclidean scatter and centroid distances."""
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    if classes.size < 2:
        raise MetricError("dbi needs at least 2 classes")
    cents = np.stack([x[labels == c].mean(axis=0) for c in classes])
    scatter = np.array([np.linalg.norm(x[labels == c] - cents[i], axis=1).mean()
                        for i, c in enumerate(classes)])
    k = classes.size
    out = 0.0
    for i in range(k):
        worst = 0.0
        for j in range(k):
            if i == j:
                continue
            d = np.linalg.norm(cents[i] - cents[j])
            if d == 0:
                raise MetricError(
                    "classes %d and %d have coincident centroids"
                    % (classes[i], classes[j]))
            worst = max(worst, (scatter[i] + scatter[j]) / d)
        out += worst
    return out / k


def dbi_agg(graph):
    """DBI after two rounds of symmetric-normalized aggregation."""
    ahat = normalize_adjacency(_adjacency_of(graph), add_self_loops=True)
    emb = ahat @ (ahat @ graph.features)
    return dbi(np.asarray(emb), graph.labels)


def homophily(graph, delta=0.0):
    adj = _adjacency_of(graph)
    r, c, w = _edge_weights(adj)
    keep = _qualifying(w, delta)
    r, c, w = r[keep], c[keep], w[keep]
    if w.size == 0:
        raise MetricError("no qualifying edges")
    labels = graph.labels
    same = (labels[r] == labels[c]).astype(np.float64)
    return float((w * same).sum() / w.sum())


def pearson(xs, ys):
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.size != ys.size or xs.size < 2:
        raise MetricError("pearson needs two equal-length vectors, length >= 2")
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    denom = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if denom == 0:
        raise MetricError("zero variance input")
    return float(np.clip((xc * yc).sum() / denom, -1.0, 1.0))


METRIC_NAMES = ("density", "max_eig", "dbi", "dbi_agg", "homophily")


def property_vector(graph, delta=0.0):
    """All five metrics for one graph; structure-free graphs get DBI only."""
    out = {}
    structured = _adjacency_of(graph) is not None
    for name in METRIC_NAMES:
        if not structured and name != "dbi":
            out[name] = None
            continue
        try:
            if name == "density":
                out[name] = density(graph, delta)
            elif name == "max_eig":
                out[name] = max_laplacian_eig(graph)
            elif name == "dbi":
                out[name] = dbi(graph.features, graph.labels)
            elif name == "dbi_agg":
                out[name] = dbi_agg(graph)
            else:
                out[name] = homophily(graph, delta)
        except MetricError as e:
            out[name] = "error: %s" % e
    return out


def property_report(pairs, delta=0.0):
    """Original-vs-condensed property table plus per-metric correlations."""
    rows = []
    for original, condensed in pairs:
        rows.append({"original": property_vector(original, 0.0),
                     "condensed": property_vector(condensed, delta)})
    corr = {}
    for name in METRIC_NAMES:
        xs, ys = [], []
        for row in rows:
            a, b = row["original"][name], row["condensed"][name]
            if isinstance(a, float) and isinstance(b, float):
                xs.append(a)
                ys.append(b)
        if len(xs) >= 2:
            if np.array_equal(xs, ys):
                # identical value lists correlate perfectly even when constant
                corr[name] = 1.0
            else:
                try:
                    corr[name] = pearson(xs, ys)
                except MetricError as e:
                    corr[name] = "error: %s" % e
        else:
            corr[name] = None
    return {"rows": rows, "correlations": corr}
