"""Reverse-mode autodiff on numpy float64 with a recorded tape.

Values are computed eagerly; gradients are built by emitting new tape nodes
(symbolic backward), so gradients of gradients come out of the same machinery.
That is what lets the condensers differentiate through unrolled training steps
and through kernel ridge regression solves without a second code path.

Sparse matrices (scipy CSR/CSC) are allowed as constant left operands of
matmul only. No gradient ever flows into a sparse operand.
"""

import numpy as np
import scipy.sparse as sp


class EngineError(RuntimeError):
    pass


def _as_array(x):
    a = np.asarray(x, dtype=np.float64)
    return a


class Node:
    """One tape entry: an eager float64 value plus backward bookkeeping."""

    __slots__ = ("tape", "nid", "value", "requires_grad", "op", "inputs", "vjp")

    def __init__(self, tape, nid, value, requires_grad, op, inputs, vjp):
        self.tape = tape
        self.nid = nid
        self.value = value
        self.requires_grad = requires_grad
        self.op = op
        self.inputs = inputs
        self.vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    # arithmetic sugar so composite formulas read like numpy
    def __add__(self, other):
        return self.tape.add(self, other)

    def __radd__(self, other):
        return self.tape.add(other, self)

    def __sub__(self, other):
        return self.tape.sub(self, other)

    def __rsub__(self, other):
        return self.tape.sub(other, self)

    def __mul__(self, other):
        return self.tape.mul(self, other)

    def __rmul__(self, other):
        return self.tape.mul(other, self)

    def __truediv__(self, other):
        return self.tape.div(self, other)

    def __rtruediv__(self, other):
        return self.tape.div(other, self)

    def __neg__(self):
        return self.tape.neg(self)

    def __matmul__(self, other):
        return self.tape.matmul(self, other)

    def __repr__(self):
        return "Node(%d, %s, %s%s)" % (
            self.nid, self.op, self.value.shape, ", grad" if self.requires_grad else "")


def _unbroadcast(tape, g, shape):
    # reduce a gradient back to the shape of the operand it belongs to
    if g.value.shape == shape:
        return g
    return tape.sum_to(g, shape)


class Tape:
    """Records ops in topological order. One tape per differentiated program."""

    def __init__(self, check_finite=True):
        self.nodes = []
        self.check_finite = check_finite

    # ops that cannot create non-finite values from finite inputs
    _SAFE_OPS = frozenset(("transpose", "reshape", "take_rows", "concat",
                           "slice_axis", "pad_axis", "broadcast_to", "clip",
                           "relu", "neg"))

    def _record(self, op, value, inputs, vjp, requires_grad=None):
        value = _as_array(value)
        if self.check_finite and op not in self._SAFE_OPS \
                and not np.all(np.isfinite(value)):
            raise EngineError("non-finite value produced by op '%s'" % op)
        if requires_grad is None:
            requires_grad = any(isinstance(x, Node) and x.requires_grad for x in inputs)
        node = Node(self, len(self.nodes), value, requires_grad, op,
                    [x for x in inputs if isinstance(x, Node)], vjp)
        self.nodes.append(node)
        return node

    def leaf(self, value, requires_grad=False):
        return self._record("leaf", value, [], None, requires_grad)

    def constant(self, value):
        return self.leaf(value, requires_grad=False)

    def _wrap(self, x):
        if isinstance(x, Node):
            return x
        return self.constant(x)

    # ---- elementwise binary ----

    def add(self, a, b):
        a, b = self._wrap(a), self._wrap(b)

        def vjp(g):
            # skip gradient work for constant operands throughout
            return [(a, _unbroadcast(self, g, a.value.shape) if a.requires_grad else None),
                    (b, _unbroadcast(self, g, b.value.shape) if b.requires_grad else None)]
        return self._record("add", a.value + b.value, [a, b], vjp)

    def sub(self, a, b):
        a, b = self._wrap(a), self._wrap(b)

        def vjp(g):
            return [(a, _unbroadcast(self, g, a.value.shape) if a.requires_grad else None),
                    (b, _unbroadcast(self, self.neg(g), b.value.shape)
                     if b.requires_grad else None)]
        return self._record("sub", a.value - b.value, [a, b], vjp)

    def mul(self, a, b):
        a, b = self._wrap(a), self._wrap(b)

        def vjp(g):
            return [(a, _unbroadcast(self, self.mul(g, b), a.value.shape)
                     if a.requires_grad else None),
                    (b, _unbroadcast(self, self.mul(g, a), b.value.shape)
                     if b.requires_grad else None)]
        return self._record("mul", a.value * b.value, [a, b], vjp)

    def div(self, a, b):
        a, b = self._wrap(a), self._wrap(b)

        def vjp(g):
            ga = _unbroadcast(self, self.div(g, b), a.value.shape) \
                if a.requires_grad else None
            gb = _unbroadcast(self, self.neg(self.div(self.mul(g, a), self.mul(b, b))),
                              b.value.shape) if b.requires_grad else None
            return [(a, ga), (b, gb)]
        return self._record("div", a.value / b.value, [a, b], vjp)

    def neg(self, a):
        a = self._wrap(a)

        def vjp(g):
            return [(a, self.neg(g))]
        return self._record("neg", -a.value, [a], vjp)

    # ---- elementwise unary ----

    def pow_const(self, a, p):
        a = self._wrap(a)
        p = float(p)

        def vjp(g):
            return [(a, self.mul(g, self.mul(self.pow_const(a, p - 1.0), p)))]
        return self._record("pow", a.value ** p, [a], vjp)

    def exp(self, a):
        a = self._wrap(a)
        out = self._record("exp", np.exp(a.value), [a], None)

        def vjp(g):
            return [(a, self.mul(g, out))]
        out.vjp = vjp
        return out

    def log(self, a):
        a = self._wrap(a)

        def vjp(g):
            return [(a, self.div(g, a))]
        return self._record("log", np.log(a.value), [a], vjp)

    def clip(self, a, lo, hi):
        a = self._wrap(a)
        mask = self.constant(((a.value > lo) & (a.value < hi)).astype(np.float64))

        def vjp(g):
            return [(a, self.mul(g, mask))]
        return self._record("clip", np.clip(a.value, lo, hi), [a], vjp)

    # ---- activations ----

    def relu(self, a):
        a = self._wrap(a)
        mask = self.constant((a.value > 0).astype(np.float64))

        def vjp(g):
            return [(a, self.mul(g, mask))]
        return self._record("relu", np.maximum(a.value, 0.0), [a], vjp)

    def leaky_relu(self, a, alpha=0.01):
        a = self._wrap(a)
        slope = np.where(a.value > 0, 1.0, alpha)
        slope = self.constant(slope)

        def vjp(g):
            return [(a, self.mul(g, slope))]
        return self._record("leaky_relu", np.where(a.value > 0, a.value, alpha * a.value),
                            [a], vjp)

    def relu6(self, a):
        return self.clip(a, 0.0, 6.0)

    def elu(self, a, alpha=1.0):
        a = self._wrap(a)
        pos = a.value > 0
        val = np.where(pos, a.value, alpha * np.expm1(a.value))
        out = self._record("elu", val, [a], None)
        mask = self.constant(pos.astype(np.float64))
        inv = self.constant((~pos).astype(np.float64))

        def vjp(g):
            # derivative is 1 for x>0 and elu(x)+alpha otherwise
            slope = self.add(mask, self.mul(inv, self.add(out, alpha)))
            return [(a, self.mul(g, slope))]
        out.vjp = vjp
        return out

    def sigmoid(self, a):
        a = self._wrap(a)
        val = np.empty_like(a.value)
        pos = a.value >= 0
        val[pos] = 1.0 / (1.0 + np.exp(-a.value[pos]))
        ex = np.exp(a.value[~pos])
        val[~pos] = ex / (1.0 + ex)
        out = self._record("sigmoid", val, [a], None)

        def vjp(g):
            return [(a, self.mul(g, self.mul(out, self.sub(1.0, out))))]
        out.vjp = vjp
        return out

    def tanh(self, a):
        a = self._wrap(a)
        out = self._record("tanh", np.tanh(a.value), [a], None)

        def vjp(g):
            return [(a, self.mul(g, self.sub(1.0, self.mul(out, out))))]
        out.vjp = vjp
        return out

    def softplus(self, a):
        a = self._wrap(a)
        # log(1+exp(x)) computed stably
        val = np.logaddexp(0.0, a.value)

        def vjp(g):
            return [(a, self.mul(g, self.sigmoid(a)))]
        return self._record("softplus", val, [a], vjp)

    # ---- shape ----

    def transpose(self, a):
        a = self._wrap(a)

        def vjp(g):
            return [(a, self.transpose(g))]
        return self._record("transpose", a.value.T, [a], vjp)

    def reshape(self, a, shape):
        a = self._wrap(a)
        old = a.value.shape

        def vjp(g):
            return [(a, self.reshape(g, old))]
        return self._record("reshape", a.value.reshape(shape), [a], vjp)

    def broadcast_to(self, a, shape):
        a = self._wrap(a)
        old = a.value.shape

        def vjp(g):
            return [(a, self.sum_to(g, old))]
        return self._record("broadcast_to", np.broadcast_to(a.value, shape).copy(), [a], vjp)

    def sum_to(self, a, shape):
        """Sum over broadcast axes so the result has the given shape."""
        a = self._wrap(a)
        old = a.value.shape
        val = a.value
        if val.shape != tuple(shape):
            ndiff = val.ndim - len(shape)
            if ndiff > 0:
                val = val.sum(axis=tuple(range(ndiff)))
            axes = tuple(i for i, s in enumerate(shape) if s == 1 and val.shape[i] != 1)
            if axes:
                val = val.sum(axis=axes, keepdims=True)
        val = val.reshape(shape)

        def vjp(g):
            return [(a, self.broadcast_to(g, old))]
        return self._record("sum_to", val, [a], vjp)

    def sum(self, a, axis=None, keepdims=False):
        a = self._wrap(a)
        old = a.value.shape

        def vjp(g):
            gg = g
            if axis is not None and not keepdims:
                kshape = list(old)
                for ax in (axis if isinstance(axis, tuple) else (axis,)):
                    kshape[ax] = 1
                gg = self.reshape(gg, tuple(kshape))
            elif axis is None and not keepdims:
                gg = self.reshape(gg, (1,) * len(old))
            return [(a, self.broadcast_to(gg, old))]
        return self._record("sum", a.value.sum(axis=axis, keepdims=keepdims), [a], vjp)

    def mean(self, a, axis=None, keepdims=False):
        a = self._wrap(a)
        n = a.value.size if axis is None else np.prod(
            [a.value.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])
        return self.mul(self.sum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))

    # ---- indexing ----

    def take_rows(self, a, idx):
        a = self._wrap(a)
        idx = np.asarray(idx, dtype=np.int64)
        nrows = a.value.shape[0]

        def vjp(g):
            return [(a, self.scatter_rows(g, idx, nrows))]
        return self._record("take_rows", a.value[idx], [a], vjp)

    def scatter_rows(self, a, idx, nrows):
        """Rows of a land (accumulating) at positions idx of a zero array."""
        a = self._wrap(a)
        idx = np.asarray(idx, dtype=np.int64)
        out = np.zeros((nrows,) + a.value.shape[1:], dtype=np.float64)
        np.add.at(out, idx, a.value)

        def vjp(g):
            return [(a, self.take_rows(g, idx))]
        return self._record("scatter_rows", out, [a], vjp)

    def concat(self, parts, axis=0):
        parts = [self._wrap(p) for p in parts]
        sizes = [p.value.shape[axis] for p in parts]
        offsets = np.cumsum([0] + sizes)

        def vjp(g):
            return [(p, self.slice_axis(g, axis, int(offsets[i]), int(offsets[i + 1])))
                    for i, p in enumerate(parts)]
        return self._record("concat", np.concatenate([p.value for p in parts], axis=axis),
                            parts, vjp)

    def slice_axis(self, a, axis, start, stop):
        a = self._wrap(a)
        old = a.value.shape
        sl = [slice(None)] * a.value.ndim
        sl[axis] = slice(start, stop)

        def vjp(g):
            return [(a, self.pad_axis(g, axis, start, old[axis] - stop))]
        return self._record("slice_axis", a.value[tuple(sl)], [a], vjp)

    def pad_axis(self, a, axis, before, after):
        a = self._wrap(a)
        pads = [(0, 0)] * a.value.ndim
        pads[axis] = (before, after)
        start, stop = before, before + a.value.shape[axis]

        def vjp(g):
            return [(a, self.slice_axis(g, axis, start, stop))]
        return self._record("pad_axis", np.pad(a.value, pads), [a], vjp)

    # ---- linear algebra ----

    def matmul(self, a, b):
        """2-D matmul. a may be a constant scipy sparse matrix (no grad to it)."""
        if sp.issparse(a):
            return self._spmm(a, b)
        a, b = self._wrap(a), self._wrap(b)

        def vjp(g):
            return [(a, self.matmul(g, self.transpose(b)) if a.requires_grad else None),
                    (b, self.matmul(self.transpose(a), g) if b.requires_grad else None)]
        return self._record("matmul", a.value @ b.value, [a, b], vjp)

    def _spmm(self, s, b):
        b = self._wrap(b)
        st = s.T.tocsr()

        def vjp(g):
            return [(b, self._spmm(st, g))]
        return self._record("spmm", s @ b.value, [b], vjp)

    def solve(self, a, b):
        """x = a^-1 b for square a and 2-D b."""
        a, b = self._wrap(a), self._wrap(b)
        out = self._record("solve", np.linalg.solve(a.value, b.value), [a, b], None)

        def vjp(g):
            gb = self.solve(self.transpose(a), g)
            ga = self.neg(self.matmul(gb, self.transpose(out))) \
                if a.requires_grad else None
            return [(a, ga), (b, gb if b.requires_grad else None)]
        out.vjp = vjp
        return out

    def pair_aggregate(self, w, pairs, h):
        """Accumulate w_p * h[dst] into row src and w_p * h[src] into row dst.

        pairs is an (src, dst) tuple of index arrays. Used to apply a sparse
        symmetric perturbation to node features without densifying it.
        """
        w, h = self._wrap(w), self._wrap(h)
        src, dst = (np.asarray(pairs[0], dtype=np.int64),
                    np.asarray(pairs[1], dtype=np.int64))
        out = np.zeros_like(h.value)
        np.add.at(out, src, w.value[:, None] * h.value[dst])
        np.add.at(out, dst, w.value[:, None] * h.value[src])

        def vjp(g):
            gw = None
            if w.requires_grad:
                gs, gd = self.take_rows(g, src), self.take_rows(g, dst)
                hs, hd = self.take_rows(h, src), self.take_rows(h, dst)
                gw = self.sum(self.add(self.mul(gs, hd), self.mul(gd, hs)), axis=1)
            gh = self.pair_aggregate(w, (src, dst), g) if h.requires_grad else None
            return [(w, gw), (h, gh)]
        return self._record("pair_aggregate", out, [w, h], vjp)

    # ---- losses ----

    def log_softmax(self, a):
        a = self._wrap(a)
        m = a.value.max(axis=1, keepdims=True)
        z = a.value - m
        val = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        out = self._record("log_softmax", val, [a], None)

        def vjp(g):
            p = self.exp(out)
            return [(a, self.sub(g, self.mul(p, self.sum(g, axis=1, keepdims=True))))]
        out.vjp = vjp
        return out

    def cross_entropy(self, logits, labels):
        """Mean negative log likelihood of integer labels."""
        logits = self._wrap(logits)
        labels = np.asarray(labels, dtype=np.int64)
        n, c = logits.value.shape
        ls = self.log_softmax(logits)
        onehot = np.zeros((n, c))
        onehot[np.arange(n), labels] = 1.0
        picked = self.sum(self.mul(ls, self.constant(onehot)))
        return self.mul(picked, -1.0 / float(n))

    # ---- arc-cosine kernel maps (relu covariance and derivative) ----

    def kappa0(self, u):
        """(pi - arccos u) / pi, the relu derivative arc-cosine map."""
        u = self._wrap(u)
        if np.any(np.abs(u.value) > 1.0):
            raise EngineError("kappa0 input outside [-1, 1]")
        val = (np.pi - np.arccos(u.value)) / np.pi

        def vjp(g):
            d = self.pow_const(self.sub(1.0, self.mul(u, u)), -0.5)
            return [(u, self.mul(g, self.mul(d, 1.0 / np.pi)))]
        return self._record("kappa0", val, [u], vjp)

    def kappa1(self, u):
        """(u (pi - arccos u) + sqrt(1 - u^2)) / pi, the relu arc-cosine map."""
        u = self._wrap(u)
        if np.any(np.abs(u.value) > 1.0):
            raise EngineError("kappa1 input outside [-1, 1]")
        val = (u.value * (np.pi - np.arccos(u.value))
               + np.sqrt(np.maximum(1.0 - u.value ** 2, 0.0))) / np.pi

        def vjp(g):
            # exact derivative of kappa1 is kappa0
            return [(u, self.mul(g, self.kappa0(u)))]
        return self._record("kappa1", val, [u], vjp)

    # ---- backward ----

    def grad(self, loss, wrt):
        """Symbolic gradients of a scalar loss. Returns one node per wrt entry.

        Emitted nodes live on the same tape, so they can be differentiated
        again. Unreached wrt leaves yield zero constants.
        """
        if loss.value.shape != ():
            raise EngineError("grad expects a scalar loss")
        adjoint = {loss.nid: self.constant(1.0)}
        lo = min(n.nid for n in wrt) if wrt else 0
        for node in reversed(self.nodes[lo:loss.nid + 1]):
            g = adjoint.get(node.nid)
            if g is None or node.vjp is None or not node.requires_grad:
                continue
            for inp, contrib in node.vjp(g):
                if contrib is None or not inp.requires_grad:
                    continue
                prev = adjoint.get(inp.nid)
                adjoint[inp.nid] = contrib if prev is None else self.add(prev, contrib)
        out = []
        for w in wrt:
            g = adjoint.get(w.nid)
            if g is None:
                g = self.constant(np.zeros_like(w.value))
            elif g.value.shape != w.value.shape:
                g = self.sum_to(g, w.value.shape)
            out.append(g)
        return out


def backward(tape, loss):
    """Numeric gradient map {leaf id: array} for every differentiable leaf."""
    leaves = [n for n in tape.nodes if n.op == "leaf" and n.requires_grad
              and n.nid <= loss.nid]
    grads = tape.grad(loss, leaves)
    return {leaf.nid: g.value for leaf, g in zip(leaves, grads)}


class AdamState:
    """Moment buffers plus hyperparameters for Adam with bias correction."""

    def __init__(self, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {}
        self.v = {}


def adam_step(params, grads, state):
    """One Adam update over a dict of arrays. Returns (new params, state)."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    out = {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        m = state.m.get(k)
        if m is None:
            m = np.zeros_like(p)
            state.m[k] = m
            state.v[k] = np.zeros_like(p)
        v = state.v[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        gg = np.asarray(g * g)
        gg *= 1 - b2
        v += gg
        # reuse gg as the update buffer to avoid fresh temporaries
        np.sqrt(v, out=gg)
        gg /= np.sqrt(1 - b2 ** t)
        gg += state.eps
        np.divide(m, gg, out=gg)
        gg *= state.lr / (1 - b1 ** t)
        out[k] = p - gg
    return out, state


def fd_check(function, point, epsilon=1e-6):
    """Max relative error between reverse-mode and central finite differences.

    function(tape, leaves) must build and return a scalar loss node from the
    dict of leaf nodes. point is a dict of float64 arrays. Exhaustive over
    every coordinate, so keep the point small.
    """
    tape = Tape()
    leaves = {k: tape.leaf(v, requires_grad=True) for k, v in point.items()}
    loss = function(tape, leaves)
    gmap = backward(tape, loss)

    def value_at(values):
        t = Tape()
        ls = {k: t.leaf(v) for k, v in values.items()}
        return float(function(t, ls).value)

    worst = 0.0
    for k, v in point.items():
        g_ad = gmap[leaves[k].nid]
        flat = v.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            vals = {kk: (vv.copy() if kk == k else vv) for kk, vv in point.items()}
            f = vals[k].reshape(-1)
            f[i] = orig + epsilon
            hi = value_at(vals)
            f[i] = orig - epsilon
            lo = value_at(vals)
            g_fd = (hi - lo) / (2 * epsilon)
            err = abs(g_ad.reshape(-1)[i] - g_fd) / max(1.0, abs(g_fd))
            worst = max(worst, err)
    return worst
