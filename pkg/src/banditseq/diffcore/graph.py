"""Define-by-run reverse-mode differentiation over dense float64 arrays.

A computation is a DAG of `Node`s built fresh for every training example
(sequence lengths vary, so there is nothing to reuse). Each op records its
parents and a closure that maps the output gradient to parent gradients;
`backward` walks the DAG once in reverse topological order and adds leaf
gradients into their parameter buffers.

Two kinds of ops live here. The generic primitives (matmul, add, tanh,
sigmoid, softmax, log, mul, concat, pick/row, sum, ...) are enough to
express everything. The fused ops (lstm_gates/lstm_c/lstm_h, attend,
log_softmax) compute the same functions with far fewer nodes and are what
the sequence models actually use; tests pin them against the composed
forms and against finite differences.

Gradient arrays are treated as immutable: accumulation rebinds
(`n.grad = n.grad + g`) instead of mutating, so a backward closure may
hand the same array to several parents. Graphs are single-use; call
`backward` once per graph.

Forward-pass finiteness checking on every op is available for tests via
`set_debug_checks(True)`; the always-on checks live at the boundaries
(backward roots, leaf gradient sinks, optimizer steps).
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractViolation, NumericError

_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle per-op finiteness checks on forward values (slow; for tests)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


class Node:
    """One value in a computation DAG."""

    __slots__ = ("val", "parents", "bw", "grad", "sink", "name")

    def __init__(self, val, parents=(), bw=None, name=""):
        if _DEBUG_CHECKS and not np.all(np.isfinite(val)):
            raise NumericError(f"non-finite value produced by node '{name}'")
        self.val = val
        self.parents = parents
        self.bw = bw
        self.grad = None
        self.sink = None
        self.name = name

    def __repr__(self):
        shape = getattr(self.val, "shape", ())
        return f"Node({self.name or 'leaf'}, shape={shape})"


def leaf(val, name="", sink=None) -> Node:
    """A graph input. If `sink` is given, backward adds the leaf's gradient
    into that array (this is how parameters collect gradients)."""
    n = Node(val, name=name)
    n.sink = sink
    return n


def constant(val, name="const") -> Node:
    return Node(np.asarray(val, dtype=np.float64), name=name)


# ---------------------------------------------------------------------------
# generic primitives
# ---------------------------------------------------------------------------


def add(a: Node, b: Node) -> Node:
    def bw(g):
        return g, g

    return Node(a.val + b.val, (a, b), bw, "add")


def add_n(nodes) -> Node:
    """Sum of same-shaped nodes (n-ary add keeps loss graphs shallow)."""
    nodes = tuple(nodes)
    total = nodes[0].val
    for n in nodes[1:]:
        total = total + n.val

    def bw(g):
        return (g,) * len(nodes)

    return Node(total, nodes, bw, "add_n")


def mul(a: Node, b: Node) -> Node:
    av, bv = a.val, b.val

    def bw(g):
        return g * bv, g * av

    return Node(av * bv, (a, b), bw, "mul")


def affine(x: Node, scale: float, shift: float = 0.0) -> Node:
    """scale * x + shift with constant coefficients."""

    def bw(g):
        return (g * scale,)

    return Node(scale * x.val + shift, (x,), bw, "affine")


def square(x: Node) -> Node:
    xv = x.val

    def bw(g):
        return (g * (2.0 * xv),)

    return Node(xv * xv, (x,), bw, "square")


def matmul(a: Node, b: Node) -> Node:
    """Matrix/vector product: supports (2d,2d), (2d,1d) and (1d,1d)."""
    av, bv = a.val, b.val
    ra, rb = av.ndim, bv.ndim
    if ra == 2 and rb == 1:

        def bw(g):
            return np.outer(g, bv), av.T @ g

    elif ra == 2 and rb == 2:

        def bw(g):
            return g @ bv.T, av.T @ g

    elif ra == 1 and rb == 1:

        def bw(g):
            return g * bv, g * av

    else:
        raise ContractViolation(f"matmul: unsupported ranks {ra} @ {rb}")
    return Node(av @ bv, (a, b), bw, "matmul")


def matvec_t(a: Node, x: Node) -> Node:
    """A.T @ x for a matrix A and vector x (avoids materializing A.T)."""
    av, xv = a.val, x.val

    def bw(g):
        return np.outer(xv, g), av @ g

    return Node(av.T @ xv, (a, x), bw, "matvec_t")


def tanh(x: Node) -> Node:
    t = np.tanh(x.val)

    def bw(g):
        return (g * (1.0 - t * t),)

    return Node(t, (x,), bw, "tanh")


def sigmoid(x: Node) -> Node:
    s = _sigmoid(x.val)

    def bw(g):
        return (g * s * (1.0 - s),)

    return Node(s, (x,), bw, "sigmoid")


def _sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def log(x: Node) -> Node:
    xv = x.val
    if np.any(xv <= 0.0):
        raise NumericError("log: non-positive input")

    def bw(g):
        return (g / xv,)

    return Node(np.log(xv), (x,), bw, "log")


def softmax(x: Node) -> Node:
    s = softmax_values(x.val)

    def bw(g):
        return (s * (g - np.dot(g, s)),)

    return Node(s, (x,), bw, "softmax")


def softmax_values(v: np.ndarray) -> np.ndarray:
    """Plain (non-graph) stable softmax of a 1-d array."""
    e = np.exp(v - v.max())
    return e / e.sum()


def log_softmax(x: Node) -> Node:
    xv = x.val
    m = xv.max()
    e = np.exp(xv - m)
    z = e.sum()
    out = xv - (m + np.log(z))
    s = e / z

    def bw(g):
        return (g - s * g.sum(),)

    return Node(out, (x,), bw, "log_softmax")


def pick(x: Node, i: int) -> Node:
    """Select one element of a vector as a scalar."""
    size = x.val.shape[0]

    def bw(g):
        gx = np.zeros(size)
        gx[i] = g
        return (gx,)

    return Node(np.float64(x.val[i]), (x,), bw, "pick")


def row(m: Node, i: int) -> Node:
    """Select one row of a matrix (embedding lookup)."""
    shape = m.val.shape

    def bw(g):
        gm = np.zeros(shape)
        gm[i] = g
        return (gm,)

    return Node(m.val[i], (m,), bw, "row")


def vslice(x: Node, start: int, stop: int) -> Node:
    size = x.val.shape[0]

    def bw(g):
        gx = np.zeros(size)
        gx[start:stop] = g
        return (gx,)

    return Node(x.val[start:stop], (x,), bw, "vslice")


def concat(parts) -> Node:
    parts = tuple(parts)
    sizes = [p.val.shape[0] for p in parts]

    def bw(g):
        grads = []
        off = 0
        for s in sizes:
            grads.append(g[off:off + s])
            off += s
        return tuple(grads)

    return Node(np.concatenate([p.val for p in parts]), parts, bw, "concat")


def stack_rows(rows_) -> Node:
    """Stack 1-d nodes into a matrix, one node per row."""
    rows_ = tuple(rows_)

    def bw(g):
        return tuple(g[i] for i in range(len(rows_)))

    return Node(np.stack([r.val for r in rows_]), rows_, bw, "stack_rows")


def sum_all(x: Node) -> Node:
    shape = x.val.shape

    def bw(g):
        return (np.full(shape, g),)

    return Node(np.float64(x.val.sum()), (x,), bw, "sum")


# ---------------------------------------------------------------------------
# fused ops for the recurrent models
# ---------------------------------------------------------------------------


def lstm_gates(x: Node, h: Node, w_ih: Node, w_hh: Node, b: Node) -> Node:
    """Pre-activation gate vector W_ih x + W_hh h + b, laid out [i f g o]."""
    xv, hv, wiv, whv = x.val, h.val, w_ih.val, w_hh.val

    def bw(g):
        return wiv.T @ g, whv.T @ g, np.outer(g, xv), np.outer(g, hv), g

    return Node(wiv @ xv + whv @ hv + b.val, (x, h, w_ih, w_hh, b), bw, "lstm_gates")


def lstm_c(gates: Node, c_prev: Node) -> Node:
    """New cell state from [i f g o] pre-activations and the previous cell."""
    gv = gates.val
    hdim = gv.shape[0] // 4
    i = _sigmoid(gv[:hdim])
    f = _sigmoid(gv[hdim:2 * hdim])
    cand = np.tanh(gv[2 * hdim:3 * hdim])
    cv = c_prev.val

    def bw(g):
        gg = np.zeros(4 * hdim)
        gg[:hdim] = g * cand * i * (1.0 - i)
        gg[hdim:2 * hdim] = g * cv * f * (1.0 - f)
        gg[2 * hdim:3 * hdim] = g * i * (1.0 - cand * cand)
        return gg, g * f

    return Node(f * cv + i * cand, (gates, c_prev), bw, "lstm_c")


def lstm_h(gates: Node, c_new: Node) -> Node:
    """New hidden state o * tanh(c) from the o-gate pre-activation."""
    gv = gates.val
    hdim = gv.shape[0] // 4
    o = _sigmoid(gv[3 * hdim:])
    tc = np.tanh(c_new.val)

    def bw(g):
        gg = np.zeros(4 * hdim)
        gg[3 * hdim:] = g * tc * o * (1.0 - o)
        return gg, g * o * (1.0 - tc * tc)

    return Node(o * tc, (gates, c_new), bw, "lstm_h")


class AttendNode(Node):
    """Bilinear-score attention context; `.weights` exposes the score softmax."""

    __slots__ = ("weights",)


def attend(mem: Node, h: Node, w_a: Node) -> AttendNode:
    """Context vector sum_i softmax_i(h^T W_a mem_i) * mem_i.

    `mem` is the [src_len x hidden] matrix of encoder states, `h` the
    current decoder hidden state.
    """
    mv, hv, wv = mem.val, h.val, w_a.val
    q = wv.T @ hv
    a = softmax_values(mv @ q)
    ctx = mv.T @ a

    def bw(g):
        ga = mv @ g
        gs = a * (ga - np.dot(ga, a))
        gmem = np.outer(gs, q) + np.outer(a, g)
        gq = mv.T @ gs
        return gmem, wv @ gq, np.outer(hv, gq)

    node = AttendNode(ctx, (mem, h, w_a), bw, "attend")
    node.weights = a
    return node


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def _topo_order(root: Node) -> list:
    # Iterative postorder. A node joins `seen` only when it is expanded:
    # marking at push time would let a shared input slip ahead of one of
    # its consumers, and its gradient would then be read before complete.
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order  # parents before children


def backward(root: Node, seed: float = 1.0) -> None:
    """Accumulate d(root)/d(leaf) * seed into every leaf's sink array.

    `root` must be scalar. Interior gradients stay on the graph's nodes;
    parameter gradients are added into the `ParamStore` buffers the leaves
    were created with, so consecutive backward calls aggregate (mini-batch
    summation) until the optimizer consumes and zeroes them.
    """
    if getattr(root.val, "shape", None) not in ((), None):
        raise ContractViolation(f"backward root must be scalar, got shape {root.val.shape}")
    if not np.isfinite(root.val):
        raise NumericError(f"backward root '{root.name}' is not finite")
    order = _topo_order(root)
    root.grad = np.float64(seed)
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        if node.bw is not None:
            for parent, gp in zip(node.parents, node.bw(g)):
                parent.grad = gp if parent.grad is None else parent.grad + gp
        if node.sink is not None:
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient at parameter '{node.name}'")
            node.sink += g
