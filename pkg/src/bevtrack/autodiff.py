"""Reverse-mode automatic differentiation over float64 NumPy arrays.

Define-by-run: every operation builds a fresh ValueNode holding its result
and a closure that routes the upstream gradient to its inputs. Graphs are
rebuilt each step and discarded; parameters are leaf nodes reused across
graphs. Only the ops the model architectures need are provided (no general
broadcasting, no fusion, no GPU).
"""

import numpy as np

from . import kernels


class ValueNode:
    """One node of the computation graph: an array, its gradient, and
    the bookkeeping to backpropagate through the op that produced it."""

    __slots__ = ("data", "grad", "needs_grad", "_inputs", "_backward_fn")

    def __init__(self, data, inputs=(), backward_fn=None, needs_grad=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._inputs = inputs
        self._backward_fn = backward_fn
        if needs_grad is None:
            needs_grad = any(n.needs_grad for n in inputs)
        self.needs_grad = needs_grad

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def backward(self):
        """Backpropagate from this scalar; each reachable node's backward
        rule runs exactly once, after all its consumers have contributed."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output node")
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)

    def __add__(self, other):
        return add(self, as_node(other))

    def __radd__(self, other):
        return add(as_node(other), self)

    def __sub__(self, other):
        return sub(self, as_node(other))

    def __rsub__(self, other):
        return sub(as_node(other), self)

    def __mul__(self, other):
        return mul(self, as_node(other))

    def __rmul__(self, other):
        return mul(as_node(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_node(other))

    def __repr__(self):
        return f"ValueNode(shape={self.data.shape}, needs_grad={self.needs_grad})"


def as_node(x):
    return x if isinstance(x, ValueNode) else ValueNode(x)


def constant(x):
    return ValueNode(x)


def parameter(x):
    return ValueNode(np.array(x, dtype=np.float64), needs_grad=True)


def uniform_init(rng, fan_in, shape):
    """U(-1/sqrt(fan_in), +1/sqrt(fan_in)) weight draw."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _topo_order(root):
    # Iterative postorder; restricted to the subgraph that can reach a
    # gradient-bearing leaf.
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for inp in node._inputs:
            if inp.needs_grad and id(inp) not in visited:
                stack.append((inp, False))
    return order


def _acc(node, g):
    if not node.needs_grad:
        return
    node.grad = g if node.grad is None else node.grad + g


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    a, b = as_node(a), as_node(b)
    out_data = a.data + b.data

    def backward(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(g, b.data.shape))

    return ValueNode(out_data, (a, b), backward)


def sub(a, b):
    a, b = as_node(a), as_node(b)
    out_data = a.data - b.data

    def backward(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(-g, b.data.shape))

    return ValueNode(out_data, (a, b), backward)


def neg(a):
    def backward(g):
        _acc(a, -g)

    return ValueNode(-a.data, (a,), backward)


def mul(a, b):
    a, b = as_node(a), as_node(b)
    out_data = a.data * b.data

    def backward(g):
        _acc(a, _unbroadcast(g * b.data, a.data.shape))
        _acc(b, _unbroadcast(g * a.data, b.data.shape))

    return ValueNode(out_data, (a, b), backward)


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul supports 2-D operands only")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def backward(g):
        _acc(a, g @ b.data.T)
        _acc(b, a.data.T @ g)

    return ValueNode(out_data, (a, b), backward)


def dense(x, w, b):
    """Affine layer y = x @ w + b."""
    return add(matmul(x, w), b)


def relu(x):
    mask = x.data > 0
    out_data = np.where(mask, x.data, 0.0)

    def backward(g):
        _acc(x, g * mask)

    return ValueNode(out_data, (x,), backward)


def sigmoid(x):
    out_data = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        _acc(x, g * out_data * (1.0 - out_data))

    return ValueNode(out_data, (x,), backward)


def tanh(x):
    out_data = np.tanh(x.data)

    def backward(g):
        _acc(x, g * (1.0 - out_data * out_data))

    return ValueNode(out_data, (x,), backward)


def log(x):
    out_data = np.log(x.data)

    def backward(g):
        _acc(x, g / x.data)

    return ValueNode(out_data, (x,), backward)


def sqrt(x):
    out_data = np.sqrt(x.data)

    def backward(g):
        _acc(x, g * (0.5 / out_data))

    return ValueNode(out_data, (x,), backward)


def clip(x, lo=None, hi=None):
    """Clamp to [lo, hi]; gradient passes through strictly inside the range."""
    out_data = np.clip(x.data, lo, hi)
    mask = np.ones_like(x.data, dtype=bool)
    if lo is not None:
        mask &= x.data > lo
    if hi is not None:
        mask &= x.data < hi

    def backward(g):
        _acc(x, g * mask)

    return ValueNode(out_data, (x,), backward)


def reduce_sum(x, axis=None, keepdims=False):
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        _acc(x, np.broadcast_to(gg, x.data.shape))

    return ValueNode(out_data, (x,), backward)


def mean(x):
    n = x.data.size
    out_data = np.asarray(x.data.mean())

    def backward(g):
        _acc(x, np.broadcast_to(g / n, x.data.shape))

    return ValueNode(out_data, (x,), backward)


def transpose(x):
    if x.data.ndim != 2:
        raise ValueError("transpose supports 2-D nodes only")

    def backward(g):
        _acc(x, np.ascontiguousarray(g.T))

    return ValueNode(np.ascontiguousarray(x.data.T), (x,), backward)


def concat(nodes, axis):
    nodes = [as_node(n) for n in nodes]
    out_data = np.concatenate([n.data for n in nodes], axis=axis)
    sizes = [n.data.shape[axis] for n in nodes]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for n, lo, hi in zip(nodes, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _acc(n, g[tuple(sl)])

    return ValueNode(out_data, tuple(nodes), backward)


def narrow(x, axis, start, stop):
    """Contiguous slice [start:stop) along one axis."""
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    out_data = x.data[sl]

    def backward(g):
        buf = np.zeros_like(x.data)
        buf[sl] = g
        _acc(x, buf)

    return ValueNode(out_data, (x,), backward)


def take_flat(x, indices):
    """Gather scalar entries by flat index (duplicates allowed)."""
    indices = np.asarray(indices, dtype=np.intp)
    out_data = x.data.reshape(-1)[indices]

    def backward(g):
        buf = np.zeros(x.data.size)
        np.add.at(buf, indices, g)
        _acc(x, buf.reshape(x.data.shape))

    return ValueNode(out_data, (x,), backward)


def gather_rows(x, indices):
    """Gather rows along axis 0 (duplicates allowed)."""
    indices = np.asarray(indices, dtype=np.intp)
    out_data = x.data[indices]

    def backward(g):
        buf = np.zeros_like(x.data)
        np.add.at(buf, indices, g)
        _acc(x, buf)

    return ValueNode(out_data, (x,), backward)


def last_step(h, lengths):
    """Select h[len_b - 1, b, :] per batch column of a (T, B, H) stack."""
    lengths = np.asarray(lengths, dtype=np.intp)
    T, B, H = h.data.shape
    cols = np.arange(B)
    out_data = h.data[lengths - 1, cols]

    def backward(g):
        buf = np.zeros_like(h.data)
        buf[lengths - 1, cols] = g
        _acc(h, buf)

    return ValueNode(out_data, (h,), backward)


def lstm_sequence(x, wx, wh, b):
    """Fused LSTM over a (T, B, I) input stack from zero initial state.

    Returns the (T, B, H) stack of hidden states. The recurrent loop runs
    in the active kernel backend; the input projection and its gradients
    are single large matmuls here.
    """
    T, B, I = x.data.shape
    H = wh.data.shape[0]
    x_flat = x.data.reshape(T * B, I)
    xw = (x_flat @ wx.data + b.data).reshape(T, B, 4 * H)
    h0 = np.zeros((B, H))
    c0 = np.zeros((B, H))
    h, c, gates = kernels.lstm_seq_forward(xw, wh.data, h0, c0)

    def backward(g):
        dxw, dwh, _, _ = kernels.lstm_seq_backward(wh.data, h, c, gates, h0, c0, g)
        dxw_flat = dxw.reshape(T * B, 4 * H)
        if x.needs_grad:
            _acc(x, (dxw_flat @ wx.data.T).reshape(T, B, I))
        _acc(wx, x_flat.T @ dxw_flat)
        _acc(wh, dwh)
        _acc(b, dxw_flat.sum(axis=0))

    return ValueNode(h, (x, wx, wh, b), backward)


def lstm_cell(x, h_prev, c_prev, params):
    """One LSTM step composed from engine primitives.

    x: (B, I), h_prev/c_prev: (B, H); params: (wx, wh, b) nodes with
    wx (I, 4H), wh (H, 4H), b (4H,). Gate layout [input, forget, cell,
    output] matches the fused kernel. Returns (h, c).
    """
    wx, wh, b = params
    H = wh.data.shape[0]
    z = add(add(matmul(x, wx), matmul(h_prev, wh)), b)
    i = sigmoid(narrow(z, 1, 0, H))
    f = sigmoid(narrow(z, 1, H, 2 * H))
    g = tanh(narrow(z, 1, 2 * H, 3 * H))
    o = sigmoid(narrow(z, 1, 3 * H, 4 * H))
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


def grad_check(fn, params, eps=1e-4):
    """Compare analytic gradients of fn() against central differences.

    fn rebuilds and returns the scalar loss node on every call; params are
    the leaf nodes to perturb. Returns the maximum elementwise error
    |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    params = list(params)
    for p in params:
        p.grad = None
    fn().backward()
    analytic = [
        np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params
    ]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        ga_flat = ga.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            f_hi = float(fn().data)
            flat[idx] = orig - eps
            f_lo = float(fn().data)
            flat[idx] = orig
            numeric = (f_hi - f_lo) / (2.0 * eps)
            err = abs(numeric - ga_flat[idx]) / max(1.0, abs(numeric), abs(ga_flat[idx]))
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
