"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Node`` wraps a numpy array and records how it was produced; ``backward``
on a scalar loss walks the record in reverse topological order and
accumulates gradients into every leaf. Everything trainable in this repo is
built on these ops. All arithmetic is float64; any NaN/Inf produced by an op
raises immediately.
"""

from __future__ import annotations

import numpy as np

EPS_PROB = 1e-12  # probability clamp inside losses

_CHECK_FINITE = True


class AutodiffError(RuntimeError):
    pass


class DimensionError(AutodiffError):
    pass


def _as_array(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Node:
    """A value in the computation record.

    Leaves (parameters, inputs) have no parents. Interior nodes keep a
    closure that routes the incoming gradient to their parents.
    """

    __slots__ = ("value", "grad", "_parents", "_backward", "_consumed")

    def __init__(self, value, parents=(), backward=None):
        self.value = _as_array(value)
        if _CHECK_FINITE and not np.all(np.isfinite(self.value)):
            raise AutodiffError("non-finite value produced by an op")
        self.grad = None
        self._parents = tuple(parents)
        self._backward = backward
        self._consumed = False

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(shape={self.value.shape})"

    # -- graph walk ---------------------------------------------------------

    def backward(self):
        """Accumulate gradients of this scalar into all reachable leaves."""
        if self.value.size != 1:
            raise AutodiffError(f"backward requires a scalar, got shape {self.shape}")
        if self._consumed:
            raise AutodiffError("backward already ran on this record; rebuild the graph")
        self._consumed = True

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def zero_grads(params):
    for p in params:
        p.grad = np.zeros_like(p.value)


# -- primitive ops ----------------------------------------------------------


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = Node(a.value + b.value, (a, b))

    def bw(g):
        a.accumulate(_unbroadcast(g, a.value.shape))
        b.accumulate(_unbroadcast(g, b.value.shape))

    out._backward = bw
    return out


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = Node(a.value * b.value, (a, b))

    def bw(g):
        a.accumulate(_unbroadcast(g * b.value, a.value.shape))
        b.accumulate(_unbroadcast(g * a.value, b.value.shape))

    out._backward = bw
    return out


def matmul(a, b) -> Node:
    """Matrix product; supports 2-d and leading-batch operands."""
    a, b = as_node(a), as_node(b)
    if a.value.shape[-1] != b.value.shape[-2 if b.value.ndim > 1 else 0]:
        raise DimensionError(f"matmul inner dims differ: {a.value.shape} @ {b.value.shape}")
    out = Node(a.value @ b.value, (a, b))

    def bw(g):
        a.accumulate(_unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.value.shape))
        b.accumulate(_unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.value.shape))

    out._backward = bw
    return out


def nsum(a, axis=None, keepdims=False) -> Node:
    a = as_node(a)
    out = Node(a.value.sum(axis=axis, keepdims=keepdims), (a,))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate(np.broadcast_to(g, a.value.shape).copy())

    out._backward = bw
    return out


def nmean(a, axis=None, keepdims=False) -> Node:
    a = as_node(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(nsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def relu(a) -> Node:
    a = as_node(a)
    out = Node(np.maximum(a.value, 0.0), (a,))

    def bw(g):
        a.accumulate(g * (a.value > 0))

    out._backward = bw
    return out


def tanh(a) -> Node:
    a = as_node(a)
    t = np.tanh(a.value)
    out = Node(t, (a,))

    def bw(g):
        a.accumulate(g * (1.0 - t * t))

    out._backward = bw
    return out


def sigmoid(a) -> Node:
    """Elementwise logistic, computed stably for large |x|."""
    a = as_node(a)
    x = a.value
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Node(s, (a,))

    def bw(g):
        a.accumulate(g * s * (1.0 - s))

    out._backward = bw
    return out


def nlog(a) -> Node:
    a = as_node(a)
    out = Node(np.log(a.value), (a,))

    def bw(g):
        a.accumulate(g / a.value)

    out._backward = bw
    return out


def softmax(a, mask=None, axis=-1) -> Node:
    """Stabilized softmax along `axis`; masked entries get weight exactly 0.

    `mask` is a boolean array broadcastable to the input, True = keep.
    Raises if any slice has no unmasked entry.
    """
    a = as_node(a)
    x = a.value
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not m.any(axis=axis).all():
            raise AutodiffError("softmax: a slice is fully masked")
        neg = np.where(m, x, -np.inf)
    else:
        m = None
        neg = x
    shifted = neg - neg.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    if m is not None:
        e = np.where(m, e, 0.0)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Node(s, (a,))

    def bw(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        a.accumulate((g - dot) * s)

    out._backward = bw
    return out


def layer_norm(a, gain: Node, bias: Node, eps: float = 1e-6) -> Node:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    a = as_node(a)
    x = a.value
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Node(xhat * gain.value + bias.value, (a, gain, bias))
    d = x.shape[-1]

    def bw(g):
        gain.accumulate(_unbroadcast(g * xhat, gain.value.shape))
        bias.accumulate(_unbroadcast(g, bias.value.shape))
        gx = g * gain.value
        # d(xhat)/dx through mean and variance
        term = gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
        a.accumulate(term * inv)

    out._backward = bw
    return out


def concat(nodes, axis=-1) -> Node:
    nodes = [as_node(n) for n in nodes]
    out = Node(np.concatenate([n.value for n in nodes], axis=axis), tuple(nodes))
    sizes = [n.value.shape[axis] for n in nodes]

    def bw(g):
        splits = np.cumsum(sizes)[:-1]
        for n, piece in zip(nodes, np.split(g, splits, axis=axis)):
            n.accumulate(piece)

    out._backward = bw
    return out


def embedding(table: Node, idx) -> Node:
    """Row lookup into `table` by an integer index array; scatter-add backward."""
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= table.value.shape[0]):
        raise AutodiffError(f"embedding index out of range for table of {table.value.shape[0]} rows")
    out = Node(table.value[idx], (table,))

    def bw(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.value)
        np.add.at(table.grad, idx, g)

    out._backward = bw
    return out


def swapaxes(a, ax1, ax2) -> Node:
    a = as_node(a)
    out = Node(np.swapaxes(a.value, ax1, ax2), (a,))

    def bw(g):
        a.accumulate(np.swapaxes(g, ax1, ax2))

    out._backward = bw
    return out


def reshape(a, shape) -> Node:
    a = as_node(a)
    out = Node(a.value.reshape(shape), (a,))

    def bw(g):
        a.accumulate(g.reshape(a.value.shape))

    out._backward = bw
    return out


# -- losses -----------------------------------------------------------------


def cross_entropy(logits: Node, label: int) -> Node:
    """-log softmax(logits)[label] for a single vector of class scores."""
    c = logits.value.shape[-1]
    if not (0 <= int(label) < c):
        raise IndexError(f"label {label} out of range for {c} classes")
    return cross_entropy_batch(reshape(logits, (1, c)), np.array([int(label)]))


def cross_entropy_batch(logits: Node, labels, reduction: str = "sum") -> Node:
    """Summed (or mean) softmax cross entropy over rows of [B, C] logits."""
    labels = np.asarray(labels, dtype=np.int64)
    x = logits.value
    b, c = x.shape
    if labels.shape != (b,):
        raise DimensionError(f"labels shape {labels.shape} vs logits {x.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError("label out of range")
    shifted = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1)) + x.max(axis=-1)
    nll = lse - x[np.arange(b), labels]
    total = nll.sum() if reduction == "sum" else nll.mean()
    out = Node(total, (logits,))
    probs = np.exp(shifted) / np.exp(shifted).sum(axis=-1, keepdims=True)

    def bw(g):
        grad = probs.copy()
        grad[np.arange(b), labels] -= 1.0
        if reduction == "mean":
            grad /= b
        logits.accumulate(g * grad)

    out._backward = bw
    return out


def weighted_bce(p: Node, y, w_pos: float = 1.0, w_neg: float = 1.0, mask=None) -> Node:
    """Summed weighted binary cross entropy over probabilities `p`.

    Probabilities are clamped into [EPS_PROB, 1-EPS_PROB] before the logs.
    `mask` (optional, boolean) zeroes out padded entries.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != p.value.shape:
        raise DimensionError(f"labels shape {y.shape} vs predictions {p.value.shape}")
    pc = np.clip(p.value, EPS_PROB, 1.0 - EPS_PROB)
    terms = -(y * w_pos * np.log(pc) + (1.0 - y) * w_neg * np.log(1.0 - pc))
    if mask is not None:
        m = np.asarray(mask, dtype=np.float64)
        terms = terms * m
    out = Node(terms.sum(), (p,))

    def bw(g):
        grad = -(y * w_pos / pc - (1.0 - y) * w_neg / (1.0 - pc))
        if mask is not None:
            grad = grad * np.asarray(mask, dtype=np.float64)
        p.accumulate(g * grad)

    out._backward = bw
    return out


# -- gradient checking ------------------------------------------------------


def grad_check(f, points, h: float = 3e-3, max_coords: int = 32, rng=None) -> float:
    """Max scaled error between analytic and numeric gradients.

    `f` maps the list of leaf Nodes in `points` to a scalar Node. Up to
    `max_coords` coordinates are probed per leaf (all of them when small).

    The numeric derivative is a Richardson-extrapolated central difference
    (O(h^4) truncation), and each error is measured relative to the larger
    of the probed values and the tensor's own gradient scale. Both choices
    keep the estimate meaningful for coordinates whose true gradient sits
    orders of magnitude below the tensor's dominant entries, where plain
    per-coordinate relative error only measures floating-point cancellation.
    """
    rng = rng or np.random.default_rng(0)
    zero_grads(points)
    loss = f(points)
    loss.backward()
    analytic = [p.grad.copy() for p in points]

    worst = 0.0
    for p, ag in zip(points, analytic):
        flat = p.value.reshape(-1)
        n = flat.size
        scale = float(np.abs(ag).max()) if ag.size else 0.0
        coords = np.arange(n) if n <= max_coords else rng.choice(n, size=max_coords, replace=False)
        for c in coords:
            orig = flat[c]

            def central(step):
                flat[c] = orig + step
                hi = float(f(points).value)
                flat[c] = orig - step
                lo = float(f(points).value)
                flat[c] = orig
                return (hi - lo) / (2.0 * step)

            numeric = (4.0 * central(h / 2) - central(h)) / 3.0
            a = ag.reshape(-1)[c]
            err = abs(a - numeric) / max(abs(a), abs(numeric), scale, 1e-8)
            worst = max(worst, err)
    return worst
