"""Define-by-run reverse-mode differentiation over numpy arrays.

A :class:`Tensor` wraps an ndarray of rank at most 4. Operations in
:mod:`platerec.layers` build a fresh graph on every forward pass whenever at
least one input requires a gradient; :meth:`Tensor.backward` walks it in
reverse topological order.
"""

import numpy as np

MAX_RANK = 4


class GraphError(RuntimeError):
    """Raised when backprop is requested without a recorded forward pass."""


class ShapeError(ValueError):
    """Raised on incompatible operand shapes."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if arr.ndim > MAX_RANK:
            raise ShapeError(f"tensor rank {arr.ndim} exceeds {MAX_RANK}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True).reshape(self.data.shape)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Backpropagate from this tensor into every ancestor that requires grad."""
        if self._backward is None:
            raise GraphError(
                "backward() called on a tensor with no recorded forward pass; "
                "run a forward op on inputs that require grad first"
            )
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without an explicit grad needs a scalar tensor")
            grad = np.ones_like(self.data)

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
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))

        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # arithmetic sugar used by the model code
    def __add__(self, other):
        from .layers import add

        return add(self, other)

    def __mul__(self, other):
        from .layers import scale

        return scale(self, other)

    __rmul__ = __mul__


def make_result(data, parents, backward):
    """Wrap an op output, recording the graph only when some parent needs grad."""
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


def parameter(data, name=None):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True, name=name)


def numerical_grad(fn, t, h=1e-5):
    """Central-difference gradient of scalar ``fn()`` with respect to ``t.data``."""
    g = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn().data)
        flat[i] = orig - h
        fm = float(fn().data)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def gradcheck(fn, tensors, h=1e-5, floor=1e-8):
    """Max relative error between analytic and central-difference gradients.

    ``fn`` must rebuild the graph from ``tensors`` and return a scalar Tensor.
    The error per element is |a - n| / max(|a|, |n|, floor).
    """
    for t in tensors:
        t.zero_grad()
    out = fn()
    out.backward()
    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numerical_grad(fn, t, h)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        err = np.abs(analytic - numeric) / denom
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
