"""Minimal dense-tensor type with reverse-mode automatic differentiation.

Tensors wrap float64 numpy arrays. Every differentiable operation records
its parents and a vector-Jacobian closure on the output node; the tape is
therefore rebuilt on every forward pass and freed with the outputs. Graph
tensors are never mutated in place.

All forward operations map finite inputs to finite outputs. The one
deliberate exception is additive attention masks, which carry -inf entries
by construction (see ``Tensor.const``); a softmax downstream of such a mask
is finite again as long as each row keeps at least one unmasked entry.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_pairs")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        # ((parent, vjp), ...) where vjp maps the output gradient to the
        # parent's gradient contribution.
        self._pairs: tuple = ()

    # -- constructors -------------------------------------------------

    @staticmethod
    def const(data) -> "Tensor":
        """Non-differentiable tensor (plain data, may contain -inf masks)."""
        return Tensor(data, requires_grad=False)

    @staticmethod
    def param(data) -> "Tensor":
        """Trainable leaf tensor."""
        return Tensor(data, requires_grad=True)

    # -- introspection ------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, grad={'set' if self.grad is not None else 'none'})"

    # -- graph plumbing -----------------------------------------------

    @staticmethod
    def from_op(data: np.ndarray, pairs) -> "Tensor":
        """Build an op output from ``pairs = [(parent, vjp), ...]``.

        Parents that do not require grad are dropped from the tape, so
        constant subgraphs cost nothing at backward time.
        """
        live = tuple((p, fn) for p, fn in pairs if p.requires_grad)
        out = Tensor(data, requires_grad=bool(live))
        out._pairs = live
        return out

    def backward(self) -> None:
        """Populate ``grad`` on every reachable tensor that requires grad.

        Only valid on scalars. Each node's vjp runs exactly once, after all
        of its consumers have accumulated into it.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("loss does not depend on any differentiable tensor")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._pairs:
                if id(parent) not in seen:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            for parent, vjp in node._pairs:
                contrib = vjp(g)
                acc = grads.get(id(parent))
                grads[id(parent)] = contrib if acc is None else acc + contrib

    # -- arithmetic ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, -_wrap(other))

    def __rsub__(self, other):
        return add(-self, other)

    def __neg__(self):
        return Tensor.from_op(-self.data, [(self, lambda g: -g)])

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- elementwise functions -----------------------------------------

    def relu(self) -> "Tensor":
        mask = self.data > 0.0
        return Tensor.from_op(np.where(mask, self.data, 0.0), [(self, lambda g: g * mask)])

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor.from_op(out, [(self, lambda g: g * out)])

    def log(self) -> "Tensor":
        return Tensor.from_op(np.log(self.data), [(self, lambda g: g / self.data)])

    def sqrt(self) -> "Tensor":
        out = np.sqrt(self.data)
        return Tensor.from_op(out, [(self, lambda g: g * 0.5 / out)])

    def abs(self) -> "Tensor":
        # subgradient at 0 defined as 0
        sign = np.sign(self.data)
        return Tensor.from_op(np.abs(self.data), [(self, lambda g: g * sign)])

    def sigmoid(self) -> "Tensor":
        out = _sigmoid(self.data)
        return Tensor.from_op(out, [(self, lambda g: g * out * (1.0 - out))])

    def softplus(self) -> "Tensor":
        # log(1 + exp(x)), computed without overflow
        out = np.logaddexp(0.0, self.data)
        sig = _sigmoid(self.data)
        return Tensor.from_op(out, [(self, lambda g: g * sig)])

    def sin(self) -> "Tensor":
        cos = np.cos(self.data)
        return Tensor.from_op(np.sin(self.data), [(self, lambda g: g * cos)])

    def cos(self) -> "Tensor":
        sin = np.sin(self.data)
        return Tensor.from_op(np.cos(self.data), [(self, lambda g: -g * sin)])

    # -- reductions / reshaping ----------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.shape

        def vjp(g):
            if axis is None:
                return np.broadcast_to(g, shape).copy() if np.ndim(g) == 0 else np.full(shape, g)
            gg = g if keepdims else np.expand_dims(g, axis)
            return np.broadcast_to(gg, shape).copy()

        return Tensor.from_op(out, [(self, vjp)])

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def t(self) -> "Tensor":
        if self.data.ndim != 2:
            raise ShapeError(f"t() needs a 2-d tensor, got shape {self.shape}")
        return Tensor.from_op(self.data.T.copy(), [(self, lambda g: g.T.copy())])

    def reshape(self, *shape) -> "Tensor":
        old = self.shape
        return Tensor.from_op(self.data.reshape(*shape), [(self, lambda g: g.reshape(old))])


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor.const(x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- binary ops ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data + b.data
    return Tensor.from_op(out, [
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(g, b.shape)),
    ])


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data * b.data
    return Tensor.from_op(out, [
        (a, lambda g: _unbroadcast(g * b.data, a.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.shape)),
    ])


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data / b.data
    return Tensor.from_op(out, [
        (a, lambda g: _unbroadcast(g / b.data, a.shape)),
        (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
    ])


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = a.data @ b.data
    return Tensor.from_op(out, [
        (a, lambda g: g @ b.data.T),
        (b, lambda g: a.data.T @ g),
    ])


# -- row-wise softmax family ---------------------------------------------


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-d tensor, stabilized by max subtraction.

    -inf entries yield exactly-zero weights. Every row must keep at least
    one finite entry.
    """
    x = _wrap(x)
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows needs a 2-d tensor, got {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return out * (g - dot)

    return Tensor.from_op(out, [(x, vjp)])


def log_softmax_rows(x: Tensor) -> Tensor:
    x = _wrap(x)
    if x.data.ndim != 2:
        raise ShapeError(f"log_softmax_rows needs a 2-d tensor, got {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    soft = np.exp(out)

    def vjp(g):
        return g - soft * g.sum(axis=1, keepdims=True)

    return Tensor.from_op(out, [(x, vjp)])


# -- indexing / stacking --------------------------------------------------


def gather_rows(x: Tensor, idx) -> Tensor:
    """Rows ``x[idx]``; backward scatter-adds into the gathered rows."""
    x = _wrap(x)
    idx = np.asarray(idx, dtype=np.intp)
    out = x.data[idx]

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return gx

    return Tensor.from_op(out, [(x, vjp)])


def take_per_row(x: Tensor, cols) -> Tensor:
    """out[i] = x[i, cols[i]] for a 2-d tensor."""
    x = _wrap(x)
    cols = np.asarray(cols, dtype=np.intp)
    if x.data.ndim != 2 or cols.shape != (x.shape[0],):
        raise ShapeError(f"take_per_row: shapes {x.shape} vs cols {cols.shape}")
    rows = np.arange(x.shape[0])
    out = x.data[rows, cols]

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[rows, cols] = g
        return gx

    return Tensor.from_op(out, [(x, vjp)])


def slice_cols(x: Tensor, lo: int, hi: int) -> Tensor:
    x = _wrap(x)
    out = x.data[:, lo:hi].copy()

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[:, lo:hi] = g
        return gx

    return Tensor.from_op(out, [(x, vjp)])


def _concat(parts: list[Tensor], axis: int) -> Tensor:
    parts = [_wrap(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    pairs = []
    off = 0
    for p in parts:
        n = p.shape[axis]
        lo = off

        def vjp(g, lo=lo, n=n):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, lo + n)
            return g[tuple(sl)].copy()

        pairs.append((p, vjp))
        off += n
    return Tensor.from_op(out, pairs)


def concat_rows(parts: list[Tensor]) -> Tensor:
    return _concat(parts, axis=0)


def concat_cols(parts: list[Tensor]) -> Tensor:
    return _concat(parts, axis=1)


def sparse_matmul(op, op_t, x: Tensor) -> Tensor:
    """Apply a fixed sparse linear operator ``op`` (scipy CSR) to x.

    ``op_t`` must be the precomputed transpose; the operator itself is data,
    so gradients flow only into x.
    """
    x = _wrap(x)
    out = np.asarray(op @ x.data)
    return Tensor.from_op(out, [(x, lambda g: np.asarray(op_t @ g))])
