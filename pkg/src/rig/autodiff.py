"""Tape-style reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Tensor` wraps an ``ndarray`` and, when it takes part in a computation
with a tensor that requires gradients, records the operation that produced it.
Calling :meth:`Tensor.backward` on a scalar walks the recorded graph in reverse
topological order and accumulates ``d loss / d node`` into ``node.grad``.

The graph is rebuilt on every forward pass; nothing is mutated in place except
gradient buffers.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

LOG_FLOOR = 1e-12


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""

    def __init__(self, op: str, *shapes: tuple):
        self.op = op
        self.shapes = shapes
        joined = " and ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = op

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    # -- gradient plumbing ------------------------------------------------
    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Backpropagate from this scalar node.

        Gradients accumulate across calls; reset them with :meth:`zero_grad`
        (or an optimizer's ``zero_grad``) between steps.
        """
        if self.data.size != 1:
            raise ShapeError("backward (loss must be scalar)", self.shape)
        order = _topological_order(self)
        seed = np.ones_like(self.data)
        # interior nodes keep a transient buffer so repeated backward calls only
        # accumulate into leaves
        pending: dict[int, np.ndarray] = {id(self): seed}
        for node in order:
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in node._backward(g):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str, backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=tuple(parents) if needs else (), op=op)
    if needs:
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# -- binary elementwise ----------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def backward(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return _make(a.data + b.data, (a, b), "add", backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def backward(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape)))

    return _make(a.data - b.data, (a, b), "sub", backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        return (
            (a, _unbroadcast(g * b.data, a.shape) if a.requires_grad else None),
            (b, _unbroadcast(g * a.data, b.shape) if b.requires_grad else None),
        )

    return _make(a.data * b.data, (a, b), "mul", backward)


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("minimum", a, b)
    pick_a = a.data <= b.data

    def backward(g):
        return ((a, _unbroadcast(g * pick_a, a.shape)), (b, _unbroadcast(g * ~pick_a, b.shape)))

    return _make(np.minimum(a.data, b.data), (a, b), "minimum", backward)


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("maximum", a, b)
    pick_a = a.data >= b.data

    def backward(g):
        return ((a, _unbroadcast(g * pick_a, a.shape)), (b, _unbroadcast(g * ~pick_a, b.shape)))

    return _make(np.maximum(a.data, b.data), (a, b), "maximum", backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def backward(g):
        return (
            (a, g @ b.data.T if a.requires_grad else None),
            (b, a.data.T @ g if b.requires_grad else None),
        )

    return _make(a.data @ b.data, (a, b), "matmul", backward)


def linear(x, w, b) -> Tensor:
    """Fused ``x @ w + b`` for a batch ``x`` of shape [n, k], ``w`` [k, m], ``b`` [m]."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError("linear", x.shape, w.shape, b.shape)

    def backward(g):
        return (
            (x, g @ w.data.T if x.requires_grad else None),
            (w, x.data.T @ g if w.requires_grad else None),
            (b, g.sum(axis=0) if b.requires_grad else None),
        )

    return _make(x.data @ w.data + b.data, (x, w, b), "linear", backward)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), "scale", lambda g: ((a, g * c),))


# -- reductions ------------------------------------------------------------
def sum_(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        return _make(np.asarray(a.data.sum()), (a,), "sum", lambda g: ((a, np.broadcast_to(g, a.shape)),))
    out = a.data.sum(axis=axis)

    def backward(g):
        return ((a, np.broadcast_to(np.expand_dims(g, axis), a.shape)),)

    return _make(out, (a,), "sum", backward)


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis), 1.0 / n)


def sqnorm(a) -> Tensor:
    """Squared L2 norm along the last axis."""
    a = as_tensor(a)
    return _make((a.data * a.data).sum(axis=-1), (a,), "sqnorm",
                 lambda g: ((a, 2.0 * a.data * g[..., None]),))


# -- unary elementwise -----------------------------------------------------
def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), "relu", lambda g: ((a, g * mask),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _make(y, (a,), "tanh", lambda g: ((a, g * (1.0 - y * y)),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid(a.data)
    return _make(y, (a,), "sigmoid", lambda g: ((a, g * y * (1.0 - y)),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _make(y, (a,), "exp", lambda g: ((a, g * y),))


def log(a) -> Tensor:
    """Natural log with the input floored at ``LOG_FLOOR``."""
    a = as_tensor(a)
    x = np.maximum(a.data, LOG_FLOOR)
    live = a.data >= LOG_FLOOR
    return _make(np.log(x), (a,), "log", lambda g: ((a, g * live / x),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), "square", lambda g: ((a, 2.0 * a.data * g),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    y = np.sqrt(a.data)
    return _make(y, (a,), "sqrt", lambda g: ((a, g * 0.5 / np.maximum(y, LOG_FLOOR)),))


def clip(a, lo: float | None, hi: float | None) -> Tensor:
    a = as_tensor(a)
    y = np.clip(a.data, lo, hi)
    inside = np.ones(a.shape, dtype=bool)
    if lo is not None:
        inside &= a.data >= lo
    if hi is not None:
        inside &= a.data <= hi
    return _make(y, (a,), "clip", lambda g: ((a, g * inside),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    y = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _make(y, (a,), "softplus", lambda g: ((a, g * _sigmoid(x)),))


def bce_with_logits(logits, targets) -> Tensor:
    """Elementwise Bernoulli negative log-likelihood of ``targets`` under ``sigmoid(logits)``.

    Computed as ``max(l, 0) - l*x + log1p(exp(-|l|))`` so saturated logits stay finite.
    """
    logits, targets = as_tensor(logits), as_tensor(targets)
    if logits.shape != targets.shape:
        raise ShapeError("bce_with_logits", logits.shape, targets.shape)
    l, x = logits.data, targets.data
    y = np.maximum(l, 0.0) - l * x + np.log1p(np.exp(-np.abs(l)))

    def backward(g):
        p = _sigmoid(l)
        return ((logits, g * (p - x)), (targets, -g * l if targets.requires_grad else None))

    return _make(y, (logits, targets), "bce_with_logits", backward)


# -- structural ------------------------------------------------------------
def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat: no inputs")
    ref = ts[0].shape
    for t in ts[1:]:
        if t.ndim != len(ref) or t.shape[:-1] != ref[:-1]:
            raise ShapeError("concat", ref, t.shape)
    if axis not in (-1, len(ref) - 1):
        raise ValueError("concat only supports the last axis")
    sizes = [t.shape[-1] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple((t, g[..., bounds[i]:bounds[i + 1]]) for i, t in enumerate(ts))

    return _make(np.concatenate([t.data for t in ts], axis=-1), ts, "concat", backward)


def slice_(a, index) -> Tensor:
    a = as_tensor(a)
    y = a.data[index]

    def backward(g):
        full = np.zeros(a.shape)
        if _is_fancy(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return ((a, full),)

    return _make(np.array(y, copy=True), (a,), "slice", backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), "reshape", lambda g: ((a, g.reshape(a.shape)),))


def _is_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64, copy=True), requires_grad=True)


class Adam:
    """Adam with bias correction. Moment estimates persist across ``step`` calls.

    Moments live in one flat vector spanning all parameters; a parameter whose
    gradient was never populated is treated as having zero gradient.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        sizes = [p.data.size for p in self.params]
        self._bounds = np.cumsum([0] + sizes)
        self.m = np.zeros(self._bounds[-1])
        self.v = np.zeros(self._bounds[-1])
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def _flat_grad(self) -> np.ndarray:
        parts = [np.zeros(p.data.size) if p.grad is None else p.grad.ravel() for p in self.params]
        return np.concatenate(parts)

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        g = self._flat_grad()
        self.m *= b1
        self.m += (1.0 - b1) * g
        self.v *= b2
        self.v += (1.0 - b2) * (g * g)
        step_size = self.lr * np.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        eps_hat = self.eps * np.sqrt(1.0 - b2 ** self.t)
        update = step_size * self.m / (np.sqrt(self.v) + eps_hat)
        for p, lo, hi in zip(self.params, self._bounds[:-1], self._bounds[1:]):
            p.data -= update[lo:hi].reshape(p.data.shape)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": self.m.copy(), "v": self.v.copy()}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m[...] = state["m"]
        self.v[...] = state["v"]


def adam_step(params: Sequence[Tensor], lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, state: Adam | None = None) -> Adam:
    """Functional form: one Adam update on ``params``; pass the returned state back in."""
    if state is None:
        state = Adam(params, lr, beta1, beta2, eps)
    state.lr = lr
    state.step()
    return state
