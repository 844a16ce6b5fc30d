"""Minimal dense-tensor reverse-mode autodiff on float64 numpy arrays.

Everything here is CPU-only and 64-bit.  A fresh tape is built implicitly by
every forward pass (each Var keeps references to its parents and a closure
that pushes gradient back to them); calling backward() on a scalar Var
topologically sorts the graph and accumulates gradients.  Vars are treated
as immutable after construction.
"""

from __future__ import annotations

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(ValueError):
    """Raised when an operation's precondition is violated."""


def _as_array(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    # sum out prepended axes
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    # sum over axes that were broadcast from size 1
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Var:
    """A node in the reverse-mode graph: value, accumulated gradient, parents."""

    __slots__ = ("value", "grad", "_parents", "_backward", "requires_grad")

    def __init__(self, value, parents=(), backward=None, requires_grad=True):
        self.value = _as_array(value)
        self.grad = None
        self._parents = tuple(parents)
        self._backward = backward
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    # ------------------------------------------------------------------
    # graph traversal

    def backward(self):
        if self.value.size != 1:
            raise ContractError(
                "backward() requires a scalar loss, got shape %r" % (self.shape,)
            )
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # ------------------------------------------------------------------
    # operators

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def _accum(v: Var, g: np.ndarray):
    """Lazily accumulate a gradient contribution into `v.grad`.

    Grads start as None after backward() resets the tape; the first
    contribution is copied (it may alias another node's grad buffer), later
    ones are added in place.  Avoids zero-filling every node up front.
    """
    if v.grad is None:
        v.grad = np.array(g, dtype=np.float64)
    else:
        v.grad += g


def _lift(x) -> Var:
    if isinstance(x, Var):
        return x
    return Var(x, requires_grad=False)


def constant(x) -> Var:
    return Var(x, requires_grad=False)


# ----------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    out_val = a.value + b.value

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.value.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.value.shape))

    return Var(out_val, (a, b), bwd)


def sub(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    out_val = a.value - b.value

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.value.shape))
        if b.requires_grad:
            _accum(b, -(_unbroadcast(g, b.value.shape)))

    return Var(out_val, (a, b), bwd)


def mul(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    out_val = a.value * b.value

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.value, a.value.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.value, b.value.shape))

    return Var(out_val, (a, b), bwd)


def div(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    out_val = a.value / b.value

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.value, a.value.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))

    return Var(out_val, (a, b), bwd)


def sqrt(a) -> Var:
    a = _lift(a)
    out_val = np.sqrt(a.value)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * (0.5 / out_val))

    return Var(out_val, (a,), bwd)


def tanh(a) -> Var:
    a = _lift(a)
    out_val = np.tanh(a.value)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * (1.0 - out_val * out_val))

    return Var(out_val, (a,), bwd)


def relu(a) -> Var:
    a = _lift(a)
    out_val = np.maximum(a.value, 0.0)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * (a.value > 0.0))

    return Var(out_val, (a,), bwd)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Var:
    """tanh-approximation GELU; smooth gate for the transformer feed-forward."""
    a = _lift(a)
    x = a.value
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out_val = 0.5 * x * (1.0 + t)

    def bwd(g):
        if a.requires_grad:
            dinner = _GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
            da = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
            _accum(a, g * da)

    return Var(out_val, (a,), bwd)


# ----------------------------------------------------------------------
# linear algebra / reductions


def matmul(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    if a.value.ndim < 1 or b.value.ndim < 1:
        raise DimensionError("matmul requires at least 1-D operands")
    if a.value.shape[-1] != b.value.shape[-2 if b.value.ndim > 1 else 0]:
        raise DimensionError(
            "matmul inner dimensions disagree: %r x %r"
            % (a.value.shape, b.value.shape)
        )
    out_val = a.value @ b.value

    def bwd(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.value, -1, -2)
            _accum(a, _unbroadcast(ga, a.value.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.value, -1, -2) @ g
            _accum(b, _unbroadcast(gb, b.value.shape))

    return Var(out_val, (a, b), bwd)


def vsum(a, axis=None, keepdims=False) -> Var:
    a = _lift(a)
    out_val = a.value.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if not a.requires_grad:
            return
        if axis is None:
            _accum(a, np.broadcast_to(g, a.value.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg, a.value.shape))

    return Var(out_val, (a,), bwd)


def vmean(a, axis=None, keepdims=False) -> Var:
    a = _lift(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(vsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(a, axis=-1) -> Var:
    """Numerically stable softmax; tolerates -inf entries (causal mask)."""
    a = _lift(a)
    x = a.value
    m = np.max(x, axis=axis, keepdims=True)
    # a fully finite max is required; -inf rows would produce NaN
    e = np.exp(x - m)
    z = e.sum(axis=axis, keepdims=True)
    out_val = e / z

    def bwd(g):
        if a.requires_grad:
            dot = (g * out_val).sum(axis=axis, keepdims=True)
            _accum(a, out_val * (g - dot))

    return Var(out_val, (a,), bwd)


def transpose(a, axes) -> Var:
    a = _lift(a)
    out_val = np.transpose(a.value, axes)
    inv = np.argsort(axes)

    def bwd(g):
        if a.requires_grad:
            _accum(a, np.transpose(g, inv))

    return Var(out_val, (a,), bwd)


def reshape(a, shape) -> Var:
    a = _lift(a)
    out_val = a.value.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g.reshape(a.value.shape))

    return Var(out_val, (a,), bwd)


def getitem(a, idx) -> Var:
    a = _lift(a)
    out_val = a.value[idx]

    def bwd(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.value)
            np.add.at(a.grad, idx, g)

    return Var(out_val, (a,), bwd)


def concat(vars_, axis=0) -> Var:
    vars_ = [_lift(v) for v in vars_]
    out_val = np.concatenate([v.value for v in vars_], axis=axis)
    sizes = [v.value.shape[axis] for v in vars_]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for v, lo, hi in zip(vars_, offsets[:-1], offsets[1:]):
            if v.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _accum(v, g[tuple(sl)])

    return Var(out_val, tuple(vars_), bwd)


def assert_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise ContractError("non-finite values in %s" % what)
    return x


# ----------------------------------------------------------------------
# deterministic RNG and parameter initialization


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Deterministic generator; sub-streams are keyed, not sequential."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(stream))))


def init_linear(fan_in: int, fan_out: int, rng: np.random.Generator):
    """Weight (fan_in, fan_out) and bias, uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = rng.uniform(-bound, bound, size=(fan_out,))
    return Var(w), Var(b)


def zero_grads(params):
    for p in params:
        p.grad = np.zeros_like(p.value)


# ----------------------------------------------------------------------
# optimizer


class Adam:
    """Standard Adam with bias correction; state arrays parallel the params."""

    def __init__(self, params, learning_rate=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if g.shape != p.value.shape:
                raise DimensionError("gradient/parameter shape mismatch")
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * (g * g)
            mhat = self.m[i] / (1.0 - b1**self.t)
            vhat = self.v[i] / (1.0 - b2**self.t)
            p.value = p.value - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
