"""Dense 2-D reverse-mode autodiff on a tape, plus Adam and a gradient checker.

Every value is a 2-D float64 ``numpy`` array. Operations are methods on
:class:`Tensor`; each call appends a node to the owning :class:`Tape`, so the
tape is topologically ordered by construction and ``backward`` is a single
reverse sweep.

    tape = Tape()
    w = tape.param("w", np.ones((2, 2)))
    loss = w.relu().sum()
    grads = tape.backward(loss)   # {"w": array}
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

LOG_EPS = 1e-12


class ShapeError(ValueError):
    """Raised when operand shapes do not fit the operation."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {' and '.join(str(s) for s in shapes)}")


class NonFiniteError(FloatingPointError):
    def __init__(self, op: str):
        self.op = op
        super().__init__(f"{op}: produced non-finite values")


def as_matrix(x) -> np.ndarray:
    a = np.asarray(x)
    # extended precision passes through so the gradient checker can use it
    if a.dtype != np.longdouble:
        a = a.astype(np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise ValueError(f"expected at most 2 dimensions, got {a.ndim}")
    return a


@dataclass
class TapeNode:
    op: str
    inputs: tuple[int, ...]
    value: np.ndarray
    grad: np.ndarray | None = None
    # maps upstream gradient to one gradient per input
    backward: Callable[[np.ndarray], tuple] | None = field(default=None, repr=False)
    name: str | None = None
    learnable: bool = False


class Tensor:
    """Handle to one node on a tape."""

    __slots__ = ("tape", "id")

    def __init__(self, tape: Tape, node_id: int):
        self.tape = tape
        self.id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.id].value

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self):
        node = self.tape.nodes[self.id]
        return f"Tensor(op={node.op}, shape={self.shape})"

    def _lift(self, other) -> Tensor:
        if isinstance(other, Tensor):
            return other
        return self.tape.const(other)

    # -- binary ----------------------------------------------------------
    def matmul(self, other: Tensor) -> Tensor:
        other = self._lift(other)
        a, b = self.value, other.value
        if a.shape[1] != b.shape[0]:
            raise ShapeError("matmul", a.shape, b.shape)
        return self.tape._record(
            "matmul", (self, other), a @ b,
            lambda g: (g @ b.T, a.T @ g),
        )

    __matmul__ = matmul

    def add(self, other) -> Tensor:
        other = self._lift(other)
        if self.shape != other.shape:
            raise ShapeError("add", self.shape, other.shape)
        return self.tape._record("add", (self, other), self.value + other.value, lambda g: (g, g))

    __add__ = add

    def sub(self, other) -> Tensor:
        other = self._lift(other)
        if self.shape != other.shape:
            raise ShapeError("sub", self.shape, other.shape)
        return self.tape._record("sub", (self, other), self.value - other.value, lambda g: (g, -g))

    __sub__ = sub

    def mul(self, other) -> Tensor:
        """Elementwise product."""
        other = self._lift(other)
        a, b = self.value, other.value
        if a.shape != b.shape:
            raise ShapeError("mul", a.shape, b.shape)
        return self.tape._record("mul", (self, other), a * b, lambda g: (g * b, g * a))

    __mul__ = mul

    def sqdiff(self, other) -> Tensor:
        """Elementwise (self - other)**2."""
        other = self._lift(other)
        if self.shape != other.shape:
            raise ShapeError("sqdiff", self.shape, other.shape)
        d = self.value - other.value
        return self.tape._record("sqdiff", (self, other), d * d, lambda g: (2 * d * g, -2 * d * g))

    # -- unary -----------------------------------------------------------
    def scale(self, c: float) -> Tensor:
        c = float(c)
        return self.tape._record("scale", (self,), c * self.value, lambda g: (c * g,))

    def __neg__(self):
        return self.scale(-1.0)

    @property
    def T(self) -> Tensor:
        return self.tape._record("transpose", (self,), self.value.T.copy(), lambda g: (g.T,))

    def relu(self) -> Tensor:
        x = self.value
        # subgradient at 0 is 0
        mask = x > 0
        return self.tape._record("relu", (self,), np.where(mask, x, 0.0), lambda g: (g * mask,))

    def tanh(self) -> Tensor:
        y = np.tanh(self.value)
        return self.tape._record("tanh", (self,), y, lambda g: (g * (1 - y * y),))

    def sigmoid(self) -> Tensor:
        with np.errstate(over="ignore"):
            y = 1.0 / (1.0 + np.exp(-self.value))
        return self.tape._record("sigmoid", (self,), y, lambda g: (g * y * (1 - y),))

    def exp(self) -> Tensor:
        # overflow surfaces as NonFiniteError from _record
        with np.errstate(over="ignore"):
            y = np.exp(self.value)
        return self.tape._record("exp", (self,), y, lambda g: (g * y,))

    def log(self, eps: float = LOG_EPS) -> Tensor:
        """log(x + eps)."""
        x = self.value + eps
        return self.tape._record("log", (self,), np.log(x), lambda g: (g / x,))

    def sqrt(self) -> Tensor:
        y = np.sqrt(self.value)
        # derivative at 0 taken as 0 so a zero distance contributes no gradient
        safe = np.where(y > 0, y, 1.0)
        return self.tape._record("sqrt", (self,), y, lambda g: (np.where(y > 0, g / (2 * safe), 0.0),))

    def sum(self, axis: int | None = None) -> Tensor:
        x = self.value
        shape = x.shape
        if axis is None:
            out = np.array([[x.sum()]])
        elif axis in (0, 1):
            out = x.sum(axis=axis, keepdims=True)
        else:
            raise ValueError(f"sum: bad axis {axis}")
        return self.tape._record("sum", (self,), out, lambda g: (np.broadcast_to(g, shape).copy(),))

    def tile_rows(self, n: int) -> Tensor:
        """Repeat a 1 x d row into an n x d matrix."""
        if self.shape[0] != 1:
            raise ShapeError("tile_rows", self.shape, (n, self.shape[1]))
        out = np.repeat(self.value, n, axis=0)
        return self.tape._record("tile_rows", (self,), out, lambda g: (g.sum(axis=0, keepdims=True),))

    def row_softmax(self, mask: np.ndarray | None = None) -> Tensor:
        """Softmax along each row.

        With ``mask`` the softmax runs only over the ``True`` entries of each
        row and every other entry is exactly 0. Rows with no ``True`` entry are
        rejected.
        """
        x = self.value
        if mask is None:
            mask = np.ones(x.shape, dtype=bool)
        else:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != x.shape:
                raise ShapeError("row_softmax", x.shape, mask.shape)
            if not mask.any(axis=1).all():
                raise ValueError("row_softmax: a row has no unmasked entry")
        shifted = np.where(mask, x, -np.inf)
        shifted = shifted - shifted.max(axis=1, keepdims=True)
        e = np.where(mask, np.exp(shifted), 0.0)
        y = e / e.sum(axis=1, keepdims=True)

        def back(g):
            return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

        return self.tape._record("row_softmax", (self,), y, back)

    def dropout(self, rate: float, rng: np.random.Generator) -> Tensor:
        """Inverted dropout; the mask is a constant of the tape."""
        if rate <= 0.0:
            return self
        keep = (rng.random(self.shape) >= rate) / (1.0 - rate)
        return self.mul(self.tape.const(keep))


class Tape:
    """Records operations in execution order."""

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self.params: dict[str, int] = {}

    def _leaf(self, value, op: str, name=None, learnable=False) -> Tensor:
        v = as_matrix(value).copy()
        if not np.all(np.isfinite(v)):
            raise NonFiniteError(op)
        self.nodes.append(TapeNode(op, (), v, name=name, learnable=learnable))
        return Tensor(self, len(self.nodes) - 1)

    def const(self, value) -> Tensor:
        return self._leaf(value, "const")

    def param(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already on tape")
        t = self._leaf(value, "param", name=name, learnable=True)
        self.params[name] = t.id
        return t

    def _record(self, op, inputs, value, backward) -> Tensor:
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(op)
        self.nodes.append(TapeNode(op, tuple(t.id for t in inputs), value, backward=backward))
        return Tensor(self, len(self.nodes) - 1)

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Reverse sweep from a 1x1 ``loss``; returns gradients by parameter name."""
        if loss.tape is not self:
            raise ValueError("loss belongs to a different tape")
        if loss.shape != (1, 1):
            raise ShapeError("backward", loss.shape, (1, 1))
        for node in self.nodes:
            node.grad = None
        self.nodes[loss.id].grad = np.ones((1, 1))
        for i in range(loss.id, -1, -1):
            node = self.nodes[i]
            if node.grad is None or node.backward is None:
                continue
            for j, g in zip(node.inputs, node.backward(node.grad)):
                child = self.nodes[j]
                child.grad = g.copy() if child.grad is None else child.grad + g
        grads = {}
        for name, i in self.params.items():
            g = self.nodes[i].grad
            grads[name] = np.zeros_like(self.nodes[i].value) if g is None else g
        return grads


class Adam:
    """Bias-corrected Adam over a dict of named arrays, updated in place."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        missing = set(params) - set(grads)
        if missing:
            raise KeyError(f"missing gradients for {sorted(missing)}")
        extra = set(grads) - set(params)
        if extra:
            raise KeyError(f"gradients for unknown parameters {sorted(extra)}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k in params:
            g = grads[k]
            if g.shape != params[k].shape:
                raise ShapeError(f"adam[{k}]", params[k].shape, g.shape)
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            params[k] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def relative_error(g_ad: np.ndarray, g_fd: np.ndarray) -> np.ndarray:
    return np.abs(g_ad - g_fd) / np.maximum(1e-8, np.abs(g_ad) + np.abs(g_fd))


def finite_difference_check(
    forward: Callable[[dict[str, np.ndarray]], Tensor],
    params: dict[str, np.ndarray],
    h: float = 1e-5,
    extended: bool = True,
) -> tuple[float, dict[str, float]]:
    """Compare autodiff gradients against central differences.

    ``forward(params)`` builds a fresh tape, registers ``params`` on it and
    returns the 1x1 loss tensor. It must be deterministic (dropout off).
    Autodiff runs in float64; with ``extended`` the perturbed evaluations run
    in ``np.longdouble`` so cancellation in ``up - down`` does not swamp small
    gradients. Returns the overall max relative error and the max per
    parameter name.
    """
    loss = forward(params)
    grads = loss.tape.backward(loss)
    if extended:
        params = {k: v.astype(np.longdouble) for k, v in params.items()}
    per_param = {}
    for name, p in params.items():
        fd = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = forward(params).value[0, 0]
            p[idx] = orig - h
            down = forward(params).value[0, 0]
            p[idx] = orig
            fd[idx] = (up - down) / (2 * h)
        per_param[name] = float(relative_error(grads[name], fd.astype(np.float64)).max()) if p.size else 0.0
    worst = max(per_param.values(), default=0.0)
    return worst, per_param
