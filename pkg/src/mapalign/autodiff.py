"""Reverse-mode differentiation over dense 2-D float64 tensors.

Small on purpose: exactly the operations the matching pipeline composes
(message passing, similarity fusion, log-domain Sinkhorn, Frobenius losses),
recorded on an explicit tape and replayed in reverse.  A tape is
single-threaded; independent tapes may run concurrently with their own
parameter copies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised on operand shape mismatches."""


class Tensor:
    """Dense 2-D float64 value, optionally carrying a gradient."""

    __slots__ = ("values", "requires_grad", "grad")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got ndim={arr.ndim}")
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.values[0, 0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def tensor(values, requires_grad: bool = False) -> Tensor:
    return Tensor(values, requires_grad=requires_grad)


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


# -- tape ---------------------------------------------------------------------

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class _Recorded:
    name: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


@dataclass
class Tape:
    """Ordered record of operations; inputs always precede their outputs."""

    entries: list[_Recorded] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def backward(self, loss: Tensor, params: Iterable[Tensor] = ()) -> None:
        """Populate .grad on every requires_grad tensor reachable from `loss`;
        disconnected `params` get zero gradients.  Clears the tape."""
        if loss.values.shape != (1, 1):
            raise ShapeError(f"backward() expects a 1x1 loss, got {loss.values.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
        holders: dict[int, Tensor] = {id(loss): loss}
        for entry in reversed(self.entries):
            g_out = grads.pop(id(entry.output), None)
            if g_out is None:
                continue
            in_grads = entry.backward(g_out)
            for tin, gin in zip(entry.inputs, in_grads):
                if gin is None or not tin.requires_grad:
                    continue
                if gin.shape != tin.values.shape:
                    raise ShapeError(
                        f"{entry.name}: backward produced shape {gin.shape} for input of shape {tin.values.shape}"
                    )
                key = id(tin)
                holders[key] = tin
                if key in grads:
                    grads[key] = grads[key] + gin
                else:
                    grads[key] = gin
        for key, t in holders.items():
            if t.requires_grad and key in grads:
                t.grad = grads[key]
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.values)
        self.entries.clear()


_TAPE_STACK: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _emit(name: str, inputs: tuple[Tensor, ...], out_values: np.ndarray, backward: BackwardFn) -> Tensor:
    tape = _active_tape()
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(out_values, requires_grad=needs and tape is not None)
    if out.requires_grad:
        tape.entries.append(_Recorded(name, inputs, out, backward))  # type: ignore[union-attr]
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    out = grad
    if shape[0] == 1 and out.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and out.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    if out.shape != shape:
        raise ShapeError(f"cannot reduce gradient of shape {grad.shape} to {shape}")
    return out


def _check_broadcast(a: Tensor, b: Tensor, name: str) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast")


# -- elementwise and linear ops -------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    return _emit(
        "add", (a, b), a.values + b.values,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    return _emit(
        "sub", (a, b), a.values - b.values,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product with broadcasting (1x1 against anything covers scalars)."""
    _check_broadcast(a, b, "mul")
    return _emit(
        "mul", (a, b), a.values * b.values,
        lambda g: (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "div")
    return _emit(
        "div", (a, b), a.values / b.values,
        lambda g: (
            _unbroadcast(g / b.values, a.shape),
            _unbroadcast(-g * a.values / (b.values * b.values), b.shape),
        ),
    )


def smul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit("smul", (a,), a.values * c, lambda g: (g * c,))


def neg(a: Tensor) -> Tensor:
    return _emit("neg", (a,), -a.values, lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ ({a.shape} @ {b.shape})")
    return _emit(
        "matmul", (a, b), a.values @ b.values,
        lambda g: (g @ b.values.T, a.values.T @ g),
    )


def transpose(a: Tensor) -> Tensor:
    return _emit("transpose", (a,), a.values.T.copy(), lambda g: (g.T.copy(),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.values)
    return _emit("exp", (a,), out, lambda g: (g * out,))


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0.0
    return _emit("relu", (a,), np.where(mask, a.values, 0.0), lambda g: (g * mask,))


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ez = np.exp(x[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid_values(a.values)
    return _emit("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def softplus(a: Tensor) -> Tensor:
    out = np.maximum(a.values, 0.0) + np.log1p(np.exp(-np.abs(a.values)))
    return _emit("softplus", (a,), out, lambda g: (g * _sigmoid_values(a.values),))


def clip_max(a: Tensor, hi: float) -> Tensor:
    """Elementwise min(a, hi); the gradient vanishes on clipped entries."""
    mask = a.values < hi
    return _emit("clip_max", (a,), np.minimum(a.values, hi), lambda g: (g * mask,))


def logsumexp(a: Tensor, axis: int) -> Tensor:
    """Log-sum-exp along `axis`, keeping the reduced dimension; the backward
    pass recovers the softmax from the stored output instead of materialising
    it on the forward pass."""
    if axis not in (0, 1):
        raise ShapeError(f"logsumexp: axis must be 0 or 1, got {axis}")
    m = np.max(a.values, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(a.values - m), axis=axis, keepdims=True))
    return _emit("logsumexp", (a,), out, lambda g: (g * np.exp(a.values - out),))


def log_normalize(a: Tensor, axis: int) -> Tensor:
    """a - logsumexp(a, axis): one Sinkhorn half-step in the log domain."""
    if axis not in (0, 1):
        raise ShapeError(f"log_normalize: axis must be 0 or 1, got {axis}")
    m = np.max(a.values, axis=axis, keepdims=True)
    lse = m + np.log(np.sum(np.exp(a.values - m), axis=axis, keepdims=True))
    out = a.values - lse

    def backward(g: np.ndarray):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _emit("log_normalize", (a,), out, backward)


def frobenius_norm(a: Tensor) -> Tensor:
    norm = float(np.sqrt(np.sum(a.values * a.values)))
    out = np.array([[norm]])

    def backward(g: np.ndarray):
        if norm == 0.0:
            return (np.zeros_like(a.values),)  # subgradient at the origin
        return (g[0, 0] * a.values / norm,)

    return _emit("frobenius_norm", (a,), out, backward)


def reshape(a: Tensor, rows: int, cols: int) -> Tensor:
    if rows * cols != a.values.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as ({rows}, {cols})")
    return _emit(
        "reshape", (a,), a.values.reshape(rows, cols).copy(),
        lambda g: (g.reshape(a.shape).copy(),),
    )


def crop(a: Tensor, rows: int, cols: int) -> Tensor:
    """Top-left block; the backward pass zero-pads back to the input shape."""
    if rows > a.shape[0] or cols > a.shape[1]:
        raise ShapeError(f"crop: block ({rows}, {cols}) exceeds {a.shape}")

    def backward(g: np.ndarray):
        full = np.zeros_like(a.values)
        full[:rows, :cols] = g
        return (full,)

    return _emit("crop", (a,), a.values[:rows, :cols].copy(), backward)


def pad_constant(a: Tensor, rows: int, cols: int, fill: float) -> Tensor:
    """Expand to (rows, cols) with a constant fill; no gradient flows into the fill."""
    if rows < a.shape[0] or cols < a.shape[1]:
        raise ShapeError(f"pad_constant: target ({rows}, {cols}) smaller than {a.shape}")
    out = np.full((rows, cols), float(fill))
    out[: a.shape[0], : a.shape[1]] = a.values
    r, c = a.shape
    return _emit("pad_constant", (a,), out, lambda g: (g[:r, :c].copy(),))


def scatter_edges(gates: Tensor, index_u: np.ndarray, index_v: np.ndarray, n: int) -> Tensor:
    """Symmetric n x n matrix with gates[e] at (u_e, v_e) and (v_e, u_e).

    Endpoint index pairs must be distinct (no self-loops) and unique per edge.
    """
    if gates.shape[1] != 1 or gates.shape[0] != len(index_u) or len(index_u) != len(index_v):
        raise ShapeError("scatter_edges: gates must be m x 1 aligned with the index arrays")
    out = np.zeros((n, n))
    flat = gates.values[:, 0]
    out[index_u, index_v] = flat
    out[index_v, index_u] = flat

    def backward(g: np.ndarray):
        return ((g[index_u, index_v] + g[index_v, index_u]).reshape(-1, 1),)

    return _emit("scatter_edges", (gates,), out, backward)


# -- optimiser ------------------------------------------------------------------


class Adam:
    """Adam with bias correction; state lives alongside the parameter list."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 0.001,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.values)
            if g.shape != p.values.shape:
                raise ShapeError(f"adam: gradient shape {g.shape} != parameter shape {p.values.shape}")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / (1.0 - self.beta1**t)
            v_hat = self.v[i] / (1.0 - self.beta2**t)
            p.values = p.values - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
