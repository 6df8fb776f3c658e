"""A small array-level reverse-mode differentiation tape.

Operations executed inside ``with Tape() as tape:`` are appended to the tape
in execution order; :func:`backward` walks the records in reverse once and
returns the gradient of a scalar with respect to every named leaf.

The quantum layer enters the tape as an ordinary node whose local partials
are the parameter-shift Jacobians, so hybrid models need no special casing.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

_ACTIVE: list["Tape"] = []


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=float)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        g = np.asarray(g, dtype=float)
        if g.shape != self.data.shape:
            raise TapeError(f"gradient shape {g.shape} does not match tensor shape {self.data.shape}")
        self.grad = g.copy() if self.grad is None else self.grad + g


class Tape:
    def __init__(self):
        self.records: list[Tensor] = []
        self.leaves: list[Tensor] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def leaf(self, data, name: str | None = None, requires_grad: bool = True) -> Tensor:
        t = Tensor(data, requires_grad=requires_grad, name=name)
        t._tape = self
        self.leaves.append(t)
        return t

    def params(self, arrays: dict[str, np.ndarray]) -> dict[str, Tensor]:
        return {k: self.leaf(v, name=k) for k, v in arrays.items()}


def _current() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def record(data, parents: Sequence[Tensor], backward_fn: Callable[[np.ndarray], None] | None) -> Tensor:
    """Create the output node of an operation and register it on the tape."""
    out = Tensor(data)
    tape = _current()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._tape = tape
        tape.records.append(out)
    return out


def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Reverse pass from a scalar ``loss``; returns gradients of named leaves.

    Leaves that the loss does not depend on get zero gradients.
    """
    if tape.consumed:
        raise TapeError("this tape was already differentiated; rebuild the forward pass")
    if loss.data.size != 1:
        raise TapeError(f"loss must be scalar, got shape {loss.shape}")
    tape.consumed = True
    for leaf in tape.leaves:
        leaf.grad = None
    if loss.requires_grad:
        if loss._tape is not tape:
            raise TapeError("loss was not recorded on this tape")
        for node in tape.records:
            node.grad = None
        position = {id(node): i for i, node in enumerate(tape.records)}
        for i, node in enumerate(tape.records):
            for p in node._parents:
                if id(p) in position and position[id(p)] >= i:
                    raise TapeError("tape records are not in topological order")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(tape.records):
            if node.grad is None:
                continue
            if node._backward is None:
                raise TapeError(f"node {node!r} has no local Jacobian")
            node._backward(node.grad)
    return {
        leaf.name: (np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad)
        for leaf in tape.leaves if leaf.name is not None
    }


# -- operations -------------------------------------------------------------

def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))
    return record(a.data + b.data, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    return record(a.data * c, (a,), lambda g: a._accumulate(g * c))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x``."""
    out = x.data @ w.data
    if b is not None:
        out = out + b.data

    def bw(g):
        x._accumulate(g @ w.data.T)
        xs = x.data.reshape(-1, x.shape[-1])
        gs = g.reshape(-1, g.shape[-1])
        w._accumulate(xs.T @ gs)
        if b is not None:
            b._accumulate(gs.sum(axis=0))
    return record(out, (x, w) if b is None else (x, w, b), bw)


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    mask = x.data > 0
    return record(np.where(mask, x.data, slope * x.data), (x,),
                  lambda g: x._accumulate(np.where(mask, g, slope * g)))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    return record(x.data.reshape(shape), (x,), lambda g: x._accumulate(g.reshape(x.shape)))


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))
    return record(np.transpose(x.data, axes), (x,), lambda g: x._accumulate(np.transpose(g, inverse)))


def total(x: Tensor) -> Tensor:
    return record(np.asarray(x.data.sum()), (x,), lambda g: x._accumulate(np.full(x.shape, float(g))))


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """Same-padded 2-d convolution on channels-last input.

    ``x``: (B, H, W, Cin); ``w``: (k, k, Cin, Cout); ``b``: (Cout,).
    """
    k = w.shape[0]
    if w.shape[1] != k or w.shape[2] != x.shape[-1]:
        raise ValueError(f"kernel {w.shape} incompatible with input {x.shape}")
    pad = k // 2
    B, H, Wd, _ = x.shape
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (Wd + 2 * pad - k) // stride + 1

    def window(arr, di, dj):
        return arr[:, di:di + stride * (Ho - 1) + 1:stride, dj:dj + stride * (Wo - 1) + 1:stride, :]

    out = np.zeros((B, Ho, Wo, w.shape[3]))
    for di in range(k):
        for dj in range(k):
            out += window(xp, di, dj) @ w.data[di, dj]
    out += b.data

    def bw(g):
        gw = np.zeros_like(w.data)
        gxp = np.zeros_like(xp) if x.requires_grad else None
        g2 = g.reshape(-1, g.shape[-1])
        for di in range(k):
            for dj in range(k):
                win = window(xp, di, dj)
                gw[di, dj] = win.reshape(-1, win.shape[-1]).T @ g2
                if gxp is not None:
                    window(gxp, di, dj)[...] += g @ w.data[di, dj].T
        w._accumulate(gw)
        b._accumulate(g2.sum(axis=0))
        if gxp is not None:
            x._accumulate(gxp[:, pad:pad + H, pad:pad + Wd, :])
    return record(out, (x, w, b), bw)


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pooling, stride 2, channels-last."""
    B, H, Wd, C = x.shape
    if H % 2 or Wd % 2:
        raise ValueError(f"avg_pool2 needs even spatial dims, got {x.shape}")
    out = x.data.reshape(B, H // 2, 2, Wd // 2, 2, C).mean(axis=(2, 4))

    def bw(g):
        x._accumulate(np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) / 4.0)
    return record(out, (x,), bw)


def custom(data, parents: Sequence[Tensor], vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    """Node whose vector-Jacobian product is supplied by the caller.

    ``vjp(g)`` returns one gradient (or None) per parent.
    """
    if vjp is None:
        raise TapeError("custom node needs a vector-Jacobian product")

    def bw(g):
        grads = vjp(g)
        if grads is None or len(grads) != len(parents):
            raise TapeError("custom vjp must return one entry per parent")
        for p, gp in zip(parents, grads):
            if gp is not None:
                p._accumulate(gp)
    return record(data, parents, bw)
