"""Reverse-mode automatic differentiation over fp64 numpy arrays.

A :class:`Tape` records every primitive applied to tensors that require a
gradient while the tape is active.  :meth:`Tape.gradient` then walks the
record backwards exactly once.  Complex quantities are handled by
:class:`ComplexPair`, which composes the real primitives below, so the tape
itself needs no complex-aware rules.

Example
-------
>>> x = Tensor(3.0, requires_grad=True)
>>> with Tape() as tape:
...     y = x * x
>>> tape.gradient(y, [x])[0]
array(6.)
"""

from __future__ import annotations

import threading
from typing import Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError, SingularMatrixError

__all__ = [
    "Tensor", "Tape", "ComplexPair", "active_tape",
    "add", "sub", "mul", "div", "neg", "matmul", "sum", "reshape",
    "transpose", "swapaxes", "concat", "broadcast_to", "getitem",
    "relu", "tanh", "sigmoid", "exp", "log", "sqrt", "square", "minimum",
    "solve", "as_tensor",
]

_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape() -> "Tape | None":
    """Innermost tape active on this thread, if any."""
    s = _stack()
    return s[-1] if s else None


class Tensor:
    """Real fp64 array, optionally tracked by the active tape."""

    __slots__ = ("values", "requires_grad", "node_id", "__weakref__")
    __array_priority__ = 100

    def __init__(self, values, requires_grad: bool = False):
        arr = np.array(values, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError("non-finite value in tensor")
        self.values = arr
        self.requires_grad = requires_grad
        self.node_id: int | None = None

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values.item())

    def numpy(self) -> np.ndarray:
        return self.values

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.values!r}{flag})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)


class Tape:
    """Ordered record of primitive operations.

    Use as a context manager; tapes nest per thread.  Each record holds the
    output tensor, its parent tensors and one vector-Jacobian product per
    parent (``None`` for parents that need no gradient).
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], tuple]] = []
        self._used = False

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        s = _stack()
        if not s or s[-1] is not self:
            raise RuntimeError("tape stack corrupted")
        s.pop()
        return False

    def __len__(self):
        return len(self.records)

    def record(self, out: Tensor, parents: tuple, vjps: tuple) -> None:
        out.node_id = len(self.records)
        self.records.append((out, parents, vjps))

    def gradient(self, loss: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of scalar ``loss`` with respect to each of ``sources``.

        Sources the loss does not depend on get an exact zero array.
        """
        if loss.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.shape}")
        if self._used:
            raise ContractError("tape already consumed by a backward pass")
        self._used = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
        for out, parents, vjps in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for parent, vjp in zip(parents, vjps):
                if vjp is None:
                    continue
                pg = vjp(g)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        return [
            np.array(grads[id(s)]) if id(s) in grads else np.zeros_like(s.values)
            for s in sources
        ]


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _make(values: np.ndarray, parents: tuple, vjps: tuple) -> Tensor:
    """Wrap ``values`` and record it if some parent needs a gradient."""
    if not np.all(np.isfinite(values)):
        raise NumericError("non-finite value produced on the tape")
    out = Tensor.__new__(Tensor)
    out.values = values
    out.node_id = None
    tape = active_tape()
    needs = tuple(p.requires_grad for p in parents)
    out.requires_grad = tape is not None and any(needs)
    if out.requires_grad:
        tape.record(out, parents, tuple(v if n else None for v, n in zip(vjps, needs)))
    return out


def _binary_shape(a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot combine shapes {a.shape} and {b.shape}") from exc


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a, b)
    return _make(a.values + b.values, (a, b),
                 (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a, b)
    return _make(a.values - b.values, (a, b),
                 (lambda g: _unbroadcast(g, a.shape), lambda g: -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a, b)
    av, bv = a.values, b.values
    return _make(av * bv, (a, b),
                 (lambda g: _unbroadcast(g * bv, a.shape), lambda g: _unbroadcast(g * av, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a, b)
    av, bv = a.values, b.values
    out = av / bv
    return _make(out, (a, b),
                 (lambda g: _unbroadcast(g / bv, a.shape),
                  lambda g: _unbroadcast(-g * out / bv, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.values, (a,), (lambda g: -g,))


def square(a) -> Tensor:
    a = as_tensor(a)
    av = a.values
    return _make(av * av, (a,), (lambda g: 2.0 * g * av,))


def matmul(a, b) -> Tensor:
    """Batched matrix product; both operands must be at least 2-D."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not chain")
    av, bv = a.values, b.values
    return _make(av @ bv, (a, b),
                 (lambda g: _unbroadcast(g @ np.swapaxes(bv, -1, -2), a.shape),
                  lambda g: _unbroadcast(np.swapaxes(av, -1, -2) @ g, b.shape)))


# ------------------------------------------------------------------ structure

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return _make(np.sum(a.values, axis=axis, keepdims=keepdims), (a,), (vjp,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.values.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    return _make(out, (a,), (lambda g: g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = np.argsort(axes)
    return _make(np.transpose(a.values, axes), (a,), (lambda g: np.transpose(g, inv),))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return _make(np.swapaxes(a.values, ax1, ax2), (a,), (lambda g: np.swapaxes(g, ax1, ax2),))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = np.broadcast_to(a.values, shape).copy()
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    return _make(out, (a,), (lambda g: _unbroadcast(g, old),))


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    try:
        out = np.concatenate([p.values for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])
    vjps = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        def vjp(g, lo=lo, hi=hi):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return g[tuple(sl)]
        vjps.append(vjp)
    return _make(out, tuple(parts), tuple(vjps))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return full

    return _make(np.array(a.values[idx]), (a,), (vjp,))


# ---------------------------------------------------------------- elementwise

def relu(a) -> Tensor:
    """ReLU; the subgradient at exactly zero is taken as 0."""
    a = as_tensor(a)
    mask = a.values > 0.0
    return _make(np.where(mask, a.values, 0.0), (a,), (lambda g: g * mask,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.values)
    return _make(out, (a,), (lambda g: g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.values
    # split by sign so exp never overflows
    ex = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex))
    return _make(out, (a,), (lambda g: g * out * (1.0 - out),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.values)
    return _make(out, (a,), (lambda g: g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    av = a.values
    if np.any(av <= 0):
        raise NumericError("log of a non-positive value")
    return _make(np.log(av), (a,), (lambda g: g / av,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.values < 0):
        raise NumericError("sqrt of a negative value")
    out = np.sqrt(a.values)

    def vjp(g):
        if np.any(out == 0):
            raise NumericError("sqrt is not differentiable at 0")
        return g * 0.5 / out

    return _make(out, (a,), (vjp,))


def minimum(a, axis: int = -1) -> Tensor:
    """Minimum along ``axis``; the gradient goes to the first argmin."""
    a = as_tensor(a)
    idx = np.argmin(a.values, axis=axis)
    out = np.take_along_axis(a.values, np.expand_dims(idx, axis), axis=axis)
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return full

    return _make(np.squeeze(out, axis=axis), (a,), (vjp,))


# --------------------------------------------------------------------- solve

def _spd_solve(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("matrix is not positive definite") from exc
    Y = np.linalg.solve(L, B)
    return np.linalg.solve(np.swapaxes(L, -1, -2), Y)


def solve(A, B) -> Tensor:
    """``A^{-1} B`` for (batched) symmetric positive-definite ``A``.

    Differentiated with the linear-solve adjoint: ``gB = A^{-T} g`` and
    ``gA = -gB X^T``; no explicit inverse is formed.
    """
    A, B = as_tensor(A), as_tensor(B)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2] or B.ndim < 2 or B.shape[-2] != A.shape[-1]:
        raise ShapeError(f"solve shapes {A.shape} and {B.shape} do not conform")
    Av = A.values
    X = _spd_solve(Av, B.values)
    cache: dict = {}

    def gB(g):
        if "gb" not in cache:
            cache["gb"] = _spd_solve(np.swapaxes(Av, -1, -2), g)
        return cache["gb"]

    def vjp_A(g):
        return _unbroadcast(-gB(g) @ np.swapaxes(X, -1, -2), A.shape)

    def vjp_B(g):
        return _unbroadcast(gB(g), B.shape)

    return _make(X, (A, B), (vjp_A, vjp_B))


# ------------------------------------------------------------- complex pairs

class ComplexPair:
    """Complex array held as two real tensors ``re`` and ``im``."""

    __slots__ = ("re", "im")

    def __init__(self, re, im):
        self.re = as_tensor(re)
        self.im = as_tensor(im)
        if self.re.shape != self.im.shape:
            raise ShapeError(f"real/imag shapes differ: {self.re.shape} vs {self.im.shape}")

    @classmethod
    def from_complex(cls, z, requires_grad: bool = False) -> "ComplexPair":
        z = np.asarray(z, dtype=np.complex128)
        return cls(Tensor(z.real, requires_grad), Tensor(z.imag, requires_grad))

    @property
    def shape(self) -> tuple:
        return self.re.shape

    def numpy(self) -> np.ndarray:
        return self.re.values + 1j * self.im.values

    def conj(self) -> "ComplexPair":
        return ComplexPair(self.re, neg(self.im))

    def __add__(self, o: "ComplexPair") -> "ComplexPair":
        return ComplexPair(self.re + o.re, self.im + o.im)

    def __sub__(self, o: "ComplexPair") -> "ComplexPair":
        return ComplexPair(self.re - o.re, self.im - o.im)

    def __mul__(self, o) -> "ComplexPair":
        if isinstance(o, ComplexPair):
            return ComplexPair(self.re * o.re - self.im * o.im,
                               self.re * o.im + self.im * o.re)
        return ComplexPair(self.re * o, self.im * o)

    __rmul__ = __mul__

    def __matmul__(self, o: "ComplexPair") -> "ComplexPair":
        return ComplexPair(self.re @ o.re - self.im @ o.im,
                           self.re @ o.im + self.im @ o.re)

    def abs2(self) -> Tensor:
        return square(self.re) + square(self.im)

    def swapaxes(self, a1: int, a2: int) -> "ComplexPair":
        return ComplexPair(swapaxes(self.re, a1, a2), swapaxes(self.im, a1, a2))

    def herm(self) -> "ComplexPair":
        """Conjugate transpose over the last two axes."""
        return ComplexPair(swapaxes(self.re, -1, -2), neg(swapaxes(self.im, -1, -2)))
