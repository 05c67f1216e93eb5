"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation appends a node to the implicit tape by stamping
its output with a monotonically increasing sequence number.  ``backward``
collects the nodes reachable from the loss, replays them in reverse sequence
order (a valid reverse topological order, since inputs always carry smaller
numbers than the outputs built from them) and accumulates ``+=`` into the
``grad`` slot of every reachable leaf that requires a gradient.

Broadcasting is limited to scalar-with-tensor and equal shapes.  Explicit
``expand`` and ``add_bias`` cover the remaining cases the model needs.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError, DomainError

_sequence = itertools.count()
_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation passes)."""
    previous = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


class _Node:
    __slots__ = ("seq", "inputs", "backward", "op")

    def __init__(self, inputs, backward, op):
        self.seq = next(_sequence)
        self.inputs = inputs
        self.backward = backward
        self.op = op


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "retains_grad", "_node")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.retains_grad = False
        self._node: _Node | None = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad = np.zeros_like(self.data)

    def retain_grad(self):
        """Also populate ``grad`` on this non-leaf tensor during backward."""
        self.retains_grad = True
        return self

    def backward(self):
        backward(self)

    # arithmetic sugar
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return pow_p(self, p)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def tanh(self):
        return tanh(self)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _emit(data, inputs: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    out = Tensor(data)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = _Node(tuple(inputs), backward_fn, op)
    return out


class Tape:
    """Ordered record of the operations that produced a tensor.

    ``entries`` lists the non-leaf tensors reachable from the output, sorted
    by recording order; ``leaves`` lists the reachable leaves that require a
    gradient, in discovery order.
    """

    def __init__(self, entries: list[Tensor], leaves: list[Tensor]):
        self.entries = entries
        self.leaves = leaves

    def __len__(self):
        return len(self.entries)

    @classmethod
    def trace(cls, output: Tensor) -> "Tape":
        seen = {id(output)}
        stack = [output]
        entries, leaves = [], []
        while stack:
            t = stack.pop()
            if t._node is None:
                if t.requires_grad:
                    leaves.append(t)
                continue
            entries.append(t)
            for inp in t._node.inputs:
                if inp.requires_grad and id(inp) not in seen:
                    seen.add(id(inp))
                    stack.append(inp)
        entries.sort(key=lambda t: t._node.seq)
        return cls(entries, leaves)


def _accumulate(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True).reshape(t.shape)
    else:
        t.grad += g


def backward(loss: Tensor):
    """Reverse pass from a scalar ``loss``; gradients accumulate with ``+=``."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = Tape.trace(loss)
    if not tape.entries:
        raise ContractError("backward called on a tensor with an empty tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(tape.entries):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.retains_grad:
            _accumulate(t, g)
        node = t._node
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    for leaf in tape.leaves:
        g = grads.get(id(leaf))
        if g is not None:
            _accumulate(leaf, g)


# ---------------------------------------------------------------- elementwise


def _is_scalar(t: Tensor) -> bool:
    return t.data.ndim == 0


def _binary_shapes(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not broadcast-compatible")


def _fit(g: np.ndarray, t: Tensor) -> np.ndarray:
    """Reduce an output gradient onto a (possibly scalar) input."""
    if g.shape == t.shape:
        return g
    return np.asarray(g.sum()).reshape(t.shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "add")
    return _emit(a.data + b.data, (a, b), lambda g: (_fit(g, a), _fit(g, b)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "sub")
    return _emit(a.data - b.data, (a, b), lambda g: (_fit(g, a), _fit(-g, b)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "mul")

    def bw(g):
        ga = _fit(g * b.data, a) if a.requires_grad else None
        gb = _fit(g * a.data, b) if b.requires_grad else None
        return ga, gb

    return _emit(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "div")
    out = a.data / b.data

    def bw(g):
        ga = _fit(g / b.data, a) if a.requires_grad else None
        gb = _fit(-g * out / b.data, b) if b.requires_grad else None
        return ga, gb

    return _emit(out, (a, b), bw, "div")


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _emit(-x.data, (x,), lambda g: (-g,), "neg")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _emit(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -v))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.data)
    return _emit(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _emit(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def softplus(x) -> Tensor:
    x = as_tensor(x)
    y = np.logaddexp(0.0, x.data)
    return _emit(y, (x,), lambda g: (g * _sigmoid(x.data),), "softplus")


def absolute(x) -> Tensor:
    x = as_tensor(x)
    return _emit(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return _emit(y, (x,), lambda g: (g * y,), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log of a nonpositive value")
    return _emit(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def pow_p(x, p: float) -> Tensor:
    """``x ** p``; non-integer exponents require a nonnegative base."""
    x = as_tensor(x)
    p = float(p)
    if not p.is_integer() and np.any(x.data < 0):
        raise DomainError(f"pow with exponent {p} on a negative base")
    y = x.data**p
    if p == 2.0:
        return _emit(y, (x,), lambda g: (2.0 * g * x.data,), "pow")
    return _emit(y, (x,), lambda g: (g * p * x.data ** (p - 1.0),), "pow")


def square(x) -> Tensor:
    return pow_p(x, 2)


def clamp_min(x, floor: float) -> Tensor:
    """``max(x, floor)``; the gradient is blocked where the floor is active."""
    x = as_tensor(x)
    active = x.data > floor
    return _emit(np.where(active, x.data, floor), (x,), lambda g: (g * active,), "clamp_min")


ELEMENTWISE = {
    "add": add,
    "mul": mul,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "softplus": softplus,
    "abs": absolute,
    "pow_p": pow_p,
}


def elementwise(op: str, *args) -> Tensor:
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# ------------------------------------------------------------------ reductions


def _check_axis(x: Tensor, axis):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    for ax in axes:
        if not -x.ndim <= ax < max(x.ndim, 1):
            raise DimensionError(f"axis {ax} out of range for rank {x.ndim}")
    return tuple(ax % x.ndim for ax in axes)


def reduce_sum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    axes = _check_axis(x, axis)
    y = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape),)

    return _emit(y, (x,), bw, "sum")


def reduce_mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    axes = _check_axis(x, axis)
    count = x.size if axes is None else int(np.prod([x.shape[a] for a in axes]))
    y = x.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape),)

    return _emit(y, (x,), bw, "mean")


def reduce(op: str, x, axis=None) -> Tensor:
    if op == "sum":
        return reduce_sum(x, axis)
    if op == "mean":
        return reduce_mean(x, axis)
    raise ContractError(f"unknown reduction {op!r}")


# ------------------------------------------------------------------- structure


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        y = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return _emit(y, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _emit(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),), "transpose")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def expand(x, shape) -> Tensor:
    """Explicit numpy-style broadcast; the backward pass sums the copies."""
    x = as_tensor(x)
    shape = tuple(shape)
    try:
        y = np.broadcast_to(x.data, shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return _emit(y, (x,), lambda g: (_unbroadcast(g, x.shape),), "expand")


def add_bias(x, b) -> Tensor:
    """``x + b`` where ``b`` broadcasts onto ``x`` without changing its shape."""
    x, b = as_tensor(x), as_tensor(b)
    try:
        shape = np.broadcast_shapes(x.shape, b.shape)
    except ValueError:
        shape = None
    if shape != x.shape:
        raise DimensionError(f"bias of shape {b.shape} does not broadcast onto {x.shape}")
    return _emit(
        x.data + b.data,
        (x, b),
        lambda g: (g, _unbroadcast(g, b.shape) if b.requires_grad else None),
        "add_bias",
    )


def _fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def take(x, index) -> Tensor:
    x = as_tensor(x)
    y = x.data[index]
    fancy = _fancy(index)

    def bw(g):
        out = np.zeros_like(x.data)
        if fancy:
            np.add.at(out, index, g)
        else:
            out[index] = g
        return (out,)

    return _emit(y, (x,), bw, "index")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    y = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _emit(y, tensors, bw, "stack")


# --------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product; operands of rank > 2 must share identical batch dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim:
        raise DimensionError(f"matmul needs equal-rank operands of rank >= 2, got {a.shape} @ {b.shape}")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return _emit(a.data @ b.data, (a, b), bw, "matmul")


def conv1d(x, kernel, stride: int = 1) -> Tensor:
    """Valid (unpadded) 1-D cross-correlation along the last axis.

    Shapes:

    * kernel ``(c_out, c_in, w)``, x ``(..., c_in, L)`` -> ``(..., c_out, L')``
    * kernel ``(n, c_out, c_in, w)`` (a stack of n independent filters),
      x ``(B, c_in, L)`` shared by all n -> ``(B, n, c_out, L')``
    * kernel ``(n, c_out, c_in, w)``, x ``(B, n, c_in, L)`` -> ``(B, n, c_out, L')``

    with ``L' = (L - w) // stride + 1``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    xd, kd = x.data, kernel.data
    if stride < 1:
        raise DimensionError("stride must be a positive integer")
    if kd.ndim == 3:
        mode = "single"
        c_out, c_in, w = kd.shape
        n = None
    elif kd.ndim == 4:
        n, c_out, c_in, w = kd.shape
        if xd.ndim == 3:
            mode = "shared"
        elif xd.ndim == 4 and xd.shape[1] == n:
            mode = "stacked"
        else:
            raise DimensionError(f"input {xd.shape} incompatible with stacked kernel {kd.shape}")
    else:
        raise DimensionError(f"kernel must have rank 3 or 4, got {kd.shape}")
    if xd.ndim < 2 or xd.shape[-2] != c_in:
        raise DimensionError(f"input channels {xd.shape} do not match kernel {kd.shape}")
    length = xd.shape[-1]
    if w > length:
        raise DimensionError(f"kernel width {w} exceeds input length {length}")
    out_len = (length - w) // stride + 1
    cw = c_in * w
    lead = xd.shape[:-2]

    windows = sliding_window_view(xd, w, axis=-1)[..., ::stride, :]
    cols = np.ascontiguousarray(np.swapaxes(windows, -3, -2)).reshape(*lead, out_len, cw)

    if mode == "single":
        kmat = kd.reshape(c_out, cw)
        out = np.swapaxes(cols @ kmat.T, -1, -2)
    elif mode == "shared":
        batch = lead[0]
        kflat = kd.reshape(n * c_out, cw)
        cols2 = cols.reshape(batch * out_len, cw)
        out = (cols2 @ kflat.T).reshape(batch, out_len, n, c_out).transpose(0, 2, 3, 1)
    else:
        batch = lead[0]
        kmat = kd.reshape(n, c_out, cw)
        cols2 = np.ascontiguousarray(cols.transpose(1, 0, 2, 3)).reshape(n, batch * out_len, cw)
        out = (cols2 @ kmat.transpose(0, 2, 1)).reshape(n, batch, out_len, c_out).transpose(1, 0, 3, 2)

    def bw(g):
        gk = gcols = None
        if mode == "single":
            g2 = np.swapaxes(g, -1, -2)
            if kernel.requires_grad:
                gk = (g2.reshape(-1, c_out).T @ cols.reshape(-1, cw)).reshape(kd.shape)
            if x.requires_grad:
                gcols = g2 @ kmat
        elif mode == "shared":
            g2 = g.transpose(0, 3, 1, 2).reshape(batch * out_len, n * c_out)
            if kernel.requires_grad:
                gk = (cols2.T @ g2).T.reshape(kd.shape)
            if x.requires_grad:
                gcols = (g2 @ kflat).reshape(batch, out_len, cw)
        else:
            g2 = g.transpose(1, 0, 3, 2).reshape(n, batch * out_len, c_out)
            if kernel.requires_grad:
                gk = (cols2.transpose(0, 2, 1) @ g2).transpose(0, 2, 1).reshape(kd.shape)
            if x.requires_grad:
                gcols = (g2 @ kmat).reshape(n, batch, out_len, cw).transpose(1, 0, 2, 3)
        gx = None
        if gcols is not None:
            gcols = gcols.reshape(*gcols.shape[:-1], c_in, w)
            gx = np.zeros_like(xd)
            span = stride * (out_len - 1) + 1
            for j in range(w):
                gx[..., :, j : j + span : stride] += np.swapaxes(gcols[..., j], -1, -2)
        return gx, gk

    return _emit(out, (x, kernel), bw, "conv1d")
