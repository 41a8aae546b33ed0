"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations are recorded on the innermost active :class:`Tape` whenever one of
their inputs requires a gradient.  Outside a tape every operation is a plain
numpy computation, which is what inference uses.

Broadcasting is never implicit.  Elementwise operations require identical
shapes (a Python scalar is the one exception); use :func:`broadcast_to` to
expand an operand on purpose.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A float64 array plus its place on the differentiation tape."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "tape", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if 0 in arr.shape:
            raise DimensionError(f"tensor dimensions must be positive, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self.tape: Tape | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __len__(self):
        return len(self.data)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor / tensor is not supported; divide by a Python scalar")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return tensor_sum(self, axis)

    def mean(self):
        return mean(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Record:
    inputs: tuple
    output: Tensor
    backward: Callable


@dataclass
class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager; nested tapes are allowed and only the innermost
    one records.  Tapes are thread-local, so independent tapes can run on
    separate threads.
    """

    records: list = field(default_factory=list)

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self):
        return len(self.records)

    def record(self, inputs: tuple, output: Tensor, backward: Callable) -> None:
        output.requires_grad = True
        output.node_id = len(self.records)
        output.tape = self
        self.records.append(_Record(inputs, output, backward))

    def backward(self, loss: Tensor) -> dict:
        """Populate ``.grad`` on every node reachable from ``loss``.

        Returns a mapping from each leaf tensor (a parameter or input that was
        not produced by a recorded op) to its gradient array.
        """
        if loss.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if loss.tape is not self or loss.node_id is None:
            raise ContractError("loss was not produced on this tape")

        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        for rec in reversed(self.records[: loss.node_id + 1]):
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            rec.output.grad = g
            for inp, ig in zip(rec.inputs, rec.backward(g)):
                if ig is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig
                if inp.node_id is None or inp.tape is not self:
                    leaves[key] = inp
        out = {}
        for key, leaf in leaves.items():
            leaf.grad = grads[key]
            out[leaf] = leaf.grad
        return out


def backward(loss: Tensor) -> dict:
    """Run reverse accumulation from a scalar ``loss`` on the tape that made it."""
    if loss.tape is None:
        raise ContractError("loss is not on any tape; build it inside `with Tape():`")
    return loss.tape.backward(loss)


def _result(data: np.ndarray, inputs: tuple, backward_fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out.node_id = None
    out.tape = None
    out.name = None
    tape = active_tape()
    if tape is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        tape.record(inputs, out, backward_fn)
    return out


def _check_same(a: Tensor, b: Tensor, opname: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{opname}: shapes {a.shape} and {b.shape} differ")


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer))


# --- elementwise -----------------------------------------------------------


def add(a, b) -> Tensor:
    if _is_scalar(b):
        a = as_tensor(a)
        return _result(a.data + b, (a,), lambda g: (g,))
    if _is_scalar(a):
        return add(b, a)
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    if _is_scalar(b):
        return add(a, -b)
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    if _is_scalar(b):
        a = as_tensor(a)
        c = float(b)
        return _result(a.data * c, (a,), lambda g: (g * c,))
    if _is_scalar(a):
        return mul(b, a)
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def elementwise(a, b, op: str) -> Tensor:
    """Dispatch ``op`` in {"add", "sub", "mul"}."""
    try:
        fn = {"add": add, "sub": sub, "mul": mul}[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(a, b)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # tanh form never overflows
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return _result(y, (x,), lambda g: (g * y,))


# --- linear algebra and structure -----------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product of 2-D operands, or of 3-D stacks with equal batch size."""
    a, b = as_tensor(a), as_tensor(b)
    ok = (
        a.ndim == b.ndim
        and a.ndim in (2, 3)
        and a.shape[-1] == b.shape[-2]
        and (a.ndim == 2 or a.shape[0] == b.shape[0])
    )
    if not ok:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        return np.matmul(g, np.swapaxes(bd, -1, -2)), np.matmul(np.swapaxes(ad, -1, -2), g)

    return _result(np.matmul(ad, bd), (a, b), back)


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise DimensionError(f"transpose needs at least 2 dimensions, got shape {a.shape}")
    return _result(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        y = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view shape {a.shape} as {tuple(shape)}") from None
    src = a.shape
    return _result(y, (a,), lambda g: (g.reshape(src),))


def broadcast_to(a, shape) -> Tensor:
    """Explicitly expand ``a`` to ``shape`` following numpy's rules."""
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        y = np.broadcast_to(a.data, shape)
    except ValueError:
        raise DimensionError(f"broadcast_to: cannot expand {a.shape} to {shape}") from None
    src = a.shape
    lead = len(shape) - len(src)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, d in enumerate(src) if d == 1 and shape[lead + i] != 1
    )

    def back(g):
        return (g.sum(axis=axes, keepdims=True).reshape(src) if axes else g,)

    return _result(np.ascontiguousarray(y), (a,), back)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise DimensionError("concat of an empty sequence")
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:  # numpy axis errors subclass ValueError
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat along axis {axis}: incompatible shapes {shapes}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(y, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise DimensionError("stack of an empty sequence")
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack: shapes differ {sorted(shapes)}")
    y = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _result(y, tensors, back)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    y = a.data[index]
    if np.ndim(y) == 0:
        y = np.asarray(y)
    src = a.shape
    basic = all(
        isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None
        for i in (index if isinstance(index, tuple) else (index,))
    )

    def back(g):
        full = np.zeros(src)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result(np.array(y, copy=True), (a,), back)


def split(a, sizes: Sequence[int], axis: int = 0) -> list:
    """Inverse of :func:`concat`: cut ``a`` into consecutive pieces of ``sizes``."""
    a = as_tensor(a)
    if sum(sizes) != a.shape[axis]:
        raise DimensionError(f"split sizes {list(sizes)} do not cover axis of length {a.shape[axis]}")
    out, start = [], 0
    for size in sizes:
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(start, start + size)
        out.append(getitem(a, tuple(idx)))
        start += size
    return out


# --- reductions ------------------------------------------------------------


def tensor_sum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    y = np.asarray(a.data.sum(axis=axis))
    src = a.shape

    def back(g):
        if axis is None:
            return (np.full(src, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), src).copy(),)

    return _result(y, (a,), back)


def mean(a) -> Tensor:
    a = as_tensor(a)
    return mul(tensor_sum(a), 1.0 / a.size)


def softmax(x, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    x = as_tensor(x)
    if x.ndim == 0:
        raise DimensionError("softmax needs at least one axis")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    y = ez / ez.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), back)


def mse_loss(pred, truth) -> Tensor:
    """Mean squared error over every element; ``truth`` is treated as constant."""
    pred = as_tensor(pred)
    truth_data = truth.data if isinstance(truth, Tensor) else np.asarray(truth, dtype=np.float64)
    if pred.shape != truth_data.shape:
        raise DimensionError(f"mse_loss: prediction shape {pred.shape} vs truth shape {truth_data.shape}")
    diff = pred.data - truth_data
    n = diff.size
    return _result(np.asarray((diff * diff).sum() / n), (pred,), lambda g: (g * 2.0 * diff / n,))


# --- verification ----------------------------------------------------------


@dataclass
class GradCheckReport:
    """Per-parameter worst relative error between analytic and numeric gradients."""

    errors: dict
    tol: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol

    def __str__(self):
        lines = [f"{name}: {err:.3e}" for name, err in self.errors.items()]
        verdict = "pass" if self.passed else "FAIL"
        return f"grad_check {verdict} (max {self.max_error:.3e}, tol {self.tol:g})\n" + "\n".join(lines)


def grad_check(f: Callable[[], Tensor], params, h: float = 1e-5, tol: float = 1e-4, floor: float = 1e-6):
    """Compare tape gradients of ``f()`` with central differences.

    ``params`` is a mapping name -> Tensor or a sequence of tensors; their
    ``.data`` is perturbed in place and restored.  The relative error of each
    entry is ``|a - n| / max(|a|, |n|, floor)``; ``floor`` keeps entries whose
    true gradient is ~0 from producing meaningless ratios.
    """
    if not isinstance(params, dict):
        params = {p.name or f"param{i}": p for i, p in enumerate(params)}

    first = f().data.copy()
    second = f().data.copy()
    if not np.array_equal(first, second):
        raise ContractError("grad_check: function is not deterministic (two forward passes differ)")

    saved = {}
    for p in params.values():
        saved[id(p)] = p.requires_grad
        p.requires_grad = True
    try:
        with Tape():
            loss = f()
            grads = backward(loss)
        errors = {}
        for name, p in params.items():
            analytic = grads.get(p)
            if analytic is None:
                analytic = np.zeros_like(p.data)
            numeric = np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            num_flat = numeric.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(f().data)
                flat[i] = orig - h
                fm = float(f().data)
                flat[i] = orig
                num_flat[i] = (fp - fm) / (2.0 * h)
            denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
            errors[name] = float(np.max(np.abs(analytic - numeric) / denom))
    finally:
        for p in params.values():
            p.requires_grad = saved[id(p)]
            p.grad = None
    return GradCheckReport(errors, tol)
