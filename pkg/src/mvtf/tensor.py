"""Dense tensors with reverse-mode automatic differentiation.

Arrays are plain numpy; every differentiable operation records its parents
and a closure that pushes the output gradient back to them. Gradients
accumulate additively across uses of the same tensor, so callers must zero
accumulators between optimization steps.

Precision is process-global: 64-bit by default (finite-difference checks
are unreliable in 32-bit), switchable to 32-bit for training via
``set_default_dtype`` or the ``MVTF_PRECISION`` environment variable.
"""

from __future__ import annotations

import contextlib
import os
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DegenerateInput, ShapeError

_DTYPE_NAMES = {"f32": np.float32, "f64": np.float64}

_default_dtype = _DTYPE_NAMES.get(os.environ.get("MVTF_PRECISION", "f64"))
if _default_dtype is None:
    raise ValueError(
        f"MVTF_PRECISION must be one of {sorted(_DTYPE_NAMES)}, "
        f"got {os.environ.get('MVTF_PRECISION')!r}"
    )

_grad_enabled = True


def default_dtype():
    """Current process-wide element type for new tensors."""
    return _default_dtype


def set_default_dtype(dtype) -> None:
    """Set the element type used for tensors created without an explicit dtype.

    Accepts ``"f32"``/``"f64"`` or the numpy types themselves.
    """
    global _default_dtype
    if isinstance(dtype, str):
        if dtype not in _DTYPE_NAMES:
            raise ValueError(f"unknown precision {dtype!r}")
        dtype = _DTYPE_NAMES[dtype]
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}")
    _default_dtype = dtype


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (forward-only evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default element type."""
    prev = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


class Tensor:
    """A dense multi-dimensional real array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _default_dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- construction ------------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: Sequence["Tensor"],
                 backward: Callable[[np.ndarray], None]) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # -- basic properties ----------------------------------------------------

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
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        grad = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{grad})"

    # -- autodiff -------------------------------------------------------------

    def backward(self, grad=None) -> None:
        """Reverse-mode pass seeded at this tensor.

        ``grad`` defaults to 1 for scalars. Leaf gradients accumulate into
        ``.grad``; interior gradients are freed as soon as consumed.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed needs a scalar output",
                                 self.shape)
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise ShapeError("seed gradient shape mismatch", grad.shape, self.shape)

        order = self._topo_order()
        _accumulate(self, grad)
        for node in order:
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                node.grad = None  # interior gradients are transient

    def _topo_order(self) -> list["Tensor"]:
        # Iterative post-order DFS; recursion would overflow on long
        # recurrence chains (an LSTM over a hundred steps nests deeply).
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited and parent.requires_grad:
                    stack.append((parent, False))
        order.reverse()
        return order

    # -- operators -------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, -_as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), -self)

    def __neg__(self):
        return mul(self, -1.0)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, key):
        data = self.data[key]

        def backward(g, self=self, key=key):
            # Accumulate straight into the parent's buffer: recurrences take
            # hundreds of slices of one tensor, and a fresh full-size
            # scatter per slice would dominate the whole backward pass.
            if not self.requires_grad:
                return
            if self.grad is None:
                self.grad = np.zeros(self.data.shape, dtype=g.dtype)
            self.grad[key] += g

        return Tensor._from_op(np.ascontiguousarray(data), (self,), backward)

    # -- shape manipulation ------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        data = self.data.reshape(shape)

        def backward(g, self=self, orig=self.data.shape):
            # The incoming gradient buffer is exclusively this edge's; a
            # reshaped view of it can be handed to the single parent.
            _accumulate(self, np.ascontiguousarray(g).reshape(orig), owned=True)

        return Tensor._from_op(data, (self,), backward)

    def flatten(self, start: int = 1) -> "Tensor":
        """Collapse all axes from ``start`` onward into one, row-major."""
        keep = self.data.shape[:start]
        return self.reshape(keep + (-1,))

    def swapaxes(self, a: int, b: int) -> "Tensor":
        data = np.ascontiguousarray(self.data.swapaxes(a, b))

        def backward(g, self=self, a=a, b=b):
            _accumulate(self, g.swapaxes(a, b), owned=True)

        return Tensor._from_op(data, (self,), backward)

    # -- reductions ------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        _check_reduction_axis(self.data, axis)
        data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g, self=self, axis=axis, keepdims=keepdims):
            _accumulate(self, _spread(g, self.data.shape, axis, keepdims))

        return Tensor._from_op(np.asarray(data), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        _check_reduction_axis(self.data, axis)
        count = self.data.size if axis is None else _axis_count(self.data.shape, axis)
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def std(self, axis=None, keepdims: bool = False) -> "Tensor":
        """Population standard deviation (differentiable composite)."""
        mu = self.mean(axis=axis, keepdims=True)
        var = ((self - mu) ** 2).mean(axis=axis, keepdims=keepdims)
        return sqrt(var)


def _as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_default_dtype), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=_default_dtype), requires_grad=requires_grad)


def _accumulate(t: Tensor, g: np.ndarray, owned: bool = False) -> None:
    """Add ``g`` into ``t.grad``. Copies on first write unless ``owned``
    guarantees no other node aliases the buffer."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g if owned else g.copy()
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _spread(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape).astype(g.dtype, copy=False)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def _axis_count(shape: tuple[int, ...], axis) -> int:
    if isinstance(axis, tuple):
        n = 1
        for a in axis:
            n *= shape[a]
        return n
    return shape[axis]


def _check_reduction_axis(data: np.ndarray, axis) -> None:
    if data.size == 0:
        raise DegenerateInput("reduction over an empty tensor")
    if axis is not None:
        axes = axis if isinstance(axis, tuple) else (axis,)
        for a in axes:
            if data.shape[a] == 0:
                raise DegenerateInput(f"reduction over empty axis {a}")


# -- elementwise arithmetic -----------------------------------------------------


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError("add operands do not broadcast", a.shape, b.shape)

    def backward(g, a=a, b=b):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return Tensor._from_op(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError("mul operands do not broadcast", a.shape, b.shape)

    def backward(g, a=a, b=b):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape), owned=True)
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape), owned=True)

    return Tensor._from_op(data, (a, b), backward)


def div(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    try:
        data = a.data / b.data
    except ValueError:
        raise ShapeError("div operands do not broadcast", a.shape, b.shape)

    def backward(g, a=a, b=b):
        _accumulate(a, _unbroadcast(g / b.data, a.data.shape), owned=True)
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
                    owned=True)

    return Tensor._from_op(data, (a, b), backward)


def power(a, exponent: float) -> Tensor:
    a = _as_tensor(a)
    if isinstance(exponent, Tensor):
        raise TypeError("only constant exponents are supported")
    data = a.data ** exponent

    def backward(g, a=a, exponent=exponent):
        _accumulate(a, g * exponent * a.data ** (exponent - 1), owned=True)

    return Tensor._from_op(data, (a,), backward)


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    data = np.sqrt(a.data)

    def backward(g, a=a, data=data):
        _accumulate(a, g / (2.0 * data), owned=True)

    return Tensor._from_op(data, (a,), backward)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    data = np.exp(a.data)

    def backward(g, a=a, data=data):
        _accumulate(a, g * data, owned=True)

    return Tensor._from_op(data, (a,), backward)


def log(a) -> Tensor:
    a = _as_tensor(a)
    data = np.log(a.data)

    def backward(g, a=a):
        _accumulate(a, g / a.data, owned=True)

    return Tensor._from_op(data, (a,), backward)


_LN10 = float(np.log(10.0))


def log10(a) -> Tensor:
    return log(a) * (1.0 / _LN10)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    # Branch on sign to keep exp() in the underflow-only regime.
    positive = a.data >= 0
    e = np.exp(np.where(positive, -a.data, a.data))
    data = np.where(positive, 1.0 / (1.0 + e), e / (1.0 + e))

    def backward(g, a=a, data=data):
        _accumulate(a, g * data * (1.0 - data), owned=True)

    return Tensor._from_op(data, (a,), backward)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    data = np.tanh(a.data)

    def backward(g, a=a, data=data):
        _accumulate(a, g * (1.0 - data * data), owned=True)

    return Tensor._from_op(data, (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    if a.data.shape[axis] == 0:
        raise DegenerateInput(f"softmax over empty axis {axis}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g, a=a, data=data, axis=axis):
        inner = (g * data).sum(axis=axis, keepdims=True)
        _accumulate(a, data * (g - inner), owned=True)

    return Tensor._from_op(data, (a,), backward)


# -- linear algebra -----------------------------------------------------------


def _flat_matmul(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # One big GEMM beats a batched one when the right operand is shared.
    if x.ndim == 2:
        return x @ w
    lead = x.shape[:-1]
    return (x.reshape(-1, x.shape[-1]) @ w).reshape(lead + (w.shape[-1],))


def matmul(a, b) -> Tensor:
    """Matrix product. Supports 2-D x 2-D, N-D x 2-D (shared right operand),
    and N-D x N-D with identical batch dimensions."""
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs rank >= 2 operands", a.shape, b.shape)
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul inner dimensions differ", a.shape, b.shape)
    if not (b.ndim == 2 or a.shape[:-2] == b.shape[:-2]):
        raise ShapeError("matmul batch dimensions differ", a.shape, b.shape)
    if b.ndim == 2:
        data = _flat_matmul(a.data, b.data)
    else:
        data = np.matmul(a.data, b.data)

    def backward(g, a=a, b=b):
        if b.ndim == 2:
            _accumulate(a, _flat_matmul(g, b.data.T), owned=True)
            ga = a.data.reshape(-1, a.shape[-1])
            gg = g.reshape(-1, g.shape[-1])
            _accumulate(b, ga.T @ gg, owned=True)
        else:
            _accumulate(a, np.matmul(g, b.data.swapaxes(-1, -2)), owned=True)
            _accumulate(b, np.matmul(a.data.swapaxes(-1, -2), g), owned=True)

    return Tensor._from_op(data, (a, b), backward)


def symmetric_outer(a, b) -> Tensor:
    """Order-independent outer product per leading index:
    ``0.5 * (a_i b_j + b_i a_j)`` over the last axis, giving
    ``(..., F, F)`` from two ``(..., F)`` operands."""
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("symmetric_outer operands disagree", a.shape, b.shape)
    first = a.data[..., :, None] * b.data[..., None, :]
    second = b.data[..., :, None] * a.data[..., None, :]
    first += second
    first *= 0.5

    def backward(g, a=a, b=b):
        gs = g + g.swapaxes(-1, -2)
        _accumulate(a, 0.5 * np.einsum("...ij,...j->...i", gs, b.data), owned=True)
        _accumulate(b, 0.5 * np.einsum("...ij,...j->...i", gs, a.data), owned=True)

    return Tensor._from_op(first, (a, b), backward)


def linear(x, w, b) -> Tensor:
    """Affine map over the last axis: ``y = x @ w + b``."""
    return add(matmul(x, w), b)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then apply
    the per-feature affine ``gamma * xhat + beta``."""
    x = _as_tensor(x)
    gamma = _as_tensor(gamma, x.dtype)
    beta = _as_tensor(beta, x.dtype)
    n = x.shape[-1] if x.ndim else 0
    if n == 0:
        raise DegenerateInput("layer_norm over an empty feature axis")
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError("layer_norm affine parameters must match the feature axis",
                         gamma.shape, (n,))
    mu = x.data.mean(axis=-1, keepdims=True)
    xhat = x.data - mu
    var = np.einsum("...i,...i->...", xhat, xhat) / n
    inv_std = (1.0 / np.sqrt(var + eps))[..., None]
    xhat *= inv_std
    data = xhat * gamma.data
    data += beta.data

    def backward(g, x=x, gamma=gamma, beta=beta, xhat=xhat, inv_std=inv_std, n=n):
        lead = tuple(range(g.ndim - 1))
        g2 = g.reshape(-1, n)
        _accumulate(gamma, np.einsum("bi,bi->i", g2, xhat.reshape(-1, n)), owned=True)
        _accumulate(beta, g.sum(axis=lead), owned=True)
        gh = g * gamma.data
        gx = gh - gh.mean(axis=-1, keepdims=True)
        gx -= xhat * (np.einsum("...i,...i->...", gh, xhat) / n)[..., None]
        gx *= inv_std
        _accumulate(x, gx, owned=True)

    return Tensor._from_op(data, (x, gamma, beta), backward)


# -- concatenation and stacking ---------------------------------------------------


def concatenate(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concatenate needs at least one tensor")
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeError("concatenate operands disagree off-axis",
                         parts[0].shape, tuple(p.shape for p in parts[1:]))
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g, parts=parts, offsets=offsets, axis=axis):
        index = [slice(None)] * g.ndim
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            index[axis] = slice(lo, hi)
            _accumulate(p, np.ascontiguousarray(g[tuple(index)]), owned=True)

    return Tensor._from_op(data, tuple(parts), backward)


def stack(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("stack needs at least one tensor")
    data = np.stack([p.data for p in parts], axis=axis)

    def backward(g, parts=parts, axis=axis):
        for i, p in enumerate(parts):
            _accumulate(p, np.ascontiguousarray(np.take(g, i, axis=axis)), owned=True)

    return Tensor._from_op(data, tuple(parts), backward)


# -- signal framing (linear gather / scatter pair) ----------------------------------


def frame_windows(x, size: int, hop: int) -> Tensor:
    """Slice the last axis into overlapping windows: ``(..., N)`` becomes
    ``(..., T, size)`` with ``T = 1 + (N - size) // hop``. Samples beyond the
    last full window are dropped."""
    x = _as_tensor(x)
    n = x.shape[-1]
    if n < size:
        raise ShapeError(f"signal shorter than one window of {size}", x.shape)
    t = 1 + (n - size) // hop
    idx = np.arange(t)[:, None] * hop + np.arange(size)[None, :]
    data = x.data[..., idx]

    def backward(g, x=x, t=t, size=size, hop=hop):
        full = np.zeros(x.data.shape, dtype=g.dtype)
        for i in range(t):
            full[..., i * hop:i * hop + size] += g[..., i, :]
        _accumulate(x, full, owned=True)

    return Tensor._from_op(np.ascontiguousarray(data), (x,), backward)


def overlap_add(frames, hop: int, length: int | None = None) -> Tensor:
    """Inverse of :func:`frame_windows`: sum windows ``(..., T, size)`` back
    into a signal of ``(T - 1) * hop + size`` samples (or ``length``)."""
    frames = _as_tensor(frames)
    t, size = frames.shape[-2], frames.shape[-1]
    cover = (t - 1) * hop + size
    out_len = cover if length is None else length
    data = np.zeros(frames.shape[:-2] + (out_len,), dtype=frames.dtype)
    for i in range(t):
        lo = i * hop
        hi = min(lo + size, out_len)
        if hi > lo:
            data[..., lo:hi] += frames.data[..., i, :hi - lo]

    def backward(g, frames=frames, t=t, size=size, hop=hop, out_len=out_len):
        full = np.zeros(frames.data.shape, dtype=g.dtype)
        for i in range(t):
            lo = i * hop
            hi = min(lo + size, out_len)
            if hi > lo:
                full[..., i, :hi - lo] = g[..., lo:hi]
        _accumulate(frames, full, owned=True)

    return Tensor._from_op(data, (frames,), backward)
