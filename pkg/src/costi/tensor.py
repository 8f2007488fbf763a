"""Dense tensors with reverse-mode automatic differentiation.

Values live in row-major NumPy arrays; the computation graph is built
implicitly as operations run, each result keeping references to its parents
and a closure that maps the output gradient to parent gradients.
``backward`` walks that graph once in reverse topological order and
accumulates into ``.grad`` buffers, so calling it twice without clearing
doubles the gradients.

Tensors are immutable after creation except for their ``grad`` buffer.
Gradient bookkeeping is skipped entirely for subgraphs where no input
requires a gradient, which is how the gradient-stopped teacher pass stays
cheap.

Binary operations broadcast with the usual trailing-dimension rule (a
size-1 axis stretches).  The default storage precision is 64-bit; pass
``dtype=np.float32`` to constructors (or switch the module default) when
speed matters more than gradient-check headroom.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64


def set_default_dtype(dtype) -> None:
    """Switch the storage precision used for new tensors built from lists/scalars."""
    global DEFAULT_DTYPE
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}; use np.float32 or np.float64")
    DEFAULT_DTYPE = dtype


class Tensor:
    """A dense array plus optional gradient tracking.

    Attributes:
        data: the raw ndarray (do not mutate after creation).
        requires_grad: whether backward should produce a gradient for it.
        grad: accumulated gradient buffer (same shape as data), or None.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if isinstance(data, np.ndarray) and dtype is None:
            arr = data if data.dtype in (np.float32, np.float64) else data.astype(DEFAULT_DTYPE)
        else:
            arr = np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple = ()
        self._vjp = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
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

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar ------------------------------------------------

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce_max(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


def as_tensor(value, dtype=None) -> Tensor:
    """Wrap a value as a constant (non-differentiable) tensor."""
    return value if isinstance(value, Tensor) else Tensor(value, dtype=dtype)


def _result(data: np.ndarray, parents: tuple, vjp) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, inverting NumPy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _binary_data(a: Tensor, b: Tensor, op_name: str, fn) -> np.ndarray:
    try:
        return fn(a.data, b.data)
    except ValueError as exc:
        raise ValueError(
            f"{op_name}: shapes {a.data.shape} and {b.data.shape} are not broadcastable"
        ) from exc


# -- elementwise -------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _binary_data(a, b, "add", np.add)

    def vjp(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g, b.data.shape) if b.requires_grad else None,
        )

    return _result(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _binary_data(a, b, "sub", np.subtract)

    def vjp(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.data.shape) if b.requires_grad else None,
        )

    return _result(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _binary_data(a, b, "mul", np.multiply)

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None,
        )

    return _result(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _binary_data(a, b, "div", np.divide)

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.data.shape) if a.requires_grad else None
        gb = (
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
            if b.requires_grad
            else None
        )
        return ga, gb

    return _result(out, (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def ln(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise ValueError("ln of negative input")
    out = np.log(a.data)
    return _result(out, (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise ValueError("sqrt of negative input")
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * (0.5 / out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)
    return _result(out, (a,), lambda g: (g * (a.data > 0),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def silu(a) -> Tensor:
    """x * sigmoid(x), composed from primitives."""
    a = as_tensor(a)
    return mul(a, sigmoid(a))


# -- matmul / softmax --------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(
            f"matmul requires tensors of rank >= 2, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(
            f"matmul: inner dimensions differ, {a.data.shape} vs {b.data.shape}"
        )
    out = _binary_data(a, b, "matmul", np.matmul)

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape)
        return ga, gb

    return _result(out, (a, b), vjp)


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax along ``axis`` (max-subtraction)."""
    a = as_tensor(a)
    axis = _check_axis(axis, a.ndim)
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g):
        inner = np.sum(g * out, axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _result(out, (a,), vjp)


# -- reductions --------------------------------------------------------


def _check_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ValueError(f"axis {axis} out of bounds for rank-{ndim} tensor")
    return axis % ndim


def _normalize_axes(axis, ndim: int):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (_check_axis(axis, ndim),)
    return tuple(_check_axis(ax, ndim) for ax in axis)


def _kept_shape(shape: tuple, axes: tuple) -> tuple:
    return tuple(1 if i in axes else s for i, s in enumerate(shape))


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    out = np.sum(a.data, axis=axes, keepdims=keepdims)
    kept = _kept_shape(a.data.shape, axes)

    def vjp(g):
        return (np.broadcast_to(g.reshape(kept), a.data.shape),)

    return _result(out, (a,), vjp)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    out = np.mean(a.data, axis=axes, keepdims=keepdims)
    kept = _kept_shape(a.data.shape, axes)
    count = 1
    for ax in axes:
        count *= a.data.shape[ax]

    def vjp(g):
        return (np.broadcast_to(g.reshape(kept), a.data.shape) / count,)

    return _result(out, (a,), vjp)


def reduce_max(a, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction over one axis (or all).  The gradient flows to the first
    maximal element in row-major order; ties break to the lowest index."""
    a = as_tensor(a)
    if axis is None:
        out = np.max(a.data, keepdims=keepdims)
        idx = int(np.argmax(a.data))

        def vjp_all(g):
            buf = np.zeros_like(a.data)
            buf.reshape(-1)[idx] = np.asarray(g).reshape(-1)[0]
            return (buf,)

        return _result(out, (a,), vjp_all)

    ax = _check_axis(axis, a.ndim)
    out = np.max(a.data, axis=ax, keepdims=keepdims)
    arg = np.argmax(a.data, axis=ax)

    def vjp(g):
        buf = np.zeros_like(a.data)
        gk = g if keepdims else np.expand_dims(g, ax)
        np.put_along_axis(buf, np.expand_dims(arg, ax), gk, ax)
        return (buf,)

    return _result(out, (a,), vjp)


# -- shape manipulation ------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return _result(out, (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = a.data.transpose(axes)
    return _result(out, (a,), lambda g: (g.transpose(inv),))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    out = np.swapaxes(a.data, ax1, ax2)
    return _result(out, (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    out = np.broadcast_to(a.data, shape)
    return _result(out, (a,), lambda g: (_unbroadcast(g, a.data.shape),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ax = _check_axis(axis, ts[0].ndim)
    out = np.concatenate([t.data for t in ts], axis=ax)
    sizes = [t.data.shape[ax] for t in ts]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        pieces = np.split(g, offsets, axis=ax)
        return tuple(p if t.requires_grad else None for p, t in zip(pieces, ts))

    return _result(out, tuple(ts), vjp)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    kept = list(ts[0].shape)
    kept.insert(axis if axis >= 0 else axis + ts[0].ndim + 1, 1)
    return concat([reshape(t, tuple(kept)) for t in ts], axis=axis)


def take(a, idx) -> Tensor:
    """Basic (slice/int/ellipsis) indexing with gradient scatter-back."""
    a = as_tensor(a)
    out = a.data[idx]

    def vjp(g):
        buf = np.zeros_like(a.data)
        buf[idx] = g
        return (buf,)

    return _result(out, (a,), vjp)


def pad_axis(a, axis: int, before: int, after: int) -> Tensor:
    """Zero-pad one axis; gradient is the matching crop."""
    a = as_tensor(a)
    ax = _check_axis(axis, a.ndim)
    if before == 0 and after == 0:
        return a
    widths = [(0, 0)] * a.ndim
    widths[ax] = (before, after)
    out = np.pad(a.data, widths)
    sl = [slice(None)] * a.ndim
    sl[ax] = slice(before, before + a.data.shape[ax])
    sl = tuple(sl)
    return _result(out, (a,), lambda g: (g[sl],))


# -- gradient control --------------------------------------------------


def stopgrad(a) -> Tensor:
    """Same values, but no gradient flows through the result."""
    a = as_tensor(a)
    out = Tensor.__new__(Tensor)
    out.data = a.data
    out.requires_grad = False
    out.grad = None
    out._parents = ()
    out._vjp = None
    return out


def dropout(a, p: float, rng: np.random.Generator, train: bool = True) -> Tensor:
    """Inverted dropout: scale kept entries by 1/(1-p) so expectation is preserved.

    Identity when ``train`` is false or ``p`` is zero.  The Bernoulli mask is
    drawn from ``rng``, so a fixed stream gives a reproducible mask.
    """
    a = as_tensor(a)
    if not train or p == 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    mask = (rng.random(a.data.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    return mul(a, Tensor(mask))


def layer_norm(a, gain, bias, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean / unit variance along ``axis``, then affine."""
    a = as_tensor(a)
    mu = reduce_mean(a, axis=axis, keepdims=True)
    centered = sub(a, mu)
    var = reduce_mean(mul(centered, centered), axis=axis, keepdims=True)
    normed = div(centered, sqrt(add(var, eps)))
    return add(mul(normed, gain), bias)


# -- backward pass -----------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate ``grad`` for every requires_grad tensor reachable from ``loss``.

    Accumulation is additive: a second call without clearing doubles grads.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return

    # Iterative post-order traversal so deep graphs don't hit recursion limits.
    topo: list[Tensor] = []
    visited = {id(loss)}
    stack: list[tuple[Tensor, object]] = [(loss, iter(loss._parents))]
    while stack:
        node, it = stack[-1]
        pushed = False
        for parent in it:
            if parent.requires_grad and id(parent) not in visited:
                visited.add(id(parent))
                stack.append((parent, iter(parent._parents)))
                pushed = True
                break
        if not pushed:
            topo.append(node)
            stack.pop()

    # Per-call gradient map, folded into .grad at the end: a repeated call
    # then adds the same gradients again instead of compounding through
    # already-accumulated buffers.
    flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        if node._vjp is None:
            continue
        grads = node._vjp(flowing[id(node)])
        for parent, g in zip(node._parents, grads):
            if g is None:
                continue
            key = id(parent)
            flowing[key] = flowing[key] + g if key in flowing else g
    for node in topo:
        g = flowing[id(node)]
        node.grad = g if node.grad is None else node.grad + g


def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-6) -> float:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f`` must map a tensor to a scalar tensor and be deterministic.  Runs in
    64-bit regardless of the input dtype.  Returns the max absolute deviation
    between the two gradients, normalized by the larger gradient magnitude
    (floored at 1e-12), i.e. a scale-free worst-case relative error.
    """
    base = np.asarray(as_tensor(x).data, dtype=np.float64).copy()
    probe = Tensor(base.copy(), requires_grad=True)
    out = f(probe)
    if out.data.size != 1:
        raise ValueError("grad_check target must return a scalar")
    backward(out)
    g_ad = probe.grad if probe.grad is not None else np.zeros_like(base)

    g_fd = np.zeros_like(base)
    flat = base.reshape(-1)
    fd_flat = g_fd.reshape(-1)
    for j in range(flat.size):
        step = h * max(1.0, abs(flat[j]))
        xp = base.copy()
        xp.reshape(-1)[j] += step
        xm = base.copy()
        xm.reshape(-1)[j] -= step
        fp = float(f(Tensor(xp)).data)
        fm = float(f(Tensor(xm)).data)
        fd_flat[j] = (fp - fm) / (2.0 * step)

    scale = max(float(np.max(np.abs(g_ad))), float(np.max(np.abs(g_fd))), 1e-12)
    return float(np.max(np.abs(g_ad - g_fd))) / scale


# -- scalar special function -------------------------------------------


def erf(x: float) -> float:
    """Error function via the Abramowitz & Stegun 7.1.26 rational polynomial.

    Absolute error below 1.5e-7 everywhere; odd symmetry erf(-x) == -erf(x)
    holds exactly because the polynomial is evaluated on |x|.
    """
    if x == 0.0:
        return 0.0
    sign = 1.0 if x > 0 else -1.0
    ax = abs(x)
    t = 1.0 / (1.0 + 0.3275911 * ax)
    poly = t * (
        0.254829592
        + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429)))
    )
    return sign * (1.0 - poly * math.exp(-ax * ax))
