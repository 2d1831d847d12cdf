"""Small reverse-mode autodiff engine over float64 numpy arrays.

Graphs are built define-by-run: every op on a tensor that requires grad
records its parents and a closure mapping the output gradient to parent
gradients. ``Tensor.backward`` walks the graph once in reverse topological
order.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor", "ShapeError", "NumericError", "GraphError", "no_grad", "tensor",
    "add", "sub", "mul", "div", "neg", "power", "matmul", "transpose",
    "conv2d", "maxpool2d", "relu", "tanh", "log", "exp", "sum", "mean",
    "reshape", "softmax", "log_softmax", "clip", "maximum", "max", "take",
    "finite_difference_check",
]


class ShapeError(ValueError):
    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        desc = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {desc}")


class NumericError(ArithmeticError):
    """Raised when an op produces a NaN or infinite element."""


class GraphError(RuntimeError):
    pass


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.op = "leaf"
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._consumed = False

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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # operator sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __pow__(self, exponent: float): return power(self, exponent)
    def __matmul__(self, other): return matmul(self, other)

    def sum(self, axis=None, keepdims=False): return sum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self): return transpose(self)

    def backward(self) -> None:
        """Populate ``.grad`` on every grad-requiring tensor reachable from self."""
        if self.data.size != 1:
            raise GraphError(f"backward needs a scalar, got shape {self.shape}")
        if self._consumed:
            raise GraphError("backward already ran on this graph; rebuild it first")
        self._consumed = True
        if not self.requires_grad:
            return

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                g = np.zeros_like(node.data)
            node.grad = g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            node._backward = None
            node._parents = ()


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(op: str, out: np.ndarray) -> None:
    if not np.isfinite(out).all():
        raise NumericError(f"{op}: non-finite value in output")


def _make(op: str, out: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    _check_finite(op, out)
    t = Tensor(out)
    t.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._backward = backward
    return t


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _make("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("div", a, b)
    if np.any(b.data == 0):
        raise NumericError("div: division by zero")
    out = a.data / b.data
    return _make("div", out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                            _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def power(a, exponent: float, grad_floor: float = 0.0) -> Tensor:
    """Elementwise ``a ** exponent`` for a scalar exponent.

    With ``grad_floor > 0`` the derivative is evaluated at ``max(a, grad_floor)``,
    which keeps fractional powers differentiable at zero while leaving the
    forward value exact (``0 ** alpha == 0``).
    """
    a = _as_tensor(a)
    p = float(exponent)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.power(a.data, p)

    def backward(g):
        base = np.maximum(a.data, grad_floor) if grad_floor > 0 else a.data
        return (g * p * np.power(base, p - 1.0),)

    return _make("power", out, (a,), backward)


# linear algebra

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return _make("matmul", a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T if a.requires_grad else None,
                            a.data.T @ g if b.requires_grad else None))


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("transpose", a.shape)
    return _make("transpose", np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,))


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation. ``x``: (N, C, H, W), ``w``: (F, C, kh, kw), ``b``: (F,)."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError("conv2d", x.shape, w.shape)
    if b is not None:
        b = _as_tensor(b)
        if b.shape != (w.shape[0],):
            raise ShapeError("conv2d", w.shape, b.shape)
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    s, p = int(stride), int(padding)
    ho = (h + 2 * p - kh) // s + 1
    wo = (wd + 2 * p - kw) // s + 1
    if ho < 1 or wo < 1 or s < 1 or p < 0:
        raise ShapeError("conv2d", x.shape, w.shape)

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    # columns laid out as (N, C*kh*kw, Ho*Wo) so the product lands in NCHW order
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * kh * kw, ho * wo)
    wmat = w.data.reshape(f, -1)
    out = np.matmul(wmat, cols).reshape(n, f, ho, wo)
    if b is not None:
        out += b.data[:, None, None]

    def backward(g):
        g3 = g.reshape(n, f, ho * wo)
        gw = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape) if w.requires_grad else None
        gb = g3.sum(axis=(0, 2)) if (b is not None and b.requires_grad) else None
        gx = None
        if x.requires_grad:
            dcols = np.matmul(wmat.T, g3).reshape(n, c, kh, kw, ho, wo)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, :, i, j]
            gx = np.ascontiguousarray(gxp[:, :, p:p + h, p:p + wd]) if p else gxp
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _make("conv2d", out, parents, backward)


def maxpool2d(x, kernel: int = 2) -> Tensor:
    """Non-overlapping max pooling (stride == kernel); spatial dims must divide."""
    x = _as_tensor(x)
    k = int(kernel)
    if x.ndim != 4 or x.shape[2] % k or x.shape[3] % k:
        raise ShapeError("maxpool2d", x.shape, (k, k))
    n, c, h, w = x.shape
    views = [x.data[:, :, i::k, j::k] for i in range(k) for j in range(k)]
    out = views[0].copy()
    for v in views[1:]:
        np.maximum(out, v, out=out)

    def backward(g):
        gx = np.zeros_like(x.data)
        taken = np.zeros(out.shape, dtype=bool)
        for pos, v in enumerate(views):
            hit = (v == out) & ~taken
            taken |= hit
            i, j = divmod(pos, k)
            gx[:, :, i::k, j::k] = g * hit
        return (gx,)

    return _make("maxpool2d", out, (x,), backward)


# pointwise nonlinearities

def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return _make("relu", x.data * mask, (x,), lambda g: (g * mask,))


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)
    return _make("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def log(x) -> Tensor:
    x = _as_tensor(x)
    if np.any(x.data <= 0):
        raise NumericError("log: non-positive argument")
    return _make("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def exp(x) -> Tensor:
    x = _as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return _make("exp", out, (x,), lambda g: (g * out,))


def clip(x, lo: Optional[float] = None, hi: Optional[float] = None) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only where the input was inside."""
    x = _as_tensor(x)
    out = np.clip(x.data, lo, hi)
    inside = np.ones(x.shape, dtype=bool)
    if lo is not None:
        inside &= x.data >= lo
    if hi is not None:
        inside &= x.data <= hi
    return _make("clip", out, (x,), lambda g: (g * inside,))


def maximum(x, floor: float) -> Tensor:
    """Elementwise max against a scalar; ties route the gradient to ``x``."""
    x = _as_tensor(x)
    keep = x.data >= floor
    return _make("maximum", np.where(keep, x.data, floor), (x,), lambda g: (g * keep,))


# reductions and shape

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = _as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    out = np.sum(x.data, axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make("sum", np.asarray(out), (x,), backward)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if count == 0:
        raise ShapeError("mean", x.shape)
    return sum(x, axis, keepdims) * (1.0 / count)


def max(x, axis: int = -1) -> Tensor:  # noqa: A001
    """Max along one axis (no keepdims); gradient goes to the first argmax."""
    x = _as_tensor(x)
    ax = axis % x.ndim
    idx = np.expand_dims(x.data.argmax(axis=ax), ax)
    out = np.take_along_axis(x.data, idx, axis=ax).squeeze(ax)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, np.expand_dims(g, ax), axis=ax)
        return (gx,)

    return _make("max", out, (x,), backward)


def take(x, index: np.ndarray) -> Tensor:
    """Row-wise pick ``x[i, index[i]]`` from a 2-D tensor."""
    x = _as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    if x.ndim != 2 or index.shape != (x.shape[0],):
        raise ShapeError("take", x.shape, index.shape)
    rows = np.arange(x.shape[0])
    out = x.data[rows, index]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[rows, index] = g
        return (gx,)

    return _make("take", out, (x,), backward)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, shape) from None
    return _make("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def softmax(logits, axis: int = -1) -> Tensor:
    z = _as_tensor(logits)
    shifted = z.data - z.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make("softmax", s, (z,), backward)


def log_softmax(logits, axis: int = -1) -> Tensor:
    z = _as_tensor(logits)
    shifted = z.data - z.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    s = np.exp(out)
    return _make("log_softmax", out, (z,),
                 lambda g: (g - s * g.sum(axis=axis, keepdims=True),))


def finite_difference_check(f: Callable[[Tensor], Tensor], x, step: float = 1e-5) -> float:
    """Max relative error between autodiff and central differences.

    Error per coordinate is ``|auto - numeric| / max(1, |numeric|)``.
    """
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    xt = Tensor(x0.copy(), requires_grad=True)
    out = f(xt)
    if out.size != 1:
        raise GraphError("finite_difference_check needs a scalar-valued f")
    if not np.isfinite(out.data).all():
        raise NumericError("f is not finite at x")
    out.backward()
    auto = xt.grad if xt.grad is not None else np.zeros_like(x0)

    numeric = np.zeros(x0.size)
    flat = x0.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = f(Tensor(x0)).item()
            flat[i] = orig - step
            fm = f(Tensor(x0)).item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"f is not finite near coordinate {i}")
            numeric[i] = (fp - fm) / (2.0 * step)
    err = np.abs(auto.reshape(-1) - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max()) if err.size else 0.0
