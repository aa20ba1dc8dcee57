"""Dense-tensor arithmetic with reverse-mode differentiation.

Tensors wrap numpy arrays (row-major, float32 or float64).  Every primitive
records its inputs and a backward closure on the tensor it produces; the
resulting DAG is the differentiation tape.  ``backward(loss)`` replays the
tape in reverse topological order, visiting each node exactly once, and
accumulates gradients on leaves created with ``requires_grad=True``.

Design constraints honored here:

* no implicit broadcasting beyond scalar-tensor; any other broadcast is an
  explicit ``expand``
* shape mismatches raise ``ShapeError`` naming both shapes
* elementwise division guards against divisors with magnitude < 1e-30
* convolution is computed directly (im2col + matmul), never via FFT
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericsError, ShapeError

DIV_GUARD = 1e-30

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class _Node:
    """One tape entry: the producing op, its parents, and the backward rule."""

    __slots__ = ("op", "parents", "bwd")

    def __init__(self, op: str, parents: tuple, bwd: Callable):
        self.op = op
        self.parents = parents
        self.bwd = bwd


class Tensor:
    """A dense real array plus an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "_ctx", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._ctx: _Node | None = None
        self.name = name

    # -- introspection -----------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    # -- operators -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_const(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _as_const(value, like: Tensor) -> Tensor:
    return Tensor(np.asarray(value, dtype=like.dtype))


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes {a.shape} and {b.shape} do not match")


def _result(op: str, data: np.ndarray, parents: Sequence[Tensor], bwd: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    needs = _grad_enabled and any(p.requires_grad or p._ctx is not None for p in parents)
    out.requires_grad = needs
    out._ctx = _Node(op, tuple(parents), bwd) if needs else None
    return out


# ---------------------------------------------------------------------------
# elementwise primitives
# ---------------------------------------------------------------------------

def _is_scalar(x) -> bool:
    return np.isscalar(x) or (isinstance(x, np.ndarray) and x.ndim == 0)


def _binary(op, a: Tensor, b, fwd, bwd_a, bwd_b):
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a))
    if isinstance(b, Tensor):
        if b.data.ndim != 0 and a.data.ndim != 0:
            _same_shape(a, b, op)
        data = fwd(a.data, b.data)

        def bwd(g):
            ga = bwd_a(g, a.data, b.data)
            gb = bwd_b(g, a.data, b.data)
            # scalar operand: reduce gradient to its shape
            if ga is not None and ga.shape != a.data.shape:
                ga = np.sum(ga).reshape(a.data.shape) if a.data.ndim == 0 else ga
            if gb is not None and gb.shape != b.data.shape:
                gb = np.sum(gb).reshape(b.data.shape) if b.data.ndim == 0 else gb
            return ga, gb

        return _result(op, data, (a, b), bwd)

    if not _is_scalar(b):
        raise ShapeError(f"{op}: second operand must be a Tensor or scalar, got shape "
                         f"{np.asarray(b).shape} against {a.shape}")
    bval = float(b)
    data = fwd(a.data, bval)

    def bwd_scalar(g):
        return (bwd_a(g, a.data, bval),)

    return _result(op, data, (a,), bwd_scalar)


def add(a, b):
    return _binary("add", a, b, lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _binary("sub", a, b, lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _binary("mul", a, b, lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b):
    divisor = b.data if isinstance(b, Tensor) else np.asarray(b)
    if np.min(np.abs(divisor)) < DIV_GUARD:
        raise NumericsError(f"div: divisor magnitude below {DIV_GUARD:g} (degenerate scale)")
    return _binary("div", a, b, lambda x, y: x / y,
                   lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))


def neg(a: Tensor):
    return _result("neg", -a.data, (a,), lambda g: (-g,))


def tabs(a: Tensor):
    return _result("abs", np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def exp(a: Tensor):
    out_data = np.exp(a.data)
    return _result("exp", out_data, (a,), lambda g: (g * out_data,))


def log(a: Tensor):
    return _result("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor):
    out_data = np.sqrt(a.data)
    return _result("sqrt", out_data, (a,), lambda g: (g * 0.5 / out_data,))


def tanh(a: Tensor):
    out_data = np.tanh(a.data)
    return _result("tanh", out_data, (a,), lambda g: (g * (1.0 - out_data * out_data),))


def sigmoid(a: Tensor):
    out_data = 1.0 / (1.0 + np.exp(-a.data))
    return _result("sigmoid", out_data, (a,),
                   lambda g: (g * out_data * (1.0 - out_data),))


def relu(a: Tensor):
    mask = a.data > 0
    return _result("relu", np.where(mask, a.data, 0.0), (a,),
                   lambda g: (g * mask,))


def leaky_relu(a: Tensor, slope: float = 0.2):
    mask = a.data > 0
    factor = np.where(mask, 1.0, slope).astype(a.dtype)
    return _result("leaky_relu", a.data * factor, (a,), lambda g: (g * factor,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor):
    # tanh approximation; derivative uses the same closed form
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * (x + 0.044715 * (x2 * x)))
    half_1pt = 0.5 * (1.0 + t)
    out_data = x * half_1pt

    def bwd(g):
        dinner = _GELU_C * (1.0 + 0.134145 * x2)
        return (g * (half_1pt + x * (0.5 * (1.0 - t * t)) * dinner),)

    return _result("gelu", out_data, (a,), bwd)


# ---------------------------------------------------------------------------
# shape primitives
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape):
    shape = tuple(shape) if isinstance(shape, (tuple, list)) else (shape,)
    old_shape = a.data.shape
    data = a.data.reshape(shape)
    return _result("reshape", data, (a,), lambda g: (g.reshape(old_shape),))


def permute(a: Tensor, axes: Sequence[int]):
    axes = tuple(axes)
    inv = np.argsort(axes)
    return _result("permute", np.transpose(a.data, axes), (a,),
                   lambda g: (np.transpose(g, inv),))


def expand(a: Tensor, shape) -> Tensor:
    """Explicit broadcast of size-1 (or missing leading) axes to ``shape``."""
    shape = tuple(shape)
    data = np.broadcast_to(a.data, shape)
    in_shape = a.data.shape

    def bwd(g):
        grad = g
        extra = grad.ndim - len(in_shape)
        if extra:
            grad = grad.sum(axis=tuple(range(extra)))
        axes = tuple(i for i, n in enumerate(in_shape) if n == 1 and grad.shape[i] != 1)
        if axes:
            grad = grad.sum(axis=axes, keepdims=True)
        return (grad,)

    return _result("expand", data, (a,), bwd)


def slice_axis(a: Tensor, axis: int, start: int, stop: int):
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    data = a.data[idx]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _result("slice", data, (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int):
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        grads = []
        for i in range(len(tensors)):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(idx)])
        return tuple(grads)

    return _result("concat", data, tuple(tensors), bwd)


def tsum(a: Tensor, axis=None, keepdims: bool = False):
    data = a.data.sum(axis=axis, keepdims=keepdims)
    in_shape = a.data.shape

    def bwd(g):
        grad = np.asarray(g)
        if axis is None:
            return (np.broadcast_to(grad, in_shape).copy(),)
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        if not keepdims:
            for ax in sorted(ax % len(in_shape) for ax in axes):
                grad = np.expand_dims(grad, ax)
        return (np.broadcast_to(grad, in_shape).copy(),)

    return _result("sum", data, (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims: bool = False):
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.data.shape[ax] for ax in axes]))
    total = tsum(a, axis=axis, keepdims=keepdims)
    return mul(total, 1.0 / count)


def softmax(a: Tensor, axis: int = -1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - dot),)

    return _result("softmax", out_data, (a,), bwd)


# ---------------------------------------------------------------------------
# linear-algebra primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor):
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    if a.data.ndim < 1 or b.data.ndim < 1:
        raise ShapeError(f"matmul: operands must be at least 1-D, got {a.shape} and {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeError(f"matmul: inner dimensions of {a.shape} and {b.shape} do not match")
    data = np.matmul(a.data, b.data)

    def _unbroadcast(grad, shape):
        if grad.shape == shape:
            return grad
        extra = grad.ndim - len(shape)
        if extra:
            grad = grad.sum(axis=tuple(range(extra)))
        axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
        if axes:
            grad = grad.sum(axis=axes, keepdims=True)
        return grad

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _result("matmul", data, (a, b), bwd)


def matrix_inverse(a: Tensor):
    inv = np.linalg.inv(a.data)

    def bwd(g):
        return (-inv.T @ g @ inv.T,)

    return _result("matrix_inverse", inv, (a,), bwd)


def slog_abs_det(a: Tensor):
    """log|det A| as a scalar tensor; backward is A^{-T}."""
    sign, logabs = np.linalg.slogdet(a.data)
    if sign == 0:
        raise NumericsError("slog_abs_det: matrix is singular")
    inv_t = np.linalg.inv(a.data).T

    def bwd(g):
        return (np.asarray(g, dtype=a.dtype) * inv_t,)

    return _result("slog_abs_det", np.asarray(logabs, dtype=a.dtype), (a,), bwd)


# ---------------------------------------------------------------------------
# spatial primitives (NHWC or HWC layouts)
# ---------------------------------------------------------------------------

def _spatial4d(x: np.ndarray, op: str):
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"{op}: expected rank-3 (H,W,C) or rank-4 (N,H,W,C) input, got {x.shape}")


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0):
    """Direct 2-D convolution, zero padding, stride 1 or 2.

    x: (H,W,Cin) or (N,H,W,Cin); w: (kh,kw,Cin,Cout); b: (Cout,) optional.
    Output spatial extent: (in + 2*padding - k)//stride + 1.
    """
    xd, squeeze = _spatial4d(x.data, "conv2d")
    kh, kw, cin, cout = w.data.shape
    if xd.shape[3] != cin:
        raise ShapeError(f"conv2d: input channels {xd.shape[3]} != kernel channels {cin} "
                         f"(input {x.shape}, kernel {w.shape})")
    if stride not in (1, 2):
        raise ShapeError(f"conv2d: stride must be 1 or 2, got {stride}")
    n, h, wd, _ = xd.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"conv2d: kernel {w.shape} too large for input {x.shape} "
                         f"with padding {padding}")

    if padding:
        xp = np.pad(xd, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    else:
        xp = xd
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (n,h',w',c,kh,kw)
    win = win[:, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))  # (n,oh,ow,kh,kw,c)
    cols = cols.reshape(n * oh * ow, kh * kw * cin)
    wmat = w.data.reshape(kh * kw * cin, cout)
    out = cols @ wmat
    if b is not None:
        out = out + b.data
    out = out.reshape(n, oh, ow, cout)
    if squeeze:
        out = out[0]

    x_needs = x.requires_grad or x._ctx is not None

    def bwd(g):
        gd = g[None] if squeeze else g
        gflat = gd.reshape(n * oh * ow, cout)
        gw = (cols.T @ gflat).reshape(kh, kw, cin, cout)
        gx = None
        if x_needs:
            if stride == 1 and kh - 1 - padding >= 0 and kw - 1 - padding >= 0:
                # input gradient is a correlation of g with the flipped kernel
                pg = kh - 1 - padding
                gp = np.pad(gd, ((0, 0), (pg, pg), (pg, pg), (0, 0))) if pg else gd
                gwin = sliding_window_view(gp, (kh, kw), axis=(1, 2))
                gcols2 = np.ascontiguousarray(gwin.transpose(0, 1, 2, 4, 5, 3))
                gcols2 = gcols2.reshape(n * h * wd, kh * kw * cout)
                wflip = w.data[::-1, ::-1].transpose(0, 1, 3, 2)
                gx = (gcols2 @ wflip.reshape(kh * kw * cout, cin)).reshape(n, h, wd, cin)
            else:
                # general path: scatter-add the per-tap contributions
                gcols = (gflat @ wmat.T).reshape(n, oh, ow, kh, kw, cin)
                gxp = np.zeros_like(xp)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :] += \
                            gcols[:, :, :, i, j, :]
                gx = gxp[:, padding:padding + h, padding:padding + wd, :] if padding else gxp
            if squeeze:
                gx = gx[0]
        grads = [gx, gw]
        if b is not None:
            grads.append(gflat.sum(axis=0))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return _result("conv2d", out, parents, bwd)


def depthwise_conv2d(x: Tensor, w: Tensor, padding: int = 0):
    """Per-channel 2-D convolution (stride 1). w: (kh,kw,C)."""
    xd, squeeze = _spatial4d(x.data, "depthwise_conv2d")
    kh, kw, c = w.data.shape
    if xd.shape[3] != c:
        raise ShapeError(f"depthwise_conv2d: channels {xd.shape[3]} != kernel channels {c}")
    n, h, wd, _ = xd.shape
    oh = h + 2 * padding - kh + 1
    ow = wd + 2 * padding - kw + 1
    xp = np.pad(xd, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else xd
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (n,oh,ow,c,kh,kw)
    out = np.einsum("nhwcij,ijc->nhwc", win, w.data, optimize=True)
    if squeeze:
        out = out[0]

    def bwd(g):
        gd = g[None] if squeeze else g
        gw = np.einsum("nhwcij,nhwc->ijc", win, gd, optimize=True)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + oh, j:j + ow, :] += gd * w.data[i, j]
        gx = gxp[:, padding:padding + h, padding:padding + wd, :] if padding else gxp
        if squeeze:
            gx = gx[0]
        return gx, gw

    return _result("depthwise_conv2d", out, (x, w), bwd)


def _up2_matrix(n: int, dtype) -> np.ndarray:
    """Row-stochastic 2x bilinear upsampling matrix (half-pixel centers)."""
    m = np.zeros((2 * n, n), dtype=dtype)
    for i in range(n):
        lo = max(i - 1, 0)
        hi = min(i + 1, n - 1)
        m[2 * i, i] += 0.75
        m[2 * i, lo] += 0.25
        m[2 * i + 1, i] += 0.75
        m[2 * i + 1, hi] += 0.25
    return m


def _axslice(ndim: int, axis: int, s: slice) -> tuple:
    return tuple(s if k == axis else slice(None) for k in range(ndim))


def _up2_axis(x: np.ndarray, axis: int) -> np.ndarray:
    """2x stencil along one axis: out[2i] = .75 x[i] + .25 x[i-1 clamped],
    out[2i+1] = .75 x[i] + .25 x[i+1 clamped]."""
    n = x.shape[axis]
    sl = lambda s: _axslice(x.ndim, axis, s)
    xm = np.concatenate([x[sl(slice(0, 1))], x[sl(slice(0, n - 1))]], axis=axis)
    xq = np.concatenate([x[sl(slice(1, n))], x[sl(slice(n - 1, n))]], axis=axis)
    shape = list(x.shape)
    shape[axis] = 2 * n
    out = np.empty(shape, dtype=x.dtype)
    out[sl(slice(0, None, 2))] = 0.75 * x + 0.25 * xm
    out[sl(slice(1, None, 2))] = 0.75 * x + 0.25 * xq
    return out


def _up2_axis_adjoint(g: np.ndarray, axis: int) -> np.ndarray:
    n = g.shape[axis] // 2
    sl = lambda s: _axslice(g.ndim, axis, s)
    ge = g[sl(slice(0, None, 2))]
    go = g[sl(slice(1, None, 2))]
    gx = 0.75 * (ge + go)
    sn = lambda s: _axslice(gx.ndim, axis, s)
    gx[sn(slice(0, n - 1))] += 0.25 * ge[sn(slice(1, n))]
    gx[sn(slice(0, 1))] += 0.25 * ge[sn(slice(0, 1))]
    gx[sn(slice(1, n))] += 0.25 * go[sn(slice(0, n - 1))]
    gx[sn(slice(n - 1, n))] += 0.25 * go[sn(slice(n - 1, n))]
    return gx


def bilinear_up2(x: Tensor):
    """Bilinear 2x spatial upsampling of (H,W,C) or (N,H,W,C); half-pixel
    centers with edge clamping, so constant maps stay constant."""
    xd, squeeze = _spatial4d(x.data, "bilinear_up2")
    out = _up2_axis(_up2_axis(xd, 1), 2)
    if squeeze:
        out = out[0]

    def bwd(g):
        gd = g[None] if squeeze else g
        gx = _up2_axis_adjoint(_up2_axis_adjoint(gd, 2), 1)
        if squeeze:
            gx = gx[0]
        return (gx,)

    return _result("bilinear_up2", out, (x,), bwd)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor):
    """Accumulate gradients of a scalar loss into every reachable leaf."""
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")

    # iterative reverse topological order
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited or node._ctx is None:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._ctx.parents:
            if p._ctx is not None and id(p) not in visited:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        parent_grads = node._ctx.bwd(g)
        for parent, pg in zip(node._ctx.parents, parent_grads):
            if pg is None:
                continue
            if parent._ctx is None and not parent.requires_grad:
                continue
            if parent._ctx is None:
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            else:
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
    # leaves that double as loss (degenerate but legal)
    if loss._ctx is None and loss.requires_grad:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0


def gradient_map(loss: Tensor, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Run backward and return per-name gradients (zeros for unreachable leaves)."""
    for p in params.values():
        p.grad = None
    backward(loss)
    return {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in params.items()}


def check_finite(x: Tensor | np.ndarray, what: str):
    arr = x.data if isinstance(x, Tensor) else x
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"{what}: non-finite values encountered")
