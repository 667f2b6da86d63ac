"""Differentiable primitives.

Broadcasting is deliberately restricted to the cases the network uses:
python scalars against tensors, per-channel bias inside ``matvec``/conv,
and the two explicit attention products (``scale_channels``,
``scale_map``).  Anything else raises a ShapeError.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import (Tensor, ShapeError, accumulate, as_tensor, note_kink,
                     record, same_shape)

__all__ = [
    "add", "sub", "mul", "div", "one_minus", "relu", "sigmoid", "log",
    "clamp", "concat", "stack_time", "reshape", "conv2d", "conv3d",
    "batch_norm", "upsample_bilinear", "upsample_nearest",
    "global_avg_pool", "matvec", "scale_channels", "scale_map",
    "sum_all", "mean_all",
]


def _binary_operands(name, a, b):
    """Resolve a binary op's operands: tensor/tensor (same shape) or scalar."""
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        same_shape(name, a, b)
        return a, b, None
    if isinstance(a, Tensor) and np.isscalar(b):
        return a, None, float(b)
    if isinstance(b, Tensor) and np.isscalar(a):
        return b, None, float(a)
    raise ShapeError(f"{name}: expected Tensor operands or a Tensor and a "
                     f"python scalar, got {type(a).__name__}/{type(b).__name__}")


def add(a, b) -> Tensor:
    """Elementwise a + b."""
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        same_shape("add", a, b)
        out = Tensor(a.data + b.data)

        def adjoint(g):
            accumulate(a, g)
            accumulate(b, g)

        return record("add", (a, b), out, adjoint)
    t, _, s = _binary_operands("add", a, b)
    out = Tensor(t.data + t.data.dtype.type(s))
    return record("add", (t,), out, lambda g: accumulate(t, g))


def sub(a, b) -> Tensor:
    """Elementwise a - b."""
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        same_shape("sub", a, b)
        out = Tensor(a.data - b.data)

        def adjoint(g):
            accumulate(a, g)
            accumulate(b, -g)

        return record("sub", (a, b), out, adjoint)
    if isinstance(a, Tensor) and np.isscalar(b):
        out = Tensor(a.data - a.data.dtype.type(float(b)))
        return record("sub", (a,), out, lambda g: accumulate(a, g))
    if isinstance(b, Tensor) and np.isscalar(a):
        out = Tensor(b.data.dtype.type(float(a)) - b.data)
        return record("sub", (b,), out, lambda g: accumulate(b, -g))
    raise ShapeError(f"sub: expected Tensor operands or a Tensor and a "
                     f"python scalar, got {type(a).__name__}/{type(b).__name__}")


def mul(a, b) -> Tensor:
    """Elementwise a * b."""
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        same_shape("mul", a, b)
        out = Tensor(a.data * b.data)

        def adjoint(g):
            accumulate(a, g * b.data)
            accumulate(b, g * a.data)

        return record("mul", (a, b), out, adjoint)
    t, _, s = _binary_operands("mul", a, b)
    s = t.data.dtype.type(s)
    out = Tensor(t.data * s)
    return record("mul", (t,), out, lambda g: accumulate(t, g * s))


def div(a, b) -> Tensor:
    """Elementwise a / b."""
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        same_shape("div", a, b)
        out = Tensor(a.data / b.data)

        def adjoint(g):
            accumulate(a, g / b.data)
            accumulate(b, -g * a.data / (b.data * b.data))

        return record("div", (a, b), out, adjoint)
    if isinstance(a, Tensor):
        s = a.data.dtype.type(float(b))
        out = Tensor(a.data / s)
        return record("div", (a,), out, lambda g: accumulate(a, g / s))
    raise ShapeError("div: scalar / tensor is not supported")


def one_minus(x: Tensor) -> Tensor:
    """1 - x."""
    x = as_tensor(x)
    out = Tensor(x.data.dtype.type(1.0) - x.data)
    return record("one_minus", (x,), out, lambda g: accumulate(x, -g))


def relu(x: Tensor) -> Tensor:
    """max(x, 0); the subgradient at 0 is 0."""
    mask = x.data > 0.0
    note_kink(mask, float(np.abs(x.data).min()) if x.size else np.inf)
    out = Tensor(np.maximum(x.data, 0.0))
    return record("relu", (x,), out, lambda g: accumulate(x, g * mask))


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, overflow-safe for large |x|."""
    d = x.data
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y)
    return record("sigmoid", (x,), out,
                  lambda g: accumulate(x, g * y * (1.0 - y)))


def log(x: Tensor) -> Tensor:
    """Natural logarithm; callers must keep values positive."""
    out = Tensor(np.log(x.data))
    return record("log", (x,), out, lambda g: accumulate(x, g / x.data))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip into [lo, hi]; gradient is zero where the bound binds."""
    inside = (x.data > lo) & (x.data < hi)
    margin = float(np.minimum(np.abs(x.data - lo), np.abs(x.data - hi)).min()) \
        if x.size else np.inf
    note_kink(inside, margin)
    out = Tensor(np.clip(x.data, lo, hi))
    return record("clamp", (x,), out, lambda g: accumulate(x, g * inside))


def concat(parts, axis: int) -> Tensor:
    """Join tensors along an existing axis."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat: need at least one tensor")
    nd = parts[0].ndim
    for p in parts[1:]:
        if p.ndim != nd:
            raise ShapeError("concat: rank mismatch")
        for ax in range(nd):
            if ax != axis and p.shape[ax] != parts[0].shape[ax]:
                raise ShapeError(
                    f"concat: shapes differ on axis {ax}: "
                    f"{parts[0].shape} vs {p.shape}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    offsets = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def adjoint(g):
        for p, piece in zip(parts, np.split(g, offsets, axis=axis)):
            accumulate(p, piece)

    return record("concat", tuple(parts), out, adjoint)


def stack_time(a: Tensor, b: Tensor) -> Tensor:
    """Stack two [N,C,H,W] maps into [N,C,2,H,W] along a new time axis."""
    same_shape("stack_time", a, b)
    if a.ndim != 4:
        raise ShapeError(f"stack_time: expected rank-4 inputs, got {a.shape}")
    out = Tensor(np.stack([a.data, b.data], axis=2))

    def adjoint(g):
        accumulate(a, g[:, :, 0])
        accumulate(b, g[:, :, 1])

    return record("stack_time", (a, b), out, adjoint)


def reshape(x: Tensor, shape) -> Tensor:
    """View with a new shape of the same total size."""
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    out = Tensor(x.data.reshape(shape))
    return record("reshape", (x,), out,
                  lambda g: accumulate(x, g.reshape(x.shape)))


# ---------------------------------------------------------------------------
# Convolutions (cross-correlation convention, no kernel flip)
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias, stride: int = 1,
           padding: int = 0) -> Tensor:
    """2-d cross-correlation of [N,C,H,W] with [K,C,kh,kw] plus bias."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be [N,C,H,W], got {x.shape}")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d: weight must be [K,C,kh,kw], got {weight.shape}")
    n, c, h, w = x.shape
    k, cw, kh, kw = weight.shape
    if cw != c:
        raise ShapeError(f"conv2d: input has {c} channels on axis 1 but "
                         f"weight expects {cw}")
    if stride < 1 or padding < 0:
        raise ShapeError("conv2d: stride must be >= 1 and padding >= 0")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp:
        raise ShapeError(f"conv2d: kernel height {kh} exceeds padded input "
                         f"height {hp} (axis 2)")
    if kw > wp:
        raise ShapeError(f"conv2d: kernel width {kw} exceeds padded input "
                         f"width {wp} (axis 3)")
    if bias is not None and bias.shape != (k,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match "
                         f"{k} output channels (axis 1)")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding),
                         (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # win: [N, C, H', W', kh, kw]
    out_d = np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3]))
    out_d = np.ascontiguousarray(out_d.transpose(0, 3, 1, 2))
    if bias is not None:
        out_d += bias.data[None, :, None, None]
    out = Tensor(out_d)
    ho, wo = out_d.shape[2], out_d.shape[3]
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def adjoint(g):
        if bias is not None and bias.requires_grad:
            accumulate(bias, g.sum(axis=(0, 2, 3)))
        if weight.requires_grad:
            accumulate(weight,
                       np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3])))
        if x.requires_grad:
            # d/d(window) in one contraction, then scatter the taps back.
            gwin = np.tensordot(g, weight.data, axes=(1, 0))
            gwin = gwin.transpose(0, 3, 1, 2, 4, 5)  # [N,C,H',W',kh,kw]
            gxp = np.zeros_like(xp)
            for i in range(kh):
                hi = i + stride * (ho - 1) + 1
                for j in range(kw):
                    wi = j + stride * (wo - 1) + 1
                    gxp[:, :, i:hi:stride, j:wi:stride] += gwin[..., i, j]
            if padding:
                gxp = gxp[:, :, padding:padding + h, padding:padding + w]
            accumulate(x, gxp)

    return record("conv2d", inputs, out, adjoint)


def conv3d(x: Tensor, weight: Tensor, bias, padding=(0, 0, 0)) -> Tensor:
    """3-d cross-correlation of [N,C,T,H,W] with [K,C,kt,kh,kw], stride 1."""
    if x.ndim != 5:
        raise ShapeError(f"conv3d: input must be [N,C,T,H,W], got {x.shape}")
    if weight.ndim != 5:
        raise ShapeError(f"conv3d: weight must be [K,C,kt,kh,kw], got {weight.shape}")
    n, c, t, h, w = x.shape
    k, cw, kt, kh, kw = weight.shape
    if cw != c:
        raise ShapeError(f"conv3d: input has {c} channels on axis 1 but "
                         f"weight expects {cw}")
    pt, ph, pw = padding
    dims = (t + 2 * pt, h + 2 * ph, w + 2 * pw)
    for ax, (kdim, pdim) in enumerate(zip((kt, kh, kw), dims), start=2):
        if kdim > pdim:
            raise ShapeError(f"conv3d: kernel size {kdim} exceeds padded "
                             f"input size {pdim} (axis {ax})")
    if bias is not None and bias.shape != (k,):
        raise ShapeError(f"conv3d: bias shape {bias.shape} does not match "
                         f"{k} output channels (axis 1)")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw))) \
        if any(padding) else x.data
    win = sliding_window_view(xp, (kt, kh, kw), axis=(2, 3, 4))
    # win: [N, C, T', H', W', kt, kh, kw]
    out_d = np.tensordot(win, weight.data, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
    out_d = np.ascontiguousarray(out_d.transpose(0, 4, 1, 2, 3))
    if bias is not None:
        out_d += bias.data[None, :, None, None, None]
    out = Tensor(out_d)
    to, ho, wo = out_d.shape[2:]
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def adjoint(g):
        if bias is not None and bias.requires_grad:
            accumulate(bias, g.sum(axis=(0, 2, 3, 4)))
        if weight.requires_grad:
            accumulate(weight,
                       np.tensordot(g, win, axes=([0, 2, 3, 4], [0, 2, 3, 4])))
        if x.requires_grad:
            gwin = np.tensordot(g, weight.data, axes=(1, 0))
            gwin = gwin.transpose(0, 4, 1, 2, 3, 5, 6, 7)
            gxp = np.zeros_like(xp)
            for u in range(kt):
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, u:u + to, i:i + ho, j:j + wo] += \
                            gwin[..., u, i, j]
            if any(padding):
                gxp = gxp[:, :, pt:pt + t, ph:ph + h, pw:pw + w]
            accumulate(x, gxp)

    return record("conv3d", inputs, out, adjoint)


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over [N, C, ...spatial] tensors.

    Training mode normalizes by the batch statistics and updates the
    running estimates in place (exponential moving average, unbiased
    variance); eval mode applies the running estimates as constants.
    """
    if x.ndim < 2:
        raise ShapeError(f"batch_norm: input must be [N,C,...], got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: gamma/beta must have shape ({c},) to "
                         f"match channel axis 1")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    m = x.size // c

    if training:
        if m <= 1:
            raise ShapeError("batch_norm: training mode needs more than one "
                             "value per channel (N * spatial > 1)")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        from .tensor import grad_enabled
        if grad_enabled():
            running_mean *= (1.0 - momentum)
            running_mean += momentum * mu
            running_var *= (1.0 - momentum)
            running_var += momentum * var * (m / (m - 1))
    else:
        mu = running_mean.astype(x.dtype, copy=False)
        var = running_var.astype(x.dtype, copy=False)

    istd = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = (x.data - mu.reshape(bshape)) * istd.reshape(bshape)
    out = Tensor(gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape))

    def adjoint(g):
        accumulate(beta, g.sum(axis=axes))
        accumulate(gamma, (g * xhat).sum(axis=axes))
        if not x.requires_grad:
            return
        dxhat = g * gamma.data.reshape(bshape)
        if training:
            s1 = dxhat.sum(axis=axes).reshape(bshape)
            s2 = (dxhat * xhat).sum(axis=axes).reshape(bshape)
            gx = (istd.reshape(bshape) / m) * (m * dxhat - s1 - xhat * s2)
        else:
            gx = dxhat * istd.reshape(bshape)
        accumulate(x, gx)

    return record("batch_norm", (x, gamma, beta), out, adjoint)


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _bilinear_matrix(factor: int, size: int) -> np.ndarray:
    """Dense [size*factor, size] interpolation operator, half-pixel centers."""
    out_size = size * factor
    mat = np.zeros((out_size, size), dtype=np.float64)
    for o in range(out_size):
        s = (o + 0.5) / factor - 0.5
        s = min(max(s, 0.0), float(size - 1))
        i0 = int(np.floor(s))
        i1 = min(i0 + 1, size - 1)
        f = s - i0
        mat[o, i0] += 1.0 - f
        mat[o, i1] += f
    return mat


@lru_cache(maxsize=None)
def _nearest_matrix(factor: int, size: int) -> np.ndarray:
    mat = np.zeros((size * factor, size), dtype=np.float64)
    for o in range(size * factor):
        mat[o, o // factor] = 1.0
    return mat


def _upsample(x: Tensor, factor: int, build, name: str) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"{name}: input must be [N,C,H,W], got {x.shape}")
    if factor < 1:
        raise ShapeError(f"{name}: factor must be a positive integer")
    if factor == 1:
        return reshape(x, x.shape)
    uh = build(factor, x.shape[2]).astype(x.dtype)
    uw = build(factor, x.shape[3]).astype(x.dtype)
    # Separable linear operator: rows then columns, both as contractions.
    y = np.tensordot(x.data, uh, axes=(2, 1)).transpose(0, 1, 3, 2)
    y = np.tensordot(y, uw, axes=(3, 1))
    out = Tensor(np.ascontiguousarray(y))

    def adjoint(g):
        gy = np.tensordot(g, uw, axes=(3, 0))
        gx = np.tensordot(gy, uh, axes=(2, 0)).transpose(0, 1, 3, 2)
        accumulate(x, np.ascontiguousarray(gx))

    return record(name, (x,), out, adjoint)


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    """Bilinear upsampling by an integer factor (half-pixel convention)."""
    return _upsample(x, factor, _bilinear_matrix, "upsample_bilinear")


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Nearest-neighbour upsampling by an integer factor."""
    return _upsample(x, factor, _nearest_matrix, "upsample_nearest")


# ---------------------------------------------------------------------------
# Pooling, projection, attention products
# ---------------------------------------------------------------------------

def global_avg_pool(x: Tensor) -> Tensor:
    """[N,C,H,W] -> [N,C] spatial mean."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool: input must be [N,C,H,W], got {x.shape}")
    n, c, h, w = x.shape
    out = Tensor(x.data.mean(axis=(2, 3)))
    scale = 1.0 / (h * w)

    def adjoint(g):
        accumulate(x, np.broadcast_to((g * scale)[:, :, None, None], x.shape))

    return record("global_avg_pool", (x,), out, adjoint)


def matvec(x: Tensor, weight: Tensor, bias=None) -> Tensor:
    """[N,Ci] @ weight[Co,Ci]^T (+ bias[Co]) -> [N,Co]."""
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"matvec: expected x [N,Ci] and weight [Co,Ci], got "
                         f"{x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"matvec: x has {x.shape[1]} features on axis 1 but "
                         f"weight expects {weight.shape[1]}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"matvec: bias shape {bias.shape} does not match "
                         f"{weight.shape[0]} outputs")
    y = x.data @ weight.data.T
    if bias is not None:
        y = y + bias.data[None, :]
    out = Tensor(y)
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def adjoint(g):
        accumulate(x, g @ weight.data)
        accumulate(weight, g.T @ x.data)
        if bias is not None:
            accumulate(bias, g.sum(axis=0))

    return record("matvec", inputs, out, adjoint)


def scale_channels(x: Tensor, s: Tensor) -> Tensor:
    """[N,C,H,W] * s[N,C]: per-channel gate from a squeeze vector."""
    if x.ndim != 4 or s.ndim != 2 or x.shape[:2] != s.shape:
        raise ShapeError(f"scale_channels: expected x [N,C,H,W] and s [N,C], "
                         f"got {x.shape} and {s.shape}")
    sb = s.data[:, :, None, None]
    out = Tensor(x.data * sb)

    def adjoint(g):
        accumulate(x, g * sb)
        accumulate(s, (g * x.data).sum(axis=(2, 3)))

    return record("scale_channels", (x, s), out, adjoint)


def scale_map(x: Tensor, m: Tensor) -> Tensor:
    """[N,C,H,W] * m[N,1,H,W]: single-channel attention map broadcast."""
    if (x.ndim != 4 or m.ndim != 4 or m.shape[1] != 1
            or x.shape[0] != m.shape[0] or x.shape[2:] != m.shape[2:]):
        raise ShapeError(f"scale_map: expected x [N,C,H,W] and m [N,1,H,W], "
                         f"got {x.shape} and {m.shape}")
    out = Tensor(x.data * m.data)

    def adjoint(g):
        accumulate(x, g * m.data)
        accumulate(m, (g * x.data).sum(axis=1, keepdims=True))

    return record("scale_map", (x, m), out, adjoint)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    """Scalar sum over every element."""
    out = Tensor(x.data.sum())

    def adjoint(g):
        accumulate(x, np.broadcast_to(g, x.shape))

    return record("sum", (x,), out, adjoint)


def mean_all(x: Tensor) -> Tensor:
    """Scalar mean over every element."""
    out = Tensor(x.data.mean())
    scale = 1.0 / x.size

    def adjoint(g):
        accumulate(x, np.broadcast_to(g * scale, x.shape))

    return record("mean", (x,), out, adjoint)
