"""Differentiable operations on :class:`Tensor`.

Feature maps use the (N, C, H, W) layout. Elementwise binary ops require
equal shapes; there is no general broadcasting.
"""
import math
from contextlib import contextmanager

import numpy as np

from .tensor import Tensor, as_tensor

LEAK = 0.2
NORM_EPS = 1e-5

# While a recorder is active, piecewise-linear ops note which side of their
# kink every input lies on. Finite-difference checks use this to keep their
# stencils on one linear piece.
_kink_sides = None


@contextmanager
def record_kinks():
    global _kink_sides
    prev, _kink_sides = _kink_sides, []
    try:
        yield _kink_sides
    finally:
        _kink_sides = prev


def _note_kink(positive):
    if _kink_sides is not None:
        _kink_sides.append(positive)


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch in {op}: {a.shape} vs {b.shape}")


# -- elementwise -------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return Tensor(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")
    return Tensor(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    return Tensor(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "div")
    out = a.data / b.data
    return Tensor(out, (a, b), lambda g: (g / b.data, -g * out / b.data), "div")


def scale(a, k):
    """Multiply by a constant."""
    a = as_tensor(a)
    return Tensor(a.data * k, (a,), lambda g: (g * k,), "scale")


def add_scalar(a, c):
    a = as_tensor(a)
    return Tensor(a.data + c, (a,), lambda g: (g,), "add_scalar")


def shift(a, c):
    """Add a scalar tensor ``c`` (shape ()) to every entry of ``a``."""
    a, c = as_tensor(a), as_tensor(c)
    if c.shape != ():
        raise ValueError(f"shift expects a scalar, got shape {c.shape}")
    return Tensor(a.data + c.data, (a, c), lambda g: (g, g.sum()), "shift")


def neg(a):
    return scale(a, -1.0)


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return Tensor(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    _note_kink(mask)
    return Tensor(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a, slope=LEAK):
    a = as_tensor(a)
    _note_kink(a.data > 0)
    factor = np.where(a.data > 0, 1.0, slope)
    return Tensor(a.data * factor, (a,), lambda g: (g * factor,), "leaky_relu")


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return Tensor(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a):
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))   # overflow-free logistic
    return Tensor(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def abs_(a):
    a = as_tensor(a)
    s = np.sign(a.data)
    _note_kink(a.data > 0)
    return Tensor(np.abs(a.data), (a,), lambda g: (g * s,), "abs")


# -- reductions --------------------------------------------------------------

def sum_(a):
    a = as_tensor(a)
    return Tensor(a.data.sum(), (a,), lambda g: (np.full(a.shape, g),), "sum")


def mean(a):
    a = as_tensor(a)
    n = a.size
    return Tensor(a.data.mean(), (a,), lambda g: (np.full(a.shape, g / n),), "mean")


def mean_rows(a):
    """(M, F) -> (F,) average of the rows, summed with exact rounding.

    ``math.fsum`` makes the result independent of the row order.
    """
    a = as_tensor(a)
    M = a.shape[0]
    if M == 0:
        raise ValueError("mean of zero rows")
    out = np.array([math.fsum(col) for col in a.data.T]) / M
    return Tensor(out, (a,), lambda g: (np.broadcast_to(g / M, a.shape).copy(),), "mean_rows")


def spatial_mean(x):
    """(N, C, H, W) -> (N, C) mean over H and W."""
    x = as_tensor(x)
    hw = x.shape[2] * x.shape[3]

    def bw(g):
        return (np.broadcast_to(g[:, :, None, None] / hw, x.shape).copy(),)
    return Tensor(x.data.mean(axis=(2, 3)), (x,), bw, "spatial_mean")


def spatial_var(x):
    """(N, C, H, W) -> (N, C) population variance over H and W."""
    x = as_tensor(x)
    hw = x.shape[2] * x.shape[3]
    centred = x.data - x.data.mean(axis=(2, 3), keepdims=True)

    def bw(g):
        return (g[:, :, None, None] * 2.0 * centred / hw,)
    return Tensor((centred ** 2).mean(axis=(2, 3)), (x,), bw, "spatial_var")


def instance_standardize(x, eps=NORM_EPS):
    """Per-sample, per-channel (x - mean) / sqrt(var + eps) over spatial dims."""
    x = as_tensor(x)
    hw = x.shape[2] * x.shape[3]
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    centred = x.data - mu
    inv = 1.0 / np.sqrt((centred ** 2).mean(axis=(2, 3), keepdims=True) + eps)
    xhat = centred * inv

    def bw(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gx = (g * xhat).sum(axis=(2, 3), keepdims=True) / hw
        return (inv * (g - gm - xhat * gx),)
    return Tensor(xhat, (x,), bw, "instance_standardize")


def channel_affine(x, gamma, beta):
    """gamma[c] * x[:, c] + beta[c] for (N, C, H, W) x and (C,) gamma, beta."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ValueError(f"shape mismatch in channel_affine: {C} channels, "
                         f"gamma {gamma.shape}, beta {beta.shape}")
    gd = gamma.data[None, :, None, None]
    out = gd * x.data + beta.data[None, :, None, None]

    def bw(g):
        return g * gd, (g * x.data).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))
    return Tensor(out, (x, gamma, beta), bw, "channel_affine")


# -- linear algebra ----------------------------------------------------------

def matmul(a, b):
    """Matrix product for 1-D and 2-D operands (numpy ``@`` semantics)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise ValueError("matmul supports 1-D and 2-D operands")
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"shape mismatch in matmul: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bw(g):
        A, B = a.data, b.data
        if A.ndim == 1 and B.ndim == 1:
            return g * B, g * A
        if A.ndim == 1:
            return B @ g, np.outer(A, g)
        if B.ndim == 1:
            return np.outer(g, B), A.T @ g
        return g @ B.T, A.T @ g
    return Tensor(out, (a, b), bw, "matmul")


def dot(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "dot")
    if a.data.ndim != 1:
        raise ValueError("dot expects vectors")
    return matmul(a, b)


def index_row(W, i):
    """Row ``i`` of a matrix as a vector."""
    W = as_tensor(W)
    if not 0 <= i < W.shape[0]:
        raise IndexError(f"row {i} out of range for {W.shape[0]} rows")

    def bw(g):
        out = np.zeros(W.shape)
        out[i] = g
        return (out,)
    return Tensor(W.data[i].copy(), (W,), bw, "index_row")


def reshape(a, shape):
    a = as_tensor(a)
    return Tensor(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


# -- spatial -----------------------------------------------------------------

def _im2col(xp, k, stride, Ho, Wo):
    N, C = xp.shape[:2]
    cols = np.empty((N, C, k, k, Ho, Wo))
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride]
    return cols.reshape(N, C * k * k, Ho * Wo)


def conv2d(x, w, b=None, stride=1):
    """Zero-padded 'same'-style convolution (cross-correlation), odd square kernel.

    x (N, C, H, W), w (O, C, k, k), b (O,). Padding is k // 2, so stride 1
    keeps H x W and stride 2 halves even sizes.
    """
    x, w = as_tensor(x), as_tensor(w)
    N, C, H, W = x.shape
    O, Cw, k, k2 = w.shape
    if Cw != C or k != k2 or k % 2 == 0:
        raise ValueError(f"shape mismatch in conv2d: input {x.shape}, kernel {w.shape}")
    if stride not in (1, 2):
        raise ValueError("stride must be 1 or 2")
    p = k // 2
    Ho = (H + 2 * p - k) // stride + 1
    Wo = (W + 2 * p - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = _im2col(xp, k, stride, Ho, Wo)             # (N, Ckk, HoWo)
    wm = w.data.reshape(O, -1)
    out = np.matmul(wm, cols).reshape(N, O, Ho, Wo)
    parents = (x, w)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (O,):
            raise ValueError(f"shape mismatch in conv2d bias: {b.shape}")
        out = out + b.data[None, :, None, None]
        parents = (x, w, b)

    def bw(g):
        g2 = g.reshape(N, O, Ho * Wo)
        gw = np.einsum("nop,nkp->ok", g2, cols).reshape(w.shape)
        gcols = np.matmul(wm.T, g2).reshape(N, C, k, k, Ho, Wo)
        gxp = np.zeros(xp.shape)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += gcols[:, :, i, j]
        gx = gxp[:, :, p:p + H, p:p + W]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))
    return Tensor(out, parents, bw, "conv2d")


def upsample2x(x):
    """Nearest-neighbour upsampling by two in H and W."""
    x = as_tensor(x)
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def bw(g):
        N, C, H, W = x.shape
        return (g.reshape(N, C, H, 2, W, 2).sum(axis=(3, 5)),)
    return Tensor(out, (x,), bw, "upsample2x")


def concat(tensors, axis=1):
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    edges = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(np.take(g, np.arange(edges[i], edges[i + 1]), axis=axis)
                     for i in range(len(ts)))
    return Tensor(np.concatenate([t.data for t in ts], axis=axis), ts, bw, "concat")


def channel_slice(x, start, stop):
    x = as_tensor(x)

    def bw(g):
        out = np.zeros(x.shape)
        out[:, start:stop] = g
        return (out,)
    return Tensor(x.data[:, start:stop].copy(), (x,), bw, "channel_slice")


def crop(x, top, left, height, width):
    """Spatial rectangle x[:, :, top:top+height, left:left+width]; must lie inside."""
    x = as_tensor(x)
    H, W = x.shape[2:]
    if top < 0 or left < 0 or top + height > H or left + width > W or height < 1 or width < 1:
        raise ValueError(f"crop rectangle ({top}, {left}, {height}, {width}) outside {H}x{W}")

    def bw(g):
        out = np.zeros(x.shape)
        out[:, :, top:top + height, left:left + width] = g
        return (out,)
    return Tensor(x.data[:, :, top:top + height, left:left + width].copy(), (x,), bw, "crop")


def bilinear_matrix(n_in, n_out):
    """(n_out, n_in) interpolation matrix, pixel-centre aligned, edges clamped."""
    pos = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    M = np.zeros((n_out, n_in))
    M[np.arange(n_out), lo] += 1.0 - frac
    M[np.arange(n_out), hi] += frac
    return M


def resize(x, height, width):
    """Bilinear resize of (N, C, H, W) to (N, C, height, width)."""
    x = as_tensor(x)
    Ry = bilinear_matrix(x.shape[2], height)
    Rx = bilinear_matrix(x.shape[3], width)
    out = np.einsum("yh,nchw,xw->ncyx", Ry, x.data, Rx)

    def bw(g):
        return (np.einsum("yh,ncyx,xw->nchw", Ry, g, Rx),)
    return Tensor(out, (x,), bw, "resize")


# -- losses ------------------------------------------------------------------

def l1_loss(a, b):
    """mean |a - b|."""
    return mean(abs_(sub(a, b)))


def mse_loss(a, b):
    d = sub(a, b)
    return mean(mul(d, d))
