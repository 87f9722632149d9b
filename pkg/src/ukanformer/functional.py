"""Differentiable neural kernels built on :mod:`ukanformer.tensor`."""
import numpy as np

from . import kernels
from .errors import DegenerateVarianceError, LabelError, ShapeError
from .tensor import Tensor

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


def _as4d(x, name="input"):
    if x.ndim != 4:
        raise ShapeError(f"{name} must be (N, C, H, W), got shape {x.shape}")


def conv2d(x, w, b=None, stride=1, padding=None):
    """2-D cross-correlation of ``x`` (N, C_in, H, W) with ``w`` (C_out, C_in, k, k).

    ``padding`` defaults to ``k // 2`` ("same" for stride 1).
    """
    _as4d(x)
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"weight must be (C_out, C_in, k, k), got {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs weight {w.shape}")
    n, c, h, wd = x.shape
    cout, _, k, _ = w.shape
    pad = k // 2 if padding is None else int(padding)
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output would be empty for input {x.shape}, k={k}, stride={stride}")
    pointwise = k == 1 and stride == 1 and pad == 0
    cols = x.data.reshape(n, c, h * wd) if pointwise else kernels.im2col(x.data, k, stride, pad)
    w2 = w.data.reshape(cout, -1)
    out = np.matmul(w2, cols).reshape(n, cout, ho, wo)
    if b is not None:
        out += b.data.reshape(1, cout, 1, 1)

    def backward(g):
        g2 = g.reshape(n, cout, ho * wo)
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
        if x.requires_grad:
            gcols = np.matmul(w2.T, g2)
            gx = gcols.reshape(x.shape) if pointwise else kernels.col2im(gcols, x.shape, k, stride, pad)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if b is None else (gx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._make(out, parents, backward)


def depthwise_conv2d(x, w, padding=None):
    """Per-channel convolution: ``w`` is (C, 1, k, k), one kernel per channel."""
    _as4d(x)
    if w.ndim != 4 or w.shape[1] != 1:
        raise ShapeError(f"depthwise weight must be (C, 1, k, k), got {w.shape}")
    if w.shape[0] != x.shape[1]:
        raise ShapeError(f"depthwise channel mismatch: input {x.shape} vs weight {w.shape}")
    k = w.shape[-1]
    pad = k // 2 if padding is None else int(padding)
    w3 = np.ascontiguousarray(w.data[:, 0])
    out = kernels.depthwise_forward(x.data, w3, pad)

    def backward(g):
        gx, gw = kernels.depthwise_backward(np.ascontiguousarray(g), x.data, w3, pad)
        return gx, gw.reshape(w.shape)

    return Tensor._make(out, (x, w), backward)


def batch_norm2d(x, gamma, beta, running_mean, running_var, training,
                 momentum=BN_MOMENTUM, eps=BN_EPS):
    """Batch normalization over (N, H, W) per channel.

    In training mode ``running_mean``/``running_var`` (numpy arrays) are
    updated in place by exponential moving average.
    """
    _as4d(x)
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm params {gamma.shape}/{beta.shape} do not match {c} channels")
    m = n * h * w
    if training:
        if m < 2:
            raise DegenerateVarianceError(
                f"batchnorm in train mode needs N*H*W >= 2, got input shape {x.shape}")
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / (m - 1))
    else:
        mu, var = running_mean, running_var
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu.reshape(1, c, 1, 1).astype(x.dtype)) * inv.reshape(1, c, 1, 1)
    out = xhat * gamma.data.reshape(1, c, 1, 1) + beta.data.reshape(1, c, 1, 1)

    def backward(g):
        gg = (g * xhat).sum(axis=(0, 2, 3))
        gb = g.sum(axis=(0, 2, 3))
        gxhat = g * gamma.data.reshape(1, c, 1, 1)
        if training:
            s1 = gxhat.sum(axis=(0, 2, 3), keepdims=True)
            s2 = (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            gx = inv.reshape(1, c, 1, 1) / m * (m * gxhat - s1 - xhat * s2)
        else:
            gx = gxhat * inv.reshape(1, c, 1, 1)
        return gx, gg, gb

    return Tensor._make(out, (x, gamma, beta), backward)


def layer_norm(x, gamma, beta, eps=BN_EPS):
    """Normalize over the last axis with learnable scale/shift."""
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        red = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=red)
        gb = g.sum(axis=red)
        gxhat = g * gamma.data
        s1 = gxhat.sum(axis=-1, keepdims=True)
        s2 = (gxhat * xhat).sum(axis=-1, keepdims=True)
        gx = inv / d * (d * gxhat - s1 - xhat * s2)
        return gx, gg, gb

    return Tensor._make(out, (x, gamma, beta), backward)


def softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._make(y, (x,), backward)


def softmax_rows(m):
    """Row-wise softmax of a (..., L, L) matrix."""
    return softmax(m, axis=-1)


def _up_axis(a, axis):
    n = a.shape[axis]
    idx_prev = np.maximum(np.arange(n) - 1, 0)
    idx_next = np.minimum(np.arange(n) + 1, n - 1)
    even = 0.75 * a + 0.25 * np.take(a, idx_prev, axis=axis)
    odd = 0.75 * a + 0.25 * np.take(a, idx_next, axis=axis)
    out = np.stack([even, odd], axis=axis + 1)
    shape = list(a.shape)
    shape[axis] = 2 * n
    return out.reshape(shape)


def _up_axis_adjoint(g, axis):
    shape = list(g.shape)
    n = shape[axis] // 2
    shape[axis:axis + 1] = [n, 2]
    g = g.reshape(shape)
    ge = np.take(g, 0, axis=axis + 1)
    go = np.take(g, 1, axis=axis + 1)
    gx = 0.75 * (ge + go)
    # adjoint of the clamped one-step shifts
    mv, me, mo = (np.moveaxis(a, axis, 0) for a in (gx, ge, go))
    mv[:-1] += 0.25 * me[1:]
    mv[0] += 0.25 * me[0]
    mv[1:] += 0.25 * mo[:-1]
    mv[-1] += 0.25 * mo[-1]
    return gx


def upsample_bilinear2x(x):
    """Bilinear 2x upsampling over the last two axes, half-pixel centers.

    Source coordinate for output index o is (o + 0.5) / 2 - 0.5, clamped to
    the input extent, so each output mixes two neighbours with weights
    0.75 / 0.25.
    """
    if x.ndim < 2:
        raise ShapeError(f"upsample needs at least 2 spatial axes, got {x.shape}")
    h_ax, w_ax = x.ndim - 2, x.ndim - 1
    out = _up_axis(_up_axis(x.data, h_ax), w_ax)

    def backward(g):
        return (_up_axis_adjoint(_up_axis_adjoint(g, w_ax), h_ax),)

    return Tensor._make(np.ascontiguousarray(out), (x,), backward)


bilinear_upsample2x = upsample_bilinear2x


def cross_entropy(logits, targets):
    """Mean negative log-likelihood over all pixels.

    ``logits`` is (N, K, H, W); ``targets`` an integer array (N, H, W)
    with values in ``[0, K)``.
    """
    _as4d(logits, "logits")
    t = np.asarray(targets)
    n, k, h, w = logits.shape
    if t.shape != (n, h, w):
        raise ShapeError(f"targets shape {t.shape} does not match logits {logits.shape}")
    bad = (t < 0) | (t >= k) | (t != np.round(t))
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        pos = np.unravel_index(idx, t.shape)
        raise LabelError(f"target {t.flat[idx]!r} at pixel index {idx} (n,h,w)={tuple(int(p) for p in pos)} "
                         f"outside classes 0..{k - 1}")
    t = t.astype(np.int64)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=1, keepdims=True)
    logp = z - np.log(s)
    picked = np.take_along_axis(logp, t[:, None], axis=1)
    count = n * h * w
    loss = -picked.sum() / count

    def backward(g):
        p = e / s
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, t[:, None], 1.0, axis=1)
        return ((p - onehot) * (g / count),)

    return Tensor._make(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def bspline_basis(x, knots, k):
    """Basis values for every entry of ``x``: output shape ``x.shape + (nb,)``.

    Differentiable in ``x``; entries outside the knot span are clamped and
    receive zero gradient.
    """
    flat = x.data.reshape(-1)
    B, dB = kernels.bspline_basis(flat, knots, k)
    nb = B.shape[1]
    out = B.astype(x.dtype).reshape(x.shape + (nb,))
    dB = dB.astype(x.dtype).reshape(x.shape + (nb,))

    def backward(g):
        return ((g * dB).sum(axis=-1),)

    return Tensor._make(out, (x,), backward)
