"""Pure-numpy reference kernels.

These are the fallback implementations used when the compiled extension
``ukanformer._kernels`` is unavailable (or ``UKF_KERNELS=python`` is set).
Every function here has an identically named counterpart in ``_kernels.pyx``.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, k, stride, pad):
    """Unfold ``x`` (N, C, H, W) into columns of shape (N, C*k*k, Ho*Wo)."""
    n, c, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :ho, :wo]
    # (N, C, Ho, Wo, k, k) -> (N, C, k, k, Ho, Wo)
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3))
    return cols.reshape(n, c * k * k, ho * wo)


def col2im(cols, shape, k, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add columns back into (N, C, H, W)."""
    n, c, h, w = shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    cols = cols.reshape(n, c, k, k, ho, wo)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, i, j]
    if pad:
        return np.ascontiguousarray(xp[:, :, pad:pad + h, pad:pad + w])
    return xp


def depthwise_forward(x, w, pad):
    n, c, h, wd = x.shape
    k = w.shape[-1]
    ho = h + 2 * pad - k + 1
    wo = wd + 2 * pad - k + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    out = np.zeros((n, c, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            out += w[:, i, j][None, :, None, None] * xp[:, :, i:i + ho, j:j + wo]
    return out


def depthwise_backward(g, x, w, pad):
    """Return (grad_x, grad_w) for :func:`depthwise_forward`."""
    n, c, h, wd = x.shape
    k = w.shape[-1]
    ho, wo = g.shape[2], g.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    gxp = np.zeros(xp.shape, dtype=x.dtype)
    gw = np.zeros(w.shape, dtype=w.dtype)
    for i in range(k):
        for j in range(k):
            gxp[:, :, i:i + ho, j:j + wo] += w[:, i, j][None, :, None, None] * g
            gw[:, i, j] = np.einsum("nchw,nchw->c", g, xp[:, :, i:i + ho, j:j + wo])
    if pad:
        gxp = np.ascontiguousarray(gxp[:, :, pad:pad + h, pad:pad + wd])
    return gxp, gw


def bspline_basis(x, knots, k):
    """Clamped B-spline basis values and x-derivatives via vectorized Cox-de Boor.

    ``x`` is 1-D; returns two arrays of shape (len(x), len(knots) - k - 1).
    Inputs outside ``[knots[0], knots[-1]]`` are clamped, and their
    derivative rows are zero.
    """
    t = np.asarray(knots, dtype=np.float64)
    lo, hi = t[0], t[-1]
    nb = len(t) - k - 1
    xr = np.asarray(x, dtype=np.float64)
    xc = np.clip(xr, lo, hi)

    B = ((t[:-1][None, :] <= xc[:, None]) & (xc[:, None] < t[1:][None, :])).astype(np.float64)
    # right end belongs to the last non-degenerate interval
    at_end = xc >= hi
    B[at_end, :] = 0.0
    B[at_end, nb - 1] = 1.0

    prev = B
    for d in range(1, k + 1):
        m = len(t) - d - 1
        left_den = t[d:d + m] - t[:m]
        right_den = t[d + 1:d + 1 + m] - t[1:1 + m]
        with np.errstate(divide="ignore", invalid="ignore"):
            lw = np.where(left_den > 0, (xc[:, None] - t[:m]) / left_den, 0.0)
            rw = np.where(right_den > 0, (t[d + 1:d + 1 + m] - xc[:, None]) / right_den, 0.0)
        cur = lw * prev[:, :m] + rw * prev[:, 1:m + 1]
        if d == k:
            with np.errstate(divide="ignore", invalid="ignore"):
                a = np.where(left_den > 0, k / left_den, 0.0)
                b = np.where(right_den > 0, k / right_den, 0.0)
            dB = a * prev[:, :m] - b * prev[:, 1:m + 1]
        prev = cur
    if k == 0:
        dB = np.zeros_like(prev)
    outside = (xr < lo) | (xr > hi)
    dB[outside] = 0.0
    return prev, dB
