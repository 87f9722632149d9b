# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Signatures mirror ``_kernels_py``."""
import numpy as np
cimport cython
from cython cimport floating


cdef inline Py_ssize_t _first(Py_ssize_t off, Py_ssize_t pad, Py_ssize_t stride) noexcept nogil:
    """First output index whose input coordinate ``o * stride + off - pad`` is >= 0."""
    if off >= pad:
        return 0
    return (pad - off + stride - 1) // stride


cdef inline Py_ssize_t _stop(Py_ssize_t off, Py_ssize_t pad, Py_ssize_t stride,
                             Py_ssize_t size, Py_ssize_t n_out) noexcept nogil:
    """One past the last output index whose input coordinate is < ``size``."""
    cdef Py_ssize_t last = size - 1 + pad - off
    if last < 0:
        return 0
    return min(n_out, last // stride + 1)


def im2col(const floating[:, :, :, ::1] x, int k, int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    dtype = np.float64 if floating is double else np.float32
    out = np.zeros((n, c * k * k, ho * wo), dtype=dtype)
    cdef floating[:, :, ::1] o = out
    cdef Py_ssize_t b, ch, i, j, oy, ox, iy, row, lo, hi
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(k):
                    for j in range(k):
                        row = (ch * k + i) * k + j
                        lo = _first(j, pad, stride)
                        hi = _stop(j, pad, stride, w, wo)
                        for oy in range(_first(i, pad, stride), _stop(i, pad, stride, h, ho)):
                            iy = oy * stride + i - pad
                            for ox in range(lo, hi):
                                o[b, row, oy * wo + ox] = x[b, ch, iy, ox * stride + j - pad]
    return out


def col2im(const floating[:, :, ::1] cols, shape, int k, int stride, int pad):
    cdef Py_ssize_t n = shape[0], c = shape[1], h = shape[2], w = shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    dtype = np.float64 if floating is double else np.float32
    out = np.zeros((n, c, h, w), dtype=dtype)
    cdef floating[:, :, :, ::1] o = out
    cdef Py_ssize_t b, ch, i, j, oy, ox, iy, row, lo, hi
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(k):
                    for j in range(k):
                        row = (ch * k + i) * k + j
                        lo = _first(j, pad, stride)
                        hi = _stop(j, pad, stride, w, wo)
                        for oy in range(_first(i, pad, stride), _stop(i, pad, stride, h, ho)):
                            iy = oy * stride + i - pad
                            for ox in range(lo, hi):
                                o[b, ch, iy, ox * stride + j - pad] += cols[b, row, oy * wo + ox]
    return out


def depthwise_forward(const floating[:, :, :, ::1] x, const floating[:, :, ::1] w, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t k = w.shape[2]
    cdef Py_ssize_t ho = h + 2 * pad - k + 1, wo = wd + 2 * pad - k + 1
    dtype = np.float64 if floating is double else np.float32
    out = np.zeros((n, c, ho, wo), dtype=dtype)
    cdef floating[:, :, :, ::1] o = out
    cdef Py_ssize_t b, ch, i, j, oy, ox, iy, ix
    cdef floating wv
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(k):
                    for j in range(k):
                        wv = w[ch, i, j]
                        for oy in range(ho):
                            iy = oy + i - pad
                            if iy < 0 or iy >= h:
                                continue
                            for ox in range(wo):
                                ix = ox + j - pad
                                if ix >= 0 and ix < wd:
                                    o[b, ch, oy, ox] += wv * x[b, ch, iy, ix]
    return out


def depthwise_backward(const floating[:, :, :, ::1] g, const floating[:, :, :, ::1] x,
                       const floating[:, :, ::1] w, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t k = w.shape[2]
    cdef Py_ssize_t ho = g.shape[2], wo = g.shape[3]
    dtype = np.float64 if floating is double else np.float32
    gx_arr = np.zeros((n, c, h, wd), dtype=dtype)
    gw_arr = np.zeros((c, k, k), dtype=dtype)
    cdef floating[:, :, :, ::1] gx = gx_arr
    cdef floating[:, :, ::1] gw = gw_arr
    cdef Py_ssize_t b, ch, i, j, oy, ox, iy, ix
    cdef floating wv, gv
    cdef double acc
    with nogil:
        for ch in range(c):
            for i in range(k):
                for j in range(k):
                    wv = w[ch, i, j]
                    acc = 0.0
                    for b in range(n):
                        for oy in range(ho):
                            iy = oy + i - pad
                            if iy < 0 or iy >= h:
                                continue
                            for ox in range(wo):
                                ix = ox + j - pad
                                if ix >= 0 and ix < wd:
                                    gv = g[b, ch, oy, ox]
                                    gx[b, ch, iy, ix] += wv * gv
                                    acc = acc + gv * x[b, ch, iy, ix]
                    gw[ch, i, j] = <floating>acc
    return gx_arr, gw_arr


def bspline_basis(x, knots, int k):
    """Local de Boor evaluation: only the k+1 non-zero functions per point."""
    cdef double[::1] t = np.ascontiguousarray(knots, dtype=np.float64)
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef Py_ssize_t m = xv.shape[0]
    cdef Py_ssize_t nk = t.shape[0]
    cdef Py_ssize_t nb = nk - k - 1
    basis = np.zeros((m, nb), dtype=np.float64)
    dbasis = np.zeros((m, nb), dtype=np.float64)
    cdef double[:, ::1] B = basis
    cdef double[:, ::1] dB = dbasis
    cdef double lo = t[0], hi = t[nk - 1]
    cdef double[::1] N = np.zeros(k + 1)
    cdef double[::1] Nm = np.zeros(k + 1)
    cdef double[::1] left = np.zeros(k + 1)
    cdef double[::1] right = np.zeros(k + 1)
    cdef Py_ssize_t p, s, a, b_, mid, j, r
    cdef double xc, xr, saved, temp, d1, d2
    cdef bint outside
    with nogil:
        for p in range(m):
            xr = xv[p]
            outside = xr < lo or xr > hi
            xc = lo if xr < lo else (hi if xr > hi else xr)
            if xc >= hi:
                s = nb - 1
            else:
                a = k
                b_ = nb
                while b_ - a > 1:
                    mid = (a + b_) // 2
                    if xc < t[mid]:
                        b_ = mid
                    else:
                        a = mid
                s = a
            N[0] = 1.0
            Nm[0] = 1.0
            for j in range(1, k + 1):
                left[j] = xc - t[s + 1 - j]
                right[j] = t[s + j] - xc
                saved = 0.0
                for r in range(j):
                    temp = N[r] / (right[r + 1] + left[j - r])
                    N[r] = saved + right[r + 1] * temp
                    saved = left[j - r] * temp
                N[j] = saved
                if j == k - 1:
                    for r in range(k):
                        Nm[r] = N[r]
            for r in range(k + 1):
                B[p, s - k + r] = N[r]
            if k == 0 or outside:
                continue
            for r in range(k + 1):
                d1 = 0.0
                d2 = 0.0
                if r >= 1:
                    d1 = k * Nm[r - 1] / (t[s + r] - t[s - k + r])
                if r <= k - 1:
                    d2 = k * Nm[r] / (t[s + r + 1] - t[s - k + r + 1])
                dB[p, s - k + r] = d1 - d2
    return basis, dbasis
