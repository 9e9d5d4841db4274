"""Numba-jitted convolution and pooling kernels (hot path).

Loop-based implementations of the same contracts as `numpy_ops`; outputs
agree with the fallback to floating-point roundoff.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def _conv2d_forward(x, w, b, stride, out):
    n, co, oh, ow = out.shape
    ci, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    for i in prange(n):
        for o in range(co):
            for y in range(oh):
                for xx in range(ow):
                    acc = b[o]
                    for c in range(ci):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += w[o, c, ky, kx] * x[i, c, y * stride + ky, xx * stride + kx]
                    out[i, o, y, xx] = acc


def conv2d_forward(x, w, b, stride=1):
    kh, kw = w.shape[2], w.shape[3]
    oh = (x.shape[2] - kh) // stride + 1
    ow = (x.shape[3] - kw) // stride + 1
    out = np.empty((x.shape[0], w.shape[0], oh, ow))
    _conv2d_forward(x, w, b, stride, out)
    return out


@njit(cache=True, parallel=True)
def _conv2d_backward_dx(w, dout, stride, dx):
    n, co, oh, ow = dout.shape
    ci, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    for i in prange(n):
        for o in range(co):
            for y in range(oh):
                for xx in range(ow):
                    g = dout[i, o, y, xx]
                    for c in range(ci):
                        for ky in range(kh):
                            for kx in range(kw):
                                dx[i, c, y * stride + ky, xx * stride + kx] += w[o, c, ky, kx] * g


@njit(cache=True)
def _conv2d_backward_dw(x, dout, stride, dw, db):
    n, co, oh, ow = dout.shape
    ci, kh, kw = dw.shape[1], dw.shape[2], dw.shape[3]
    for i in range(n):
        for o in range(co):
            for y in range(oh):
                for xx in range(ow):
                    g = dout[i, o, y, xx]
                    db[o] += g
                    for c in range(ci):
                        for ky in range(kh):
                            for kx in range(kw):
                                dw[o, c, ky, kx] += x[i, c, y * stride + ky, xx * stride + kx] * g


def conv2d_backward(x, w, dout, stride=1):
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    db = np.zeros(w.shape[0])
    _conv2d_backward_dx(w, dout, stride, dx)
    _conv2d_backward_dw(x, dout, stride, dw, db)
    return dx, dw, db


@njit(cache=True, parallel=True)
def _maxpool2d_forward(x, window, y, argmax):
    n, c, oh, ow = y.shape
    for i in prange(n):
        for ch in range(c):
            for py in range(oh):
                for px in range(ow):
                    best = -np.inf
                    best_k = 0
                    for wy in range(window):
                        for wx in range(window):
                            v = x[i, ch, py * window + wy, px * window + wx]
                            if v > best:
                                best = v
                                best_k = wy * window + wx
                    y[i, ch, py, px] = best
                    argmax[i, ch, py, px] = best_k


def maxpool2d_forward(x, window):
    n, c, h, w = x.shape
    if h % window or w % window:
        raise ValueError(f"spatial size {h}x{w} not divisible by pool window {window}")
    y = np.empty((n, c, h // window, w // window))
    argmax = np.empty((n, c, h // window, w // window), dtype=np.int64)
    _maxpool2d_forward(x, window, y, argmax)
    return y, argmax


@njit(cache=True, parallel=True)
def _maxpool2d_backward(window, dout, argmax, dx):
    n, c, oh, ow = dout.shape
    for i in prange(n):
        for ch in range(c):
            for py in range(oh):
                for px in range(ow):
                    k = argmax[i, ch, py, px]
                    wy = k // window
                    wx = k % window
                    dx[i, ch, py * window + wy, px * window + wx] += dout[i, ch, py, px]


def maxpool2d_backward(x, window, dout, argmax):
    dx = np.zeros_like(x)
    _maxpool2d_backward(window, dout, argmax, dx)
    return dx
