"""Pure-numpy convolution and pooling kernels (reference/fallback path).

All tensors are NCHW float64. Convolutions are valid (no padding).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(x, w, b, stride=1):
    """x: (N,Ci,H,W), w: (Co,Ci,kh,kw), b: (Co,) -> (N,Co,OH,OW)."""
    kh, kw = w.shape[2], w.shape[3]
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.einsum("ncyxhw,ochw->noyx", windows, w, optimize=True)
    return out + b[None, :, None, None]


def conv2d_backward(x, w, dout, stride=1):
    """Gradients of the valid convolution: returns (dx, dw, db)."""
    kh, kw = w.shape[2], w.shape[3]
    oh, ow = dout.shape[2], dout.shape[3]
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    dw = np.einsum("ncyxhw,noyx->ochw", windows, dout, optimize=True)
    db = dout.sum(axis=(0, 2, 3))
    dx = np.zeros_like(x)
    for ky in range(kh):
        for kx in range(kw):
            patch = np.einsum("noyx,oc->ncyx", dout, w[:, :, ky, kx], optimize=True)
            dx[:, :, ky:ky + stride * oh:stride, kx:kx + stride * ow:stride] += patch
    return dx, dw, db


def maxpool2d_forward(x, window):
    """Non-overlapping max pooling. Returns (y, argmax) with argmax holding
    the flat within-window index of each maximum."""
    n, c, h, w = x.shape
    if h % window or w % window:
        raise ValueError(f"spatial size {h}x{w} not divisible by pool window {window}")
    tiles = x.reshape(n, c, h // window, window, w // window, window)
    tiles = tiles.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // window, w // window, -1)
    argmax = tiles.argmax(axis=-1)
    y = np.take_along_axis(tiles, argmax[..., None], axis=-1)[..., 0]
    return y, argmax


def maxpool2d_backward(x, window, dout, argmax):
    """Routes upstream gradients to the argmax positions."""
    n, c, h, w = x.shape
    oh, ow = h // window, w // window
    dtiles = np.zeros((n, c, oh, ow, window * window))
    np.put_along_axis(dtiles, argmax[..., None], dout[..., None], axis=-1)
    dtiles = dtiles.reshape(n, c, oh, ow, window, window).transpose(0, 1, 2, 4, 3, 5)
    return dtiles.reshape(n, c, h, w)
