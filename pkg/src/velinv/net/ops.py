"""Array primitives for the encoder-decoder: conv, pool, upsample, Sobel.

Forward functions return (output, cache); backward functions consume the
cache and the upstream gradient and return exact reverse-mode gradients.
Convolutions use im2col so the heavy lifting is a single matmul.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SOBEL_GX = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_GY = SOBEL_GX.T.copy()


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(B, C, H, W) -> (B*H*W, C*kh*kw) patch matrix for 'same' convolution."""
    b, c, h, w = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # (B, C, H, W, kh, kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * kh * kw)
    return np.ascontiguousarray(cols)


def conv2d_forward(x: np.ndarray, w: np.ndarray, bias: np.ndarray):
    """Same-size 2D convolution (cross-correlation) with zero padding."""
    b, c, h, wd = x.shape
    k, c_in, kh, kw = w.shape
    if c != c_in:
        raise ValueError(f"input has {c} channels, kernel expects {c_in}")
    cols = _im2col(x, kh, kw)
    out = cols @ w.reshape(k, -1).T + bias
    y = out.reshape(b, h, wd, k).transpose(0, 3, 1, 2)
    cache = (cols, w, x.shape)
    return np.ascontiguousarray(y), cache


def conv2d_backward(dy: np.ndarray, cache):
    cols, w, x_shape = cache
    b, c, h, wd = x_shape
    k, _, kh, kw = w.shape
    dy_flat = np.ascontiguousarray(dy.transpose(0, 2, 3, 1)).reshape(b * h * wd, k)
    dw = (dy_flat.T @ cols).reshape(w.shape)
    db = dy_flat.sum(axis=0)
    dcols = dy_flat @ w.reshape(k, -1)
    # scatter patches back (adjoint of im2col)
    ph, pw = kh // 2, kw // 2
    dxp = np.zeros((b, c, h + 2 * ph, wd + 2 * pw), dtype=dy.dtype)
    dpatch = dcols.reshape(b, h, wd, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    for u in range(kh):
        for v in range(kw):
            dxp[:, :, u : u + h, v : v + wd] += dpatch[:, :, u, v]
    dx = dxp[:, :, ph : ph + h, pw : pw + wd]
    return dx, dw, db


def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dy * mask


def maxpool2_forward(x: np.ndarray):
    """2x2 max pooling, stride 2; H and W must be even."""
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    blocks = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = blocks.reshape(b, c, h // 2, w // 2, 4)
    arg = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(y), (arg, x.shape)


def maxpool2_backward(dy: np.ndarray, cache) -> np.ndarray:
    arg, x_shape = cache
    b, c, h, w = x_shape
    dflat = np.zeros((b, c, h // 2, w // 2, 4), dtype=dy.dtype)
    np.put_along_axis(dflat, arg[..., None], dy[..., None], axis=-1)
    dx = dflat.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(x_shape)
    return np.ascontiguousarray(dx)


def upsample2_forward(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbor 2x upsampling."""
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def upsample2_backward(dy: np.ndarray) -> np.ndarray:
    b, c, h, w = dy.shape
    return dy.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def pad_to_multiple(x: np.ndarray, multiple: int):
    """Reflect-pad trailing H/W so both are divisible by ``multiple``."""
    h, w = x.shape[-2], x.shape[-1]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return x, (h, w)
    pad = [(0, 0)] * (x.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(x, pad, mode="reflect"), (h, w)


def sobel_filter(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Valid-mode 3x3 Sobel gradients; img may carry leading batch axes."""
    img = np.asarray(img)
    h, w = img.shape[-2], img.shape[-1]
    if h < 3 or w < 3:
        raise ValueError(f"Sobel needs at least 3x3, got {h}x{w}")
    hv, wv = h - 2, w - 2
    gx = np.zeros(img.shape[:-2] + (hv, wv), dtype=np.result_type(img, np.float64))
    gy = np.zeros_like(gx)
    for u in range(3):
        for v in range(3):
            patch = img[..., u : u + hv, v : v + wv]
            if SOBEL_GX[u, v] != 0.0:
                gx += SOBEL_GX[u, v] * patch
            if SOBEL_GY[u, v] != 0.0:
                gy += SOBEL_GY[u, v] * patch
    return gx, gy


def sobel_adjoint(gx: np.ndarray, gy: np.ndarray, out_shape) -> np.ndarray:
    """Adjoint of :func:`sobel_filter`: scatter valid-mode gradients back."""
    hv, wv = gx.shape[-2], gx.shape[-1]
    dimg = np.zeros(out_shape, dtype=gx.dtype)
    for u in range(3):
        for v in range(3):
            if SOBEL_GX[u, v] != 0.0:
                dimg[..., u : u + hv, v : v + wv] += SOBEL_GX[u, v] * gx
            if SOBEL_GY[u, v] != 0.0:
                dimg[..., u : u + hv, v : v + wv] += SOBEL_GY[u, v] * gy
    return dimg
