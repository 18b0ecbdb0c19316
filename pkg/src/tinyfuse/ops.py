"""NumPy forward/backward kernels for every layer kind (channels-last, batched).

All kernels preserve the dtype of their inputs, so the same code serves the
float32 training path and the float64 gradient-check path. Convolutions go
through explicit patch extraction (im2col) so forward and backward share one
indexing scheme.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def pad_amounts(extent: int, kernel: int, stride: int, padding: str) -> tuple[int, int]:
    """(before, after) padding; `same` puts the extra cell at the end."""
    if padding == "valid":
        return 0, 0
    out = -(-extent // stride)
    total = max((out - 1) * stride + kernel - extent, 0)
    before = total // 2
    return before, total - before


def extract_patches(x, kernel, stride, padding, pad_value=0.0):
    """(N,H,W,C) -> (N,Ho,Wo,k,k,C) windows plus the padding used."""
    n, h, w, c = x.shape
    ph = pad_amounts(h, kernel, stride, padding)
    pw = pad_amounts(w, kernel, stride, padding)
    if ph != (0, 0) or pw != (0, 0):
        x = np.pad(x, ((0, 0), ph, pw, (0, 0)), constant_values=pad_value)
    win = sliding_window_view(x, (kernel, kernel), axis=(1, 2))  # (N,H',W',C,k,k)
    win = win[:, ::stride, ::stride]
    patches = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
    return patches, (ph, pw)


def scatter_patches(dpatches, x_shape, kernel, stride, pads):
    """Adjoint of extract_patches: accumulate window grads back onto the input."""
    n, h, w, c = x_shape
    (ph0, ph1), (pw0, pw1) = pads
    dxp = np.zeros((n, h + ph0 + ph1, w + pw0 + pw1, c), dtype=dpatches.dtype)
    ho, wo = dpatches.shape[1], dpatches.shape[2]
    for i in range(kernel):
        for j in range(kernel):
            dxp[:, i : i + ho * stride : stride, j : j + wo * stride : stride, :] += dpatches[
                :, :, :, i, j, :
            ]
    return dxp[:, ph0 : ph0 + h, pw0 : pw0 + w, :]


# ---------------------------------------------------------------------------
# convolutions


def conv2d_forward(x, w, b, stride, padding):
    """w: (k,k,Cin,Cout), b: (Cout,). Returns (y, patches) with patches cached."""
    k = w.shape[0]
    patches, _ = extract_patches(x, k, stride, padding)
    n, ho, wo = patches.shape[:3]
    cols = patches.reshape(n * ho * wo, -1)
    y = cols @ w.reshape(-1, w.shape[-1]) + b
    return y.reshape(n, ho, wo, -1), patches


def conv2d_backward(dy, patches, w, x_shape, stride, padding):
    k = w.shape[0]
    n, ho, wo, cout = dy.shape
    dy_cols = dy.reshape(n * ho * wo, cout)
    cols = patches.reshape(n * ho * wo, -1)
    dw = (cols.T @ dy_cols).reshape(w.shape)
    db = dy_cols.sum(axis=0)
    dpatches = (dy_cols @ w.reshape(-1, cout).T).reshape(patches.shape)
    pads = (
        pad_amounts(x_shape[1], k, stride, padding),
        pad_amounts(x_shape[2], k, stride, padding),
    )
    dx = scatter_patches(dpatches, x_shape, k, stride, pads)
    return dx, dw, db


def depthwise_forward(x, w, b, stride, padding):
    """Per-channel spatial convolution. w: (k,k,C), b: (C,)."""
    k = w.shape[0]
    patches, _ = extract_patches(x, k, stride, padding)
    y = np.einsum("nhwijc,ijc->nhwc", patches, w) + b
    return y, patches


def depthwise_backward(dy, patches, w, x_shape, stride, padding):
    k = w.shape[0]
    dw = np.einsum("nhwijc,nhwc->ijc", patches, dy)
    db = dy.sum(axis=(0, 1, 2))
    dpatches = dy[:, :, :, None, None, :] * w[None, None, None, :, :, :]
    pads = (
        pad_amounts(x_shape[1], k, stride, padding),
        pad_amounts(x_shape[2], k, stride, padding),
    )
    dx = scatter_patches(dpatches, x_shape, k, stride, pads)
    return dx, dw, db


def sepconv2d_forward(x, dw_w, dw_b, pw_w, pw_b, stride, padding):
    """Depthwise stage then 1x1 pointwise stage; returns (y, cache).

    cache = (mid activation, depthwise patches); mid is also the internal
    activation edge the quantizer calibrates.
    """
    mid, patches = depthwise_forward(x, dw_w, dw_b, stride, padding)
    y = mid @ pw_w + pw_b
    return y, (mid, patches)


def sepconv2d_backward(dy, cache, dw_w, pw_w, x_shape, stride, padding):
    mid, patches = cache
    n, ho, wo, cout = dy.shape
    dy_cols = dy.reshape(-1, cout)
    mid_cols = mid.reshape(-1, mid.shape[-1])
    dpw_w = mid_cols.T @ dy_cols
    dpw_b = dy_cols.sum(axis=0)
    dmid = (dy_cols @ pw_w.T).reshape(mid.shape)
    dx, ddw_w, ddw_b = depthwise_backward(dmid, patches, dw_w, x_shape, stride, padding)
    return dx, ddw_w, ddw_b, dpw_w, dpw_b


# ---------------------------------------------------------------------------
# pooling


def maxpool2d_forward(x, pool, stride, padding):
    neg_inf = np.array(-np.inf, dtype=x.dtype)
    patches, _ = extract_patches(x, pool, stride, padding, pad_value=neg_inf)
    n, ho, wo = patches.shape[:3]
    c = patches.shape[-1]
    flat = patches.reshape(n, ho, wo, pool * pool, c)
    idx = flat.argmax(axis=3)
    y = np.take_along_axis(flat, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    return y, idx


def maxpool2d_backward(dy, idx, x_shape, pool, stride, padding):
    n, ho, wo, c = dy.shape
    dflat = np.zeros((n, ho, wo, pool * pool, c), dtype=dy.dtype)
    np.put_along_axis(dflat, idx[:, :, :, None, :], dy[:, :, :, None, :], axis=3)
    dpatches = dflat.reshape(n, ho, wo, pool, pool, c)
    pads = (
        pad_amounts(x_shape[1], pool, stride, padding),
        pad_amounts(x_shape[2], pool, stride, padding),
    )
    return scatter_patches(dpatches, x_shape, pool, stride, pads)


def _pool_counts(x_shape, pool, stride, padding, dtype):
    """Valid-cell count per output position (same-padding cells are excluded)."""
    ones = np.ones((1,) + x_shape[1:3] + (1,), dtype=dtype)
    patches, _ = extract_patches(ones, pool, stride, padding)
    return patches.sum(axis=(3, 4))  # (1,Ho,Wo,1)


def avgpool2d_forward(x, pool, stride, padding):
    patches, _ = extract_patches(x, pool, stride, padding)
    counts = _pool_counts(x.shape, pool, stride, padding, x.dtype)
    y = patches.sum(axis=(3, 4)) / counts
    return y, counts


def avgpool2d_backward(dy, counts, x_shape, pool, stride, padding):
    n, ho, wo, c = dy.shape
    scaled = dy / counts
    dpatches = np.broadcast_to(
        scaled[:, :, :, None, None, :], (n, ho, wo, pool, pool, c)
    ).astype(dy.dtype, copy=True)
    pads = (
        pad_amounts(x_shape[1], pool, stride, padding),
        pad_amounts(x_shape[2], pool, stride, padding),
    )
    return scatter_patches(dpatches, x_shape, pool, stride, pads)


# ---------------------------------------------------------------------------
# simple layers


def dense_forward(x, w, b):
    return x @ w + b


def dense_backward(dy, x, w):
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(dy, x):
    return dy * (x > 0)


def flatten_forward(x):
    return x.reshape(x.shape[0], -1)


def concat_forward(xs):
    return np.concatenate(xs, axis=-1)


def concat_backward(dy, widths):
    return np.split(dy, np.cumsum(widths)[:-1], axis=-1)


def softmax(z):
    """Row-wise stabilized softmax over the last axis."""
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(y, dy):
    """Jacobian-vector product of softmax: y * (dy - <dy, y>)."""
    dot = (dy * y).sum(axis=-1, keepdims=True)
    return y * (dy - dot)
