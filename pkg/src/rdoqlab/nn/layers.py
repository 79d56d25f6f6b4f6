"""Neural layer primitives: forward passes and analytic gradients.

Everything is plain numpy in a functional style: each forward returns
(output, cache) and the matching backward consumes (grad_out, cache)
and returns gradients for the input and every parameter. Convolutions
use zero padding and stride 1 so spatial dimensions never change.
Double precision flows through the same code paths, which is what the
finite-difference gradient checks rely on.
"""

from __future__ import annotations

import numpy as np

BN_EPS = 1e-5


def conv2d_forward(x, w, b):
    """2-D convolution, NHWC layout, zero padding, stride 1.

    x: (B, H, W, C); w: (kh, kw, C, F) with odd kh == kw; b: (F,).
    """
    kh, kw, cin, f = w.shape
    if x.ndim != 4 or x.shape[3] != cin:
        raise ValueError(f"bad conv input shape {x.shape} for kernel {w.shape}")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    bsz, h, wd = x.shape[:3]
    out = np.tile(b, (bsz, h, wd, 1)).astype(x.dtype)
    for dy in range(kh):
        for dx in range(kw):
            patch = xp[:, dy:dy + h, dx:dx + wd, :]
            out += patch @ w[dy, dx]
    return out, (x, w, b)


def conv2d_backward(dout, cache):
    x, w, b = cache
    kh, kw, cin, f = w.shape
    ph, pw = kh // 2, kw // 2
    bsz, h, wd = x.shape[:3]
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for dy in range(kh):
        for dx in range(kw):
            patch = xp[:, dy:dy + h, dx:dx + wd, :]
            dw[dy, dx] = np.tensordot(patch, dout, axes=([0, 1, 2], [0, 1, 2]))
            dxp[:, dy:dy + h, dx:dx + wd, :] += dout @ w[dy, dx].T
    db = dout.sum(axis=(0, 1, 2))
    dx = dxp[:, ph:ph + h, pw:pw + wd, :]
    return dx, dw, db


def dense_forward(x, w, b):
    """Affine layer. x: (B, D); w: (D, F); b: (F,)."""
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"bad dense input shape {x.shape} for weight {w.shape}")
    return x @ w + b, (x, w)


def dense_backward(dout, cache):
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def masked_dense_forward(x, w, b, mask):
    """Affine layer with a fixed binary connectivity mask on the weights."""
    if w.shape != mask.shape:
        raise ValueError(f"mask shape {mask.shape} != weight shape {w.shape}")
    wm = w * mask
    return x @ wm + b, (x, w, mask)


def masked_dense_backward(dout, cache):
    x, w, mask = cache
    dx = dout @ (w * mask).T
    dw = (x.T @ dout) * mask
    return dx, dw, dout.sum(axis=0)


def batch_norm_forward(x, gamma, beta, train=True, running_mean=None,
                       running_var=None):
    """Batch normalization over all axes except the last.

    Training mode normalizes with batch statistics; inference mode uses
    the provided running statistics.
    """
    axes = tuple(range(x.ndim - 1))
    if train:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean) * inv_std
    out = gamma * xhat + beta
    cache = (xhat, gamma, inv_std, axes, train)
    return out, cache, mean, var


def batch_norm_backward(dout, cache):
    xhat, gamma, inv_std, axes, train = cache
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * gamma
    if not train:
        return dxhat * inv_std, dgamma, dbeta
    m = float(np.prod([xhat.shape[a] for a in axes]))
    dx = (inv_std / m) * (m * dxhat - dxhat.sum(axis=axes)
                          - xhat * (dxhat * xhat).sum(axis=axes))
    return dx, dgamma, dbeta


def relu_forward(x):
    return np.maximum(x, 0), (x > 0)


def relu_backward(dout, cache):
    return dout * cache


def sigmoid_forward(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return s, s


def sigmoid_backward(dout, cache):
    s = cache
    return dout * s * (1.0 - s)


def softmax_cross_entropy(logits, labels, weights=None):
    """Weighted categorical cross-entropy, averaged over active rows.

    logits: (M, k); labels: (M,) integer class indices; weights: (M,)
    non-negative per-row weights or None. Rows with weight zero are
    masked out and excluded from the averaging denominator (the
    denominator counts rows with nonzero weight).

    Returns (loss, dlogits).
    """
    m, k = logits.shape
    if labels.shape != (m,):
        raise ValueError(f"labels shape {labels.shape} != ({m},)")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError("label outside class set")
    if weights is None:
        weights = np.ones(m, dtype=logits.dtype)
    active = float(np.count_nonzero(weights))
    if active == 0:
        return 0.0, np.zeros_like(logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted[np.arange(m), labels] - logz
    loss = float(-(weights * logp).sum() / active)
    probs = np.exp(shifted - logz[:, None])
    dlogits = probs
    dlogits[np.arange(m), labels] -= 1.0
    dlogits *= weights[:, None] / active
    return loss, dlogits
