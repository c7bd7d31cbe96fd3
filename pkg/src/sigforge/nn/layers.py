"""Hand-differentiated layers, float64 throughout.

Every ``*_forward`` returns ``(output, cache)`` and the matching
``*_backward`` maps an upstream gradient plus the cache to gradients with
respect to the inputs and parameters. Sequence tensors are laid out
``(batch, length, channels)``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


# --- convolution ---------------------------------------------------------------

def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Stride-1 'same' convolution.

    ``out[:, t, f] = b[f] + sum_{c,j} x[:, t + j - k//2, c] * w[f, c, j]``
    with zeros outside ``[0, L)``. ``w`` has shape ``(c_out, c_in, k)``.
    """
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[1] or b.shape != (w.shape[0],):
        raise ShapeMismatch(f"conv1d: x{x.shape} w{w.shape} b{b.shape}")
    k = w.shape[2]
    if k % 2 == 0:
        raise ShapeMismatch("conv1d: kernel size must be odd")
    B, L, C = x.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    cols = sliding_window_view(xp, k, axis=1).reshape(B * L, C * k)
    wmat = w.reshape(w.shape[0], C * k)
    out = (cols @ wmat.T + b).reshape(B, L, w.shape[0])
    return out, (cols, w, x.shape)


def conv1d_backward(dout: np.ndarray, cache):
    cols, w, xshape = cache
    B, L, C = xshape
    F, _, k = w.shape
    d2 = dout.reshape(B * L, F)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(F, C * k)).reshape(B, L, C, k)
    pad = k // 2
    dxp = np.zeros((B, L + 2 * pad, C))
    for j in range(k):
        dxp[:, j:j + L, :] += dcols[..., j]
    return dxp[:, pad:pad + L, :], dw, db


# --- batch normalisation -------------------------------------------------------

def batchnorm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                      running_mean: np.ndarray, running_var: np.ndarray, train: bool):
    """Per-channel normalisation over every axis but the last.

    Returns ``(out, cache, (new_running_mean, new_running_var))``; the input
    running statistics are never mutated. In training with fewer than two
    values per channel the running statistics normalise the batch (they are
    still updated).
    """
    C = x.shape[-1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeMismatch(f"batchnorm: x{x.shape} gamma{gamma.shape}")
    axes = tuple(range(x.ndim - 1))
    n = x.size // C
    if train:
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        new_stats = (BN_MOMENTUM * running_mean + (1 - BN_MOMENTUM) * mu,
                     BN_MOMENTUM * running_var + (1 - BN_MOMENTUM) * var)
        batch_stats = n >= 2
    else:
        new_stats = (running_mean, running_var)
        batch_stats = False
    if not batch_stats:
        mu, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mu) * inv_std
    out = gamma * xhat + beta
    return out, (xhat, gamma, inv_std, batch_stats, axes, n), new_stats


def batchnorm_backward(dout: np.ndarray, cache):
    xhat, gamma, inv_std, batch_stats, axes, n = cache
    dgamma = np.sum(dout * xhat, axis=axes)
    dbeta = np.sum(dout, axis=axes)
    dxhat = dout * gamma
    if batch_stats:
        dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=axes) - xhat * np.sum(dxhat * xhat, axis=axes))
    else:
        dx = dxhat * inv_std
    return dx, dgamma, dbeta


# --- pointwise -----------------------------------------------------------------

def relu_forward(x: np.ndarray):
    """The cache is the pre-activation itself."""
    return x * (x > 0), x


def relu_backward(dout: np.ndarray, pre: np.ndarray):
    return dout * (pre > 0)


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def dropout_forward(x: np.ndarray, rate: float, train: bool, rng: np.random.Generator | None):
    """Inverted dropout; identity in eval mode or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    if not train or rate == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dout: np.ndarray, mask):
    return dout if mask is None else dout * mask


def sigmoid_bce(logit, label):
    """Fused, overflow-safe sigmoid + binary cross-entropy.

    Returns ``(probability, loss, dloss/dlogit)`` elementwise.
    """
    z = np.asarray(logit, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    p = sigmoid(z)
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return p, loss, p - y


# --- dense -----------------------------------------------------------------------

def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """``x @ w.T + b`` with ``w`` shaped ``(out, in)``."""
    if x.shape[-1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ShapeMismatch(f"dense: x{x.shape} w{w.shape} b{b.shape}")
    return x @ w.T + b, (x, w)


def dense_backward(dout: np.ndarray, cache):
    x, w = cache
    return dout @ w, dout.T @ x, dout.sum(axis=0)


# --- LSTM ------------------------------------------------------------------------

def lstm_forward(x: np.ndarray, w: np.ndarray, u: np.ndarray, b: np.ndarray):
    """Single-layer LSTM returning the full hidden sequence.

    Gate order along the ``4H`` axis is (input, forget, cell, output);
    ``w`` is ``(4H, c_in)``, ``u`` is ``(4H, H)``; ``h0 = c0 = 0``.
    """
    if x.ndim != 3:
        raise ShapeMismatch(f"lstm: expected (batch, len, c_in), got {x.shape}")
    B, T, _ = x.shape
    H = u.shape[1]
    if w.shape != (4 * H, x.shape[2]) or u.shape != (4 * H, H) or b.shape != (4 * H,):
        raise ShapeMismatch(f"lstm: x{x.shape} w{w.shape} u{u.shape} b{b.shape}")
    zx = x @ w.T + b
    # sigmoid(a) = 0.5 * (1 + tanh(a / 2)): one tanh covers all four gates
    scale = np.full(4 * H, 0.5)
    scale[2 * H:3 * H] = 1.0
    shift = 1.0 - scale
    gates = np.empty((B, T, 4 * H))
    cs = np.empty((B, T, H))
    tcs = np.empty((B, T, H))
    hs = np.empty((B, T, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    ut = u.T
    for t in range(T):
        a = zx[:, t] + h @ ut
        g = gates[:, t]
        np.tanh(a * scale, out=g)
        g *= scale
        g += shift
        c = g[:, H:2 * H] * c + g[:, :H] * g[:, 2 * H:3 * H]
        tc = np.tanh(c)
        h = g[:, 3 * H:] * tc
        cs[:, t], tcs[:, t], hs[:, t] = c, tc, h
    return hs, (x, w, u, gates, cs, tcs, hs)


def lstm_backward(dhs: np.ndarray, cache):
    """Backpropagation through time."""
    x, w, u, gates, cs, tcs, hs = cache
    B, T, _ = x.shape
    H = u.shape[1]
    g4 = gates.reshape(B, T, 4, H)
    i, f, gg, o = g4[:, :, 0], g4[:, :, 1], g4[:, :, 2], g4[:, :, 3]
    c_prev = np.concatenate([np.zeros((B, 1, H)), cs[:, :-1]], axis=1)
    # per-step local derivatives, vectorised over time
    q = np.empty((B, T, 4, H))
    q[:, :, 0] = gg * i * (1.0 - i)
    q[:, :, 1] = c_prev * f * (1.0 - f)
    q[:, :, 2] = i * (1.0 - gg * gg)
    q[:, :, 3] = tcs * o * (1.0 - o)
    dc_from_h = o * (1.0 - tcs * tcs)
    dz = np.empty((B, T, 4 * H))
    dz4 = dz.reshape(B, T, 4, H)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dh = dhs[:, t] + dh_next
        dc = dh * dc_from_h[:, t] + dc_next
        np.multiply(q[:, t, :3], dc[:, None, :], out=dz4[:, t, :3])
        np.multiply(q[:, t, 3], dh, out=dz4[:, t, 3])
        dh_next = dz[:, t] @ u
        dc_next = dc * f[:, t]
    du = dz[:, 1:].reshape(-1, 4 * H).T @ hs[:, :-1].reshape(-1, H)
    dz2 = dz.reshape(B * T, 4 * H)
    dw = dz2.T @ x.reshape(B * T, -1)
    db = dz2.sum(axis=0)
    dx = dz @ w
    return dx, dw, du, db
