"""Plain-Python reference implementations used as independent checks.

Everything here loops element by element over nested lists/numpy arrays with
``math.fsum`` accumulation and never touches torch, so agreement with the
vectorised code is meaningful.
"""
from __future__ import annotations

import math

import numpy as np


def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _relu(x):
    return x if x > 0 else 0.0


def spatial_mean(F):
    """F: (B, C, H, W) -> (B, C) by explicit summation."""
    B, C, H, W = F.shape
    out = np.zeros((B, C))
    for b in range(B):
        for c in range(C):
            out[b, c] = math.fsum(F[b, c, i, j] for i in range(H) for j in range(W)) / (H * W)
    return out


def spatial_max(F):
    B, C, H, W = F.shape
    out = np.zeros((B, C))
    for b in range(B):
        for c in range(C):
            out[b, c] = max(F[b, c, i, j] for i in range(H) for j in range(W))
    return out


def _mlp(z, w0, b0, w1, b1):
    hidden = [_relu(math.fsum(w0[k, c] * z[c] for c in range(len(z))) + b0[k]) for k in range(w0.shape[0])]
    return [math.fsum(w1[c, k] * hidden[k] for k in range(len(hidden))) + b1[c] for c in range(w1.shape[0])]


def channel_attention(F, w0, b0, w1, b1):
    z = spatial_mean(F)
    return np.array([[_sigmoid(v) for v in _mlp(z[b], w0, b0, w1, b1)] for b in range(F.shape[0])])


def cbam_channel_attention(F, w0, b0, w1, b1):
    avg, mx = spatial_mean(F), spatial_max(F)
    out = []
    for b in range(F.shape[0]):
        a, m = _mlp(avg[b], w0, b0, w1, b1), _mlp(mx[b], w0, b0, w1, b1)
        out.append([_sigmoid(x + y) for x, y in zip(a, m)])
    return np.array(out)


def channel_pools(F):
    """(B, C, H, W) -> mean and max over channels, each (B, H, W)."""
    B, C, H, W = F.shape
    mean = np.zeros((B, H, W))
    mx = np.zeros((B, H, W))
    for b in range(B):
        for i in range(H):
            for j in range(W):
                vals = [F[b, c, i, j] for c in range(C)]
                mean[b, i, j] = math.fsum(vals) / C
                mx[b, i, j] = max(vals)
    return mean, mx


def spatial_attention(F, kernel, bias):
    """Direct zero-padded convolution of the [mean, max] maps; kernel (1, 2, k, k)."""
    mean, mx = channel_pools(F)
    maps = [mean, mx]
    B, _, H, W = F.shape
    k = kernel.shape[-1]
    p = k // 2
    out = np.zeros((B, H, W))
    for b in range(B):
        for i in range(H):
            for j in range(W):
                terms = []
                for ch in range(2):
                    for u in range(k):
                        for v in range(k):
                            y, x = i + u - p, j + v - p
                            if 0 <= y < H and 0 <= x < W:
                                terms.append(kernel[0, ch, u, v] * maps[ch][b, y, x])
                out[b, i, j] = _sigmoid(math.fsum(terms) + bias[0])
    return out


def style_attention(F, cfc_weight, cfc_bias, bn_weight, bn_bias, eps=1e-5,
                    running_mean=None, running_var=None):
    """Population std; BN over the batch unless running statistics are given."""
    B, C, H, W = F.shape
    mean = spatial_mean(F)
    std = np.zeros((B, C))
    for b in range(B):
        for c in range(C):
            std[b, c] = math.sqrt(math.fsum((F[b, c, i, j] - mean[b, c]) ** 2
                                            for i in range(H) for j in range(W)) / (H * W))
    z = np.array([[cfc_weight[c, 0] * mean[b, c] + cfc_weight[c, 1] * std[b, c] + cfc_bias[c]
                   for c in range(C)] for b in range(B)])
    out = np.zeros((B, C))
    for c in range(C):
        if running_mean is None:
            mu = math.fsum(z[:, c]) / B
            var = math.fsum((z[b, c] - mu) ** 2 for b in range(B)) / B
        else:
            mu, var = running_mean[c], running_var[c]
        for b in range(B):
            out[b, c] = _sigmoid(bn_weight[c] * (z[b, c] - mu) / math.sqrt(var + eps) + bn_bias[c])
    return out


def lstm_cell(x, h, c, weight, bias):
    """Scalar-state LSTM cell for one sample; weight rows i, f, g, o over [x, h]."""
    inp = list(x) + [h]
    pre = [math.fsum(weight[g, k] * inp[k] for k in range(len(inp))) + bias[g] for g in range(4)]
    i, f, o = _sigmoid(pre[0]), _sigmoid(pre[1]), _sigmoid(pre[3])
    g = math.tanh(pre[2])
    c_new = f * c + i * g
    return o * math.tanh(c_new), c_new


def log_softmax_nll(logits, labels):
    """Mean negative log-likelihood with a max-shifted log-sum-exp."""
    losses = []
    for row, y in zip(logits, labels):
        m = max(row)
        lse = m + math.log(math.fsum(math.exp(v - m) for v in row))
        losses.append(lse - row[y])
    return math.fsum(losses) / len(losses)


def two_pass_moments(samples):
    """Mean and population variance along axis 0, two passes."""
    n = len(samples)
    flat = [np.asarray(s, dtype=float).ravel() for s in samples]
    d = flat[0].size
    mean = np.array([math.fsum(s[k] for s in flat) / n for k in range(d)])
    var = np.array([math.fsum((s[k] - mean[k]) ** 2 for s in flat) / n for k in range(d)])
    shape = np.asarray(samples[0]).shape
    return mean.reshape(shape), var.reshape(shape)
