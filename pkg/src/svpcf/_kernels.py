"""Per-interaction SGD kernels.

The ``*_grad`` functions compute the exact gradient of one sample's loss
and are the only place gradients are written down; the epoch loops call
them, and so do the finite-difference tests.  Bias-only is MF with zero
latent dimensions.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


@njit(cache=True)
def _log_sigmoid(x):
    if x >= 0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


# --------------------------------------------------------------------------
# MF / bias-only


@njit(cache=True)
def mf_explicit_grad(alpha, bu, bi, pu, qi, r, l2, gpu, gqi):
    """Loss ``(pred - r)^2 + l2 * (bu^2 + bi^2 + |pu|^2 + |qi|^2)``.

    Writes the factor gradients into ``gpu`` / ``gqi`` and returns
    ``(loss, d_alpha, d_bu, d_bi)``.
    """
    d = pu.shape[0]
    pred = alpha + bu + bi
    reg = bu * bu + bi * bi
    for k in range(d):
        pred += pu[k] * qi[k]
        reg += pu[k] * pu[k] + qi[k] * qi[k]
    e = pred - r
    for k in range(d):
        gpu[k] = 2.0 * e * qi[k] + 2.0 * l2 * pu[k]
        gqi[k] = 2.0 * e * pu[k] + 2.0 * l2 * qi[k]
    return e * e + l2 * reg, 2.0 * e, 2.0 * e + 2.0 * l2 * bu, 2.0 * e + 2.0 * l2 * bi


@njit(cache=True)
def mf_bpr_grad(bi, bj, pu, qi, qj, l2, gpu, gqi, gqj):
    """Loss ``-log sigmoid(s_ui - s_uj) + l2 * (bi^2 + bj^2 + |pu|^2 + |qi|^2 + |qj|^2)``.

    The global and user biases cancel in the score difference.  Returns
    ``(loss, d_bi, d_bj)``.
    """
    d = pu.shape[0]
    x = bi - bj
    reg = bi * bi + bj * bj
    for k in range(d):
        x += pu[k] * (qi[k] - qj[k])
        reg += pu[k] * pu[k] + qi[k] * qi[k] + qj[k] * qj[k]
    g = _sigmoid(x) - 1.0
    for k in range(d):
        gpu[k] = g * (qi[k] - qj[k]) + 2.0 * l2 * pu[k]
        gqi[k] = g * pu[k] + 2.0 * l2 * qi[k]
        gqj[k] = -g * pu[k] + 2.0 * l2 * qj[k]
    return -_log_sigmoid(x) + l2 * reg, g + 2.0 * l2 * bi, -g + 2.0 * l2 * bj


@njit(cache=True)
def mf_explicit_epoch(alpha, bu, bi, P, Q, users, items, ratings, order, lr, l2):
    d = P.shape[1]
    gpu = np.empty(d)
    gqi = np.empty(d)
    total = 0.0
    for t in order:
        u = users[t]
        i = items[t]
        loss, ga, gbu, gbi = mf_explicit_grad(alpha[0], bu[u], bi[i], P[u], Q[i],
                                              ratings[t], l2, gpu, gqi)
        total += loss
        alpha[0] -= lr * ga
        bu[u] -= lr * gbu
        bi[i] -= lr * gbi
        for k in range(d):
            P[u, k] -= lr * gpu[k]
            Q[i, k] -= lr * gqi[k]
    return total


@njit(cache=True)
def mf_bpr_epoch(bi, P, Q, users, pos, neg, lr, l2):
    d = P.shape[1]
    gpu = np.empty(d)
    gqi = np.empty(d)
    gqj = np.empty(d)
    total = 0.0
    for t in range(users.shape[0]):
        u = users[t]
        i = pos[t]
        j = neg[t]
        loss, gbi, gbj = mf_bpr_grad(bi[i], bi[j], P[u], Q[i], Q[j], l2, gpu, gqi, gqj)
        total += loss
        bi[i] -= lr * gbi
        bi[j] -= lr * gbj
        for k in range(d):
            P[u, k] -= lr * gpu[k]
            Q[i, k] -= lr * gqi[k]
            Q[j, k] -= lr * gqj[k]
    return total


# --------------------------------------------------------------------------
# NeuMF: alpha + bu + bi + w3 . relu(W2' relu(W1' [pu, qi, pu*qi] + b1) + b2)


def workspace_size(d: int, h1: int, h2: int) -> int:
    """Scratch length for the NeuMF gradient kernels."""
    return 2 * (3 * d + 3 * h1 + 3 * h2) + d


@njit(cache=True)
def _split_ws(ws, d, h1, h2, slot):
    o = slot * (3 * d + 3 * h1 + 3 * h2)
    x = ws[o:o + 3 * d]
    o += 3 * d
    z1 = ws[o:o + h1]
    a1 = ws[o + h1:o + 2 * h1]
    dz1 = ws[o + 2 * h1:o + 3 * h1]
    o += 3 * h1
    z2 = ws[o:o + h2]
    a2 = ws[o + h2:o + 2 * h2]
    dz2 = ws[o + 2 * h2:o + 3 * h2]
    return x, z1, a1, z2, a2, dz1, dz2


@njit(cache=True)
def neumf_forward(pu, qi, W1, b1, W2, b2, w3, m1, m2, x, z1, a1, z2, a2):
    """MLP part of the NeuMF score; fills the activation buffers.

    ``m1`` / ``m2`` are (already rescaled) dropout masks on the hidden
    activations; pass ones for inference.
    """
    d = pu.shape[0]
    for k in range(d):
        x[k] = pu[k]
        x[d + k] = qi[k]
        x[2 * d + k] = pu[k] * qi[k]
    for b in range(W1.shape[1]):
        s = b1[b]
        for a in range(W1.shape[0]):
            s += W1[a, b] * x[a]
        z1[b] = s
        a1[b] = s * m1[b] if s > 0.0 else 0.0
    out = 0.0
    for c in range(W2.shape[1]):
        s = b2[c]
        for b in range(W2.shape[0]):
            s += W2[b, c] * a1[b]
        z2[c] = s
        a2[c] = s * m2[c] if s > 0.0 else 0.0
        out += w3[c] * a2[c]
    return out


@njit(cache=True)
def neumf_backward(g, pu, qi, W1, W2, w3, m1, m2, x, z1, a1, z2, a2, dz1, dz2,
                   gpu, gqi, gW1, gb1, gW2, gb2, gw3):
    """Accumulate ``g * d(mlp)/d(params)`` into the gradient buffers."""
    d = pu.shape[0]
    h1 = W1.shape[1]
    h2 = W2.shape[1]
    for c in range(h2):
        gw3[c] += g * a2[c]
        dz2[c] = g * w3[c] * m2[c] if z2[c] > 0.0 else 0.0
        gb2[c] += dz2[c]
    for b in range(h1):
        s = 0.0
        for c in range(h2):
            gW2[b, c] += a1[b] * dz2[c]
            s += W2[b, c] * dz2[c]
        dz1[b] = s * m1[b] if z1[b] > 0.0 else 0.0
        gb1[b] += dz1[b]
    for a in range(3 * d):
        s = 0.0
        for b in range(h1):
            gW1[a, b] += x[a] * dz1[b]
            s += W1[a, b] * dz1[b]
        if a < d:
            gpu[a] += s
        elif a < 2 * d:
            gqi[a - d] += s
        else:
            gpu[a - 2 * d] += s * qi[a - 2 * d]
            gqi[a - 2 * d] += s * pu[a - 2 * d]


@njit(cache=True)
def neumf_explicit_grad(alpha, bu, bi, pu, qi, W1, b1, W2, b2, w3, m1, m2, r, l2,
                        gpu, gqi, gW1, gb1, gW2, gb2, gw3, ws):
    """Squared error plus ``l2`` on the touched biases and embeddings.

    MLP weights are not weight-decayed; dropout regularises them.  Returns
    ``(loss, d_alpha, d_bu, d_bi)``; all other gradients are overwritten
    into the buffers.
    """
    d = pu.shape[0]
    h1 = W1.shape[1]
    h2 = W2.shape[1]
    x, z1, a1, z2, a2, dz1, dz2 = _split_ws(ws, d, h1, h2, 0)
    gpu[:] = 0.0
    gqi[:] = 0.0
    gW1[:, :] = 0.0
    gb1[:] = 0.0
    gW2[:, :] = 0.0
    gb2[:] = 0.0
    gw3[:] = 0.0
    pred = alpha + bu + bi + neumf_forward(pu, qi, W1, b1, W2, b2, w3, m1, m2, x, z1, a1, z2, a2)
    e = pred - r
    neumf_backward(2.0 * e, pu, qi, W1, W2, w3, m1, m2, x, z1, a1, z2, a2, dz1, dz2,
                   gpu, gqi, gW1, gb1, gW2, gb2, gw3)
    reg = bu * bu + bi * bi
    for k in range(d):
        reg += pu[k] * pu[k] + qi[k] * qi[k]
        gpu[k] += 2.0 * l2 * pu[k]
        gqi[k] += 2.0 * l2 * qi[k]
    return e * e + l2 * reg, 2.0 * e, 2.0 * e + 2.0 * l2 * bu, 2.0 * e + 2.0 * l2 * bi


@njit(cache=True)
def neumf_bpr_grad(bi, bj, pu, qi, qj, W1, b1, W2, b2, w3, m1, m2, l2,
                   gpu, gqi, gqj, gW1, gb1, gW2, gb2, gw3, ws):
    """BPR loss through two forward passes sharing the MLP and dropout masks."""
    d = pu.shape[0]
    h1 = W1.shape[1]
    h2 = W2.shape[1]
    xi, z1i, a1i, z2i, a2i, dz1, dz2 = _split_ws(ws, d, h1, h2, 0)
    xj, z1j, a1j, z2j, a2j, _, _ = _split_ws(ws, d, h1, h2, 1)
    gpu_j = ws[-d:]
    gpu_j[:] = 0.0
    gpu[:] = 0.0
    gqi[:] = 0.0
    gqj[:] = 0.0
    gW1[:, :] = 0.0
    gb1[:] = 0.0
    gW2[:, :] = 0.0
    gb2[:] = 0.0
    gw3[:] = 0.0
    si = bi + neumf_forward(pu, qi, W1, b1, W2, b2, w3, m1, m2, xi, z1i, a1i, z2i, a2i)
    sj = bj + neumf_forward(pu, qj, W1, b1, W2, b2, w3, m1, m2, xj, z1j, a1j, z2j, a2j)
    x = si - sj
    g = _sigmoid(x) - 1.0
    neumf_backward(g, pu, qi, W1, W2, w3, m1, m2, xi, z1i, a1i, z2i, a2i, dz1, dz2,
                   gpu, gqi, gW1, gb1, gW2, gb2, gw3)
    neumf_backward(-g, pu, qj, W1, W2, w3, m1, m2, xj, z1j, a1j, z2j, a2j, dz1, dz2,
                   gpu_j, gqj, gW1, gb1, gW2, gb2, gw3)
    reg = bi * bi + bj * bj
    for k in range(d):
        gpu[k] += gpu_j[k] + 2.0 * l2 * pu[k]
        gqi[k] += 2.0 * l2 * qi[k]
        gqj[k] += 2.0 * l2 * qj[k]
        reg += pu[k] * pu[k] + qi[k] * qi[k] + qj[k] * qj[k]
    return -_log_sigmoid(x) + l2 * reg, g + 2.0 * l2 * bi, -g + 2.0 * l2 * bj


@njit(cache=True)
def _mlp_step(W1, b1, W2, b2, w3, gW1, gb1, gW2, gb2, gw3, lr):
    for a in range(W1.shape[0]):
        for b in range(W1.shape[1]):
            W1[a, b] -= lr * gW1[a, b]
    for b in range(W2.shape[0]):
        b1[b] -= lr * gb1[b]
        for c in range(W2.shape[1]):
            W2[b, c] -= lr * gW2[b, c]
    for c in range(W2.shape[1]):
        b2[c] -= lr * gb2[c]
        w3[c] -= lr * gw3[c]


@njit(cache=True)
def neumf_explicit_epoch(alpha, bu, bi, P, Q, W1, b1, W2, b2, w3, M1, M2,
                         users, items, ratings, order, lr, l2):
    d = P.shape[1]
    gpu = np.empty(d)
    gqi = np.empty(d)
    gW1 = np.empty_like(W1)
    gb1 = np.empty_like(b1)
    gW2 = np.empty_like(W2)
    gb2 = np.empty_like(b2)
    gw3 = np.empty_like(w3)
    ws = np.empty(2 * (3 * d + 3 * W1.shape[1] + 3 * W2.shape[1]) + d)
    shared_mask = M1.shape[0] == 1
    total = 0.0
    for step in range(order.shape[0]):
        t = order[step]
        u = users[t]
        i = items[t]
        row = 0 if shared_mask else step
        loss, ga, gbu, gbi = neumf_explicit_grad(
            alpha[0], bu[u], bi[i], P[u], Q[i], W1, b1, W2, b2, w3, M1[row], M2[row],
            ratings[t], l2, gpu, gqi, gW1, gb1, gW2, gb2, gw3, ws)
        total += loss
        alpha[0] -= lr * ga
        bu[u] -= lr * gbu
        bi[i] -= lr * gbi
        for k in range(d):
            P[u, k] -= lr * gpu[k]
            Q[i, k] -= lr * gqi[k]
        _mlp_step(W1, b1, W2, b2, w3, gW1, gb1, gW2, gb2, gw3, lr)
    return total


@njit(cache=True)
def neumf_bpr_epoch(bi, P, Q, W1, b1, W2, b2, w3, M1, M2, users, pos, neg, lr, l2):
    d = P.shape[1]
    gpu = np.empty(d)
    gqi = np.empty(d)
    gqj = np.empty(d)
    gW1 = np.empty_like(W1)
    gb1 = np.empty_like(b1)
    gW2 = np.empty_like(W2)
    gb2 = np.empty_like(b2)
    gw3 = np.empty_like(w3)
    ws = np.empty(2 * (3 * d + 3 * W1.shape[1] + 3 * W2.shape[1]) + d)
    shared_mask = M1.shape[0] == 1
    total = 0.0
    for t in range(users.shape[0]):
        u = users[t]
        i = pos[t]
        j = neg[t]
        row = 0 if shared_mask else t
        loss, gbi, gbj = neumf_bpr_grad(
            bi[i], bi[j], P[u], Q[i], Q[j], W1, b1, W2, b2, w3, M1[row], M2[row], l2,
            gpu, gqi, gqj, gW1, gb1, gW2, gb2, gw3, ws)
        total += loss
        bi[i] -= lr * gbi
        bi[j] -= lr * gbj
        for k in range(d):
            P[u, k] -= lr * gpu[k]
            Q[i, k] -= lr * gqi[k]
            Q[j, k] -= lr * gqj[k]
        _mlp_step(W1, b1, W2, b2, w3, gW1, gb1, gW2, gb2, gw3, lr)
    return total
