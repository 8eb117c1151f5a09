"""Pure-Python/numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` function for function. Inputs are assumed to be
validated by the caller (contiguous float64 / int64 arrays, consistent shapes).
"""
from __future__ import annotations

from collections import deque

import numpy as np

ACT_TANH = 0
ACT_RELU = 1
LOSS_LOGISTIC = 0
LOSS_SQUARED = 1


def project_simplex(v):
    """Euclidean projection of ``v`` onto the probability simplex (sort + threshold)."""
    n = v.shape[0]
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    # largest k with u_k - (css_k - 1)/k > 0; k = 1 always qualifies
    ks = np.arange(1, n + 1)
    cond = u - (css - 1.0) / ks > 0
    rho = int(np.nonzero(cond)[0][-1])
    tau = (css[rho] - 1.0) / (rho + 1)
    return np.maximum(v - tau, 0.0)


def brandes(indptr, indices, pair_mask):
    """Unweighted betweenness restricted to (source, target) pairs in ``pair_mask``.

    ``pair_mask[s, t]`` is nonzero when the shortest paths from ``s`` to ``t``
    contribute. Endpoints never receive credit for their own pair.
    """
    n = pair_mask.shape[0]
    out = np.zeros(n)
    for s in range(n):
        row = pair_mask[s]
        if not row.any():
            continue
        dist = np.full(n, -1, dtype=np.int64)
        sigma = np.zeros(n)
        preds = [[] for _ in range(n)]
        order = []
        dist[s] = 0
        sigma[s] = 1.0
        queue = deque([s])
        while queue:
            v = queue.popleft()
            order.append(v)
            for j in range(indptr[v], indptr[v + 1]):
                w = indices[j]
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = np.zeros(n)
        for w in reversed(order):
            coeff = (1.0 if row[w] else 0.0) + delta[w]
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * coeff
            if w != s:
                out[w] += delta[w]
    return out


def _dloss(z, y, loss):
    if loss == LOSS_LOGISTIC:
        s = 2.0 * y - 1.0
        u = -s * z
        vals = np.maximum(u, 0.0) + np.log1p(np.exp(-np.abs(u)))
        # sigmoid(z) - y, evaluated without overflow
        ez = np.exp(-np.abs(z))
        sig = np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))
        return vals, sig - y
    r = z - y
    return r * r, 2.0 * r


def loss_grad(theta, X, y, hidden, act, loss):
    """Mean loss and its gradient w.r.t. the flat parameter vector.

    ``hidden == 0`` selects the linear model ``X w + b``; otherwise a one hidden
    layer network ``act(X W1 + b1) W2 + b2`` with parameters laid out as
    ``[W1 (d*h, row-major), b1 (h), W2 (h), b2]``.
    """
    n, d = X.shape
    grad = np.empty_like(theta)
    if hidden == 0:
        w = theta[:d]
        z = X @ w + theta[d]
        vals, dz = _dloss(z, y, loss)
        dz = dz / n
        grad[:d] = X.T @ dz
        grad[d] = dz.sum()
        return float(vals.mean()), grad
    h = hidden
    W1 = theta[: d * h].reshape(d, h)
    b1 = theta[d * h : d * h + h]
    W2 = theta[d * h + h : d * h + 2 * h]
    a = X @ W1 + b1
    if act == ACT_TANH:
        hid = np.tanh(a)
        dact = 1.0 - hid * hid
    else:
        hid = np.maximum(a, 0.0)
        dact = (a > 0).astype(float)
    z = hid @ W2 + theta[-1]
    vals, dz = _dloss(z, y, loss)
    dz = dz / n
    grad[d * h + h : d * h + 2 * h] = hid.T @ dz
    grad[-1] = dz.sum()
    da = np.outer(dz, W2) * dact
    grad[: d * h] = (X.T @ da).ravel()
    grad[d * h : d * h + h] = da.sum(axis=0)
    return float(vals.mean()), grad
