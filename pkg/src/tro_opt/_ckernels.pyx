# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Same contracts as ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, fabs, tanh

cnp.import_array()

cdef enum:
    ACT_TANH = 0
    LOSS_LOGISTIC = 0


def project_simplex(const double[::1] v):
    cdef Py_ssize_t n = v.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] u = np.sort(np.asarray(v))[::-1].copy()
    cdef double[::1] uv = u
    cdef double css = 0.0, tau = 0.0, cand
    cdef Py_ssize_t k
    for k in range(n):
        css += uv[k]
        cand = (css - 1.0) / (k + 1)
        if uv[k] - cand > 0:
            tau = cand
    out = np.empty(n)
    cdef double[::1] ov = out
    for k in range(n):
        ov[k] = v[k] - tau if v[k] > tau else 0.0
    return out


def brandes(const long[::1] indptr, const long[::1] indices, const unsigned char[:, ::1] pair_mask):
    cdef Py_ssize_t n = pair_mask.shape[0]
    out = np.zeros(n)
    cdef double[::1] outv = out
    cdef long[::1] dist = np.empty(n, dtype=np.int_)
    cdef double[::1] sigma = np.empty(n)
    cdef double[::1] delta = np.empty(n)
    cdef long[::1] order = np.empty(n, dtype=np.int_)
    # predecessor lists stored as a flat buffer indexed like indices
    cdef long[::1] pred = np.empty(max(indices.shape[0], 1), dtype=np.int_)
    cdef long[::1] npred = np.empty(n, dtype=np.int_)
    cdef Py_ssize_t s, i, j, v, w, head, tail, p
    cdef bint any_target
    cdef double coeff
    for s in range(n):
        any_target = False
        for i in range(n):
            if pair_mask[s, i]:
                any_target = True
                break
        if not any_target:
            continue
        for i in range(n):
            dist[i] = -1
            sigma[i] = 0.0
            delta[i] = 0.0
            npred[i] = 0
        dist[s] = 0
        sigma[s] = 1.0
        order[0] = s
        head = 0
        tail = 1
        while head < tail:
            v = order[head]
            head += 1
            for j in range(indptr[v], indptr[v + 1]):
                w = indices[j]
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    order[tail] = w
                    tail += 1
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    pred[indptr[w] + npred[w]] = v
                    npred[w] += 1
        for i in range(tail - 1, -1, -1):
            w = order[i]
            coeff = (1.0 if pair_mask[s, w] else 0.0) + delta[w]
            for p in range(npred[w]):
                v = pred[indptr[w] + p]
                delta[v] += sigma[v] / sigma[w] * coeff
            if w != s:
                outv[w] += delta[w]
    return out


cdef inline void _dloss(double z, double y, int loss, double* val, double* dz) nogil:
    cdef double s, u, ez, sig, r
    if loss == LOSS_LOGISTIC:
        s = 2.0 * y - 1.0
        u = -s * z
        val[0] = (u if u > 0 else 0.0) + log1p(exp(-fabs(u)))
        ez = exp(-fabs(z))
        if z >= 0:
            sig = 1.0 / (1.0 + ez)
        else:
            sig = ez / (1.0 + ez)
        dz[0] = sig - y
    else:
        r = z - y
        val[0] = r * r
        dz[0] = 2.0 * r


def loss_grad(const double[::1] theta, const double[:, ::1] X, const double[::1] y,
              int hidden, int act, int loss):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], h = hidden
    cdef Py_ssize_t i, j, k
    cdef double total = 0.0, z, val, dz, inv_n = 1.0 / n, a, hv, g
    grad = np.zeros(theta.shape[0])
    cdef double[::1] gv = grad
    cdef double[::1] hid
    cdef double[::1] dact
    if h == 0:
        for i in range(n):
            z = theta[d]
            for j in range(d):
                z += X[i, j] * theta[j]
            _dloss(z, y[i], loss, &val, &dz)
            total += val
            dz *= inv_n
            for j in range(d):
                gv[j] += X[i, j] * dz
            gv[d] += dz
        return total * inv_n, grad
    hid = np.empty(h)
    dact = np.empty(h)
    cdef Py_ssize_t ob1 = d * h, ow2 = d * h + h, ob2 = d * h + 2 * h
    for i in range(n):
        z = theta[ob2]
        for k in range(h):
            a = theta[ob1 + k]
            for j in range(d):
                a += X[i, j] * theta[j * h + k]
            if act == ACT_TANH:
                hv = tanh(a)
                dact[k] = 1.0 - hv * hv
            else:
                hv = a if a > 0 else 0.0
                dact[k] = 1.0 if a > 0 else 0.0
            hid[k] = hv
            z += hv * theta[ow2 + k]
        _dloss(z, y[i], loss, &val, &dz)
        total += val
        dz *= inv_n
        gv[ob2] += dz
        for k in range(h):
            gv[ow2 + k] += hid[k] * dz
            g = dz * theta[ow2 + k] * dact[k]
            gv[ob1 + k] += g
            for j in range(d):
                gv[j * h + k] += X[i, j] * g
    return total * inv_n, grad
