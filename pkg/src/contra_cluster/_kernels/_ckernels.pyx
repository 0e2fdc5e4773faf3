# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs, INFINITY

cnp.import_array()

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] xp, int k, int stride, int oh, int ow):
    cdef Py_ssize_t b = xp.shape[0], c = xp.shape[1]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((b, oh, ow, c, k, k), dtype=dtype)
    cdef real[:, :, :, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, i, j, ch, ki, kj, r0, c0
    with nogil:
        for n in range(b):
            for i in range(oh):
                r0 = i * stride
                for j in range(ow):
                    c0 = j * stride
                    for ch in range(c):
                        for ki in range(k):
                            for kj in range(k):
                                out[n, i, j, ch, ki, kj] = xp[n, ch, r0 + ki, c0 + kj]
    return out_arr


def col2im(real[:, :, :, :, :, ::1] cols, int hp, int wp, int stride):
    cdef Py_ssize_t b = cols.shape[0], oh = cols.shape[1], ow = cols.shape[2]
    cdef Py_ssize_t c = cols.shape[3], k = cols.shape[4]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((b, c, hp, wp), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, i, j, ch, ki, kj, r0, c0
    with nogil:
        for n in range(b):
            for i in range(oh):
                r0 = i * stride
                for j in range(ow):
                    c0 = j * stride
                    for ch in range(c):
                        for ki in range(k):
                            for kj in range(k):
                                out[n, ch, r0 + ki, c0 + kj] += cols[n, i, j, ch, ki, kj]
    return out_arr


def sq_dists(a, b):
    cdef double[:, ::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[:, ::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n = av.shape[0], m = bv.shape[0], d = av.shape[1]
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, t
    cdef double acc, diff
    with nogil:
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for t in range(d):
                    diff = av[i, t] - bv[j, t]
                    acc = acc + diff * diff
                out[i, j] = acc
    return out_arr


def kmeans_assign(x, centers):
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] cv = np.ascontiguousarray(centers, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], k = cv.shape[0], d = xv.shape[1]
    labels_arr = np.empty(n, dtype=np.int64)
    mind_arr = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] labels = labels_arr
    cdef double[::1] mind = mind_arr
    cdef Py_ssize_t i, j, t, best
    cdef double acc, diff, bestd
    with nogil:
        for i in range(n):
            best = 0
            bestd = INFINITY
            for j in range(k):
                acc = 0.0
                for t in range(d):
                    diff = xv[i, t] - cv[j, t]
                    acc = acc + diff * diff
                if acc < bestd:
                    bestd = acc
                    best = j
            labels[i] = best
            mind[i] = bestd
    return labels_arr, mind_arr


cdef double _row_entropy(double[::1] d, double beta, double[::1] p, Py_ssize_t skip) noexcept nogil:
    cdef Py_ssize_t j, n = d.shape[0]
    cdef double dmin = INFINITY, sp = 0.0, sdp = 0.0
    for j in range(n):
        if j != skip and d[j] < dmin:
            dmin = d[j]
    for j in range(n):
        if j == skip:
            p[j] = 0.0
        else:
            p[j] = exp(-(d[j] - dmin) * beta)
            sp = sp + p[j]
            sdp = sdp + (d[j] - dmin) * p[j]
    for j in range(n):
        p[j] = p[j] / sp
    return log(sp) + beta * sdp / sp


def tsne_binary_search(dist, double perplexity, double tol=1e-5, int max_iter=100):
    cdef double[:, ::1] dv = np.ascontiguousarray(dist, dtype=np.float64)
    cdef Py_ssize_t n = dv.shape[0]
    cond_arr = np.zeros((n, n), dtype=np.float64)
    betas_arr = np.ones(n, dtype=np.float64)
    cdef double[:, ::1] cond = cond_arr
    cdef double[::1] betas = betas_arr
    cdef double target = log(perplexity)
    cdef double beta, lo, hi, h, diff
    cdef Py_ssize_t i
    cdef int it
    with nogil:
        for i in range(n):
            beta = 1.0
            lo = -INFINITY
            hi = INFINITY
            h = _row_entropy(dv[i], beta, cond[i], i)
            for it in range(max_iter):
                diff = h - target
                if fabs(diff) <= tol:
                    break
                if diff > 0:
                    lo = beta
                    if hi == INFINITY:
                        beta = beta * 2.0
                    else:
                        beta = (beta + hi) / 2.0
                else:
                    hi = beta
                    if lo == -INFINITY:
                        beta = beta / 2.0
                    else:
                        beta = (beta + lo) / 2.0
                h = _row_entropy(dv[i], beta, cond[i], i)
            betas[i] = beta
    return cond_arr, betas_arr


def tsne_grad(p, y):
    cdef double[:, ::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef double[:, ::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = yv.shape[0], d = yv.shape[1]
    grad_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] grad = grad_arr
    cdef Py_ssize_t i, j, t
    cdef double z = 0.0, dist, diff, num, q, w, kl = 0.0
    with nogil:
        # first pass: normalizer of the Student-t kernel
        for i in range(n):
            for j in range(n):
                if i != j:
                    dist = 0.0
                    for t in range(d):
                        diff = yv[i, t] - yv[j, t]
                        dist = dist + diff * diff
                    z = z + 1.0 / (1.0 + dist)
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                dist = 0.0
                for t in range(d):
                    diff = yv[i, t] - yv[j, t]
                    dist = dist + diff * diff
                num = 1.0 / (1.0 + dist)
                q = num / z
                w = (pv[i, j] - q) * num
                for t in range(d):
                    grad[i, t] = grad[i, t] + 4.0 * w * (yv[i, t] - yv[j, t])
                if pv[i, j] > 0:
                    if q < 1e-300:
                        q = 1e-300
                    kl = kl + pv[i, j] * log(pv[i, j] / q)
    return grad_arr, kl
