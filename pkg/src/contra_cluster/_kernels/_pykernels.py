"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and semantics; the Cython versions are selected at import when available.
"""
import numpy as np
from numpy.lib.stride_tricks import as_strided


def im2col(xp, k, stride, oh, ow):
    """Patches of a padded NCHW array as a (B, oh, ow, C, k, k) array."""
    xp = np.ascontiguousarray(xp)
    b, c, _, _ = xp.shape
    sb, sc, sh, sw = xp.strides
    view = as_strided(
        xp,
        shape=(b, oh, ow, c, k, k),
        strides=(sb, sh * stride, sw * stride, sc, sh, sw),
        writeable=False,
    )
    return np.ascontiguousarray(view)


def col2im(cols, hp, wp, stride):
    """Scatter-add (B, oh, ow, C, k, k) patches back onto a (B, C, hp, wp) canvas."""
    b, oh, ow, c, k, _ = cols.shape
    out = np.zeros((b, c, hp, wp), dtype=cols.dtype)
    # loop over the k*k kernel taps; each tap is a strided slice assignment
    for i in range(k):
        i_end = i + stride * oh
        for j in range(k):
            j_end = j + stride * ow
            out[:, :, i:i_end:stride, j:j_end:stride] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return out


def sq_dists(a, b):
    """Squared Euclidean distances between rows of ``a`` and rows of ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.float64)
    # chunk rows so the (chunk, m, d) difference tensor stays small
    chunk = max(1, int(2**22 // max(1, b.shape[0] * a.shape[1])))
    for s in range(0, a.shape[0], chunk):
        diff = a[s : s + chunk, None, :] - b[None, :, :]
        out[s : s + chunk] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def kmeans_assign(x, centers):
    """Nearest center per row (lowest index on ties) and its squared distance."""
    d = sq_dists(x, centers)
    labels = np.argmin(d, axis=1).astype(np.int64)
    return labels, d[np.arange(d.shape[0]), labels]


def _row_entropy(d, beta):
    p = np.exp(-(d - d.min()) * beta)
    sp = p.sum()
    h = np.log(sp) + beta * np.sum((d - d.min()) * p) / sp
    return h, p / sp


def tsne_binary_search(dist, perplexity, tol=1e-5, max_iter=100):
    """Per-row precision search so each conditional distribution has the target perplexity.

    ``dist`` holds squared distances. Returns the conditional matrix
    P[i, j] = p_{j|i} (zero diagonal) and the precisions beta = 1/(2 sigma^2).
    """
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    target = np.log(perplexity)
    cond = np.zeros((n, n), dtype=np.float64)
    betas = np.ones(n, dtype=np.float64)
    idx = np.arange(n)
    for i in range(n):
        d = dist[i, idx != i]
        beta, lo, hi = 1.0, -np.inf, np.inf
        h, p = _row_entropy(d, beta)
        for _ in range(max_iter):
            diff = h - target
            if abs(diff) <= tol:
                break
            if diff > 0:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = beta / 2.0 if lo == -np.inf else (beta + lo) / 2.0
            h, p = _row_entropy(d, beta)
        cond[i, idx != i] = p
        betas[i] = beta
    return cond, betas


def tsne_grad(p, y):
    """Gradient of KL(P || Q) w.r.t. the embedding ``y`` plus the KL value.

    ``p`` is the symmetric joint affinity matrix (zero diagonal, sums to 1).
    """
    y = np.asarray(y, dtype=np.float64)
    d = sq_dists(y, y)
    num = 1.0 / (1.0 + d)
    np.fill_diagonal(num, 0.0)
    z = num.sum()
    q = num / z
    w = (p - q) * num
    grad = 4.0 * (w.sum(axis=1)[:, None] * y - w @ y)
    mask = p > 0
    kl = float(np.sum(p[mask] * np.log(p[mask] / np.maximum(q[mask], 1e-300))))
    return grad, kl
