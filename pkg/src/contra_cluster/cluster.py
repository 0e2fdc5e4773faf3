"""KMeans with elbow-based k selection, and cosine soft assignment to prototypes."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

log = logging.getLogger(__name__)

EPS = 1e-12


class NoKneeWarning(UserWarning):
    """The inertia curve is (numerically) straight, so no elbow stands out."""


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    n_iter: int
    history: list = field(default_factory=list)


def _kmeanspp(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    centers[0] = x[rng.integers(n)]
    closest = _kernels.sq_dists(x, centers[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[j] = x[idx]
        closest = np.minimum(closest, _kernels.sq_dists(x, centers[j : j + 1])[:, 0])
    return centers


def _inertia(x, centers, labels):
    diff = x - centers[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def _lloyd(x, centers, max_iter, tol):
    labels, _ = _kernels.kmeans_assign(x, centers)
    history = [_inertia(x, centers, labels)]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        new = np.zeros_like(centers)
        counts = np.bincount(labels, minlength=len(centers))
        np.add.at(new, labels, x)
        nonempty = counts > 0
        new[nonempty] /= counts[nonempty, None]
        if not nonempty.all():
            # reseed each empty cluster at the point currently farthest from its center
            dist = np.einsum("ij,ij->i", x - centers[labels], x - centers[labels])
            for j in np.flatnonzero(~nonempty):
                far = int(np.argmax(dist))
                new[j] = x[far]
                dist[far] = -1.0
        shift = float(np.sum((new - centers) ** 2))
        centers = new
        labels, _ = _kernels.kmeans_assign(x, centers)
        history.append(_inertia(x, centers, labels))
        if shift < tol:
            break
    return centers, labels, history, n_iter


def kmeans_fit(points, k, seed=0, max_iter=300, tol=1e-4, n_init=10):
    """Lloyd's algorithm with k-means++ seeding, best of ``n_init`` restarts.

    ``tol`` bounds the total squared centroid shift between iterations.
    Returns a :class:`KMeansResult`; ``history`` is the per-iteration
    inertia trace of the winning restart.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("points must be a 2-d array")
    if k < 1 or x.shape[0] < k:
        raise ValueError(f"need 1 <= k <= N, got k={k}, N={x.shape[0]}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        centers = _kmeanspp(x, k, rng)
        centers, labels, history, n_iter = _lloyd(x, centers, max_iter, tol)
        inertia = history[-1]
        if best is None or inertia < best.inertia:
            best = KMeansResult(centers, labels, inertia, n_iter, history)
    return best


def knee_index(ks, inertias):
    """Index of the point farthest from the chord joining the curve's endpoints.

    Returns 0 (and warns) when no point lies measurably off the chord.
    """
    ks = np.asarray(ks, dtype=np.float64)
    ys = np.asarray(inertias, dtype=np.float64)
    if len(ks) < 3:
        return 0
    dx, dy = ks[-1] - ks[0], ys[-1] - ys[0]
    norm = np.hypot(dx, dy)
    dist = np.abs(dx * (ys - ys[0]) - dy * (ks - ks[0])) / norm
    # the curve lies below the chord at an elbow; points above it are not knees
    below = (dx * (ys - ys[0]) - dy * (ks - ks[0])) < 0
    dist = np.where(below, dist, 0.0)
    scale = max(abs(ys).max(), 1.0) * max(abs(ks).max(), 1.0) / norm
    if dist.max() <= 1e-9 * scale:
        warnings.warn("inertia curve has no knee; returning the smallest k", NoKneeWarning, stacklevel=2)
        return 0
    return int(np.argmax(dist))


@dataclass
class ElbowResult:
    k: int
    ks: list
    inertias: list

    def curve(self):
        return dict(zip(self.ks, self.inertias))


def elbow_select(points, k_range=range(2, 13), seed=0, n_init=10, max_iter=300, tol=1e-4):
    """Fit KMeans for each k and pick the knee of the inertia curve."""
    ks = [int(k) for k in k_range]
    if not ks:
        raise ValueError("k_range is empty")
    if max(ks) > len(points):
        raise ValueError(f"max k {max(ks)} exceeds number of points {len(points)}")
    inertias = []
    for k in ks:
        res = kmeans_fit(points, k, seed=seed, n_init=n_init, max_iter=max_iter, tol=tol)
        inertias.append(res.inertia)
        log.debug("k=%d inertia=%.6g", k, res.inertia)
    return ElbowResult(ks[knee_index(ks, inertias)], ks, inertias)


@dataclass(frozen=True)
class PrototypeMatrix:
    """Cluster prototypes stored as the columns of a (dim, k) matrix."""

    prototypes: np.ndarray
    assignment_temperature: float = 0.1

    def __post_init__(self):
        p = np.asarray(self.prototypes)
        if p.ndim != 2 or p.shape[1] < 2:
            raise ValueError(f"prototype matrix must be (dim, k>=2), got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("prototype matrix has non-finite entries")
        if self.assignment_temperature <= 0:
            raise ValueError("assignment_temperature must be > 0")

    @classmethod
    def from_centroids(cls, centroids, assignment_temperature=0.1):
        return cls(np.ascontiguousarray(np.asarray(centroids).T), assignment_temperature)

    @property
    def k(self):
        return self.prototypes.shape[1]

    @property
    def centroids(self):
        return self.prototypes.T


def cosine_similarities(h, protos):
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    p = np.asarray(protos.prototypes, dtype=np.float64)
    hn = h / (np.linalg.norm(h, axis=1, keepdims=True) + EPS)
    pn = p / (np.linalg.norm(p, axis=0, keepdims=True) + EPS)
    return hn @ pn


def soft_assign(h, protos, temperature=None):
    """Row-wise softmax of cosine similarities divided by the assignment temperature."""
    t = protos.assignment_temperature if temperature is None else temperature
    s = cosine_similarities(h, protos) / t
    s -= s.max(axis=1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True)


def hard_label(h, protos):
    """Index of the most cosine-similar prototype; lowest index on ties."""
    return np.argmax(cosine_similarities(h, protos), axis=1)
