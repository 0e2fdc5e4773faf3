"""Exact t-SNE (full N x N affinities, no tree approximation)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels


@dataclass
class TSNEResult:
    embedding: np.ndarray
    kl_history: list = field(default_factory=list)
    betas: np.ndarray | None = None


def joint_affinities(x, perplexity, tol=1e-5):
    """Symmetrized joint affinities P and the per-point precisions."""
    d = _kernels.sq_dists(x, x)
    cond, betas = _kernels.tsne_binary_search(d, float(perplexity), tol, 200)
    p = (cond + cond.T) / (2.0 * len(x))
    return np.maximum(p, 1e-12) * (1 - np.eye(len(x))), betas


def tsne_embed(
    latents,
    perplexity=30.0,
    iters=1000,
    seed=0,
    learning_rate=200.0,
    exaggeration=12.0,
    exaggeration_iters=250,
    momentum=(0.5, 0.8),
    min_gain=0.01,
):
    """Embed ``latents`` in 2-D.

    Gradient descent on KL(P || Q) with per-coordinate adaptive gains,
    early exaggeration for the first ``exaggeration_iters`` iterations and
    momentum switching from ``momentum[0]`` to ``momentum[1]`` at the same
    point. ``kl_history`` holds the unexaggerated KL at the start of every
    post-exaggeration iteration plus the final value.
    """
    x = np.asarray(latents, dtype=np.float64)
    n = len(x)
    if n < 3 * perplexity:
        raise ValueError(f"t-SNE needs N >= 3 * perplexity ({3 * perplexity}), got {n}")
    p, betas = joint_affinities(x, perplexity)
    rng = np.random.default_rng(seed)
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    history = []
    for it in range(iters):
        early = it < exaggeration_iters
        grad, kl = _kernels.tsne_grad(p * exaggeration if early else p, y)
        if not early:
            history.append(kl)
        mom = momentum[0] if early else momentum[1]
        same_sign = np.sign(grad) == np.sign(update)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, min_gain, out=gains)
        update = mom * update - learning_rate * gains * grad
        y = y + update
        y -= y.mean(axis=0)
    history.append(kl_divergence(p, y))
    return TSNEResult(y, history, betas)


def kl_divergence(p, y):
    _, kl = _kernels.tsne_grad(p, y)
    return kl
