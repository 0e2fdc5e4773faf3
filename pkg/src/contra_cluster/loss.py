"""NT-Xent contrastive loss, MSE reconstruction and their weighted sum."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nncore import ops
from .nncore.ops import ShapeError
from .nncore.tensor import Tensor, as_tensor

EPS = 1e-12


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.5
    alpha: float = 0.1

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")


def cosine_sim(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(a @ b / ((np.linalg.norm(a) + EPS) * (np.linalg.norm(b) + EPS)))


def ntxent(z1, z2, temperature=0.5):
    """Mean NT-Xent over the 2B anchors of two aligned projection batches.

    Row i of ``z1`` and row i of ``z2`` form a positive pair. For each anchor
    the softmax runs over every other row of the stacked 2B batch, so the
    positive sits in the denominator alongside the 2B - 2 negatives.
    """
    z1, z2 = as_tensor(z1), as_tensor(z2)
    if z1.shape != z2.shape or z1.ndim != 2:
        raise ShapeError(f"ntxent: views must share a (B, D) shape, got {z1.shape} and {z2.shape}")
    b = z1.shape[0]
    if b == 0:
        raise ValueError("ntxent needs at least one pair")
    z = ops.l2_normalize(ops.concat([z1, z2], axis=0), axis=1, eps=EPS)
    logits = ops.matmul(z, z.T) * (1.0 / temperature)
    n = 2 * b
    self_mask = np.zeros((n, n), dtype=z.dtype)
    # large finite negative rather than -inf: masked entries are later multiplied by 0
    np.fill_diagonal(self_mask, -1e9)
    logp = ops.log_softmax(logits + Tensor(self_mask), axis=1)
    pos = np.zeros((n, n), dtype=z.dtype)
    idx = np.arange(n)
    pos[idx, (idx + b) % n] = 1.0
    return ops.sum(logp * Tensor(pos)) * (-1.0 / n)


def mse(x, y):
    x, y = as_tensor(x), as_tensor(y)
    if x.shape != y.shape:
        raise ShapeError(f"mse: {x.shape} vs {y.shape}")
    d = x - y
    return ops.mean(d * d)


def reconstruction(x1, y1, x2, y2):
    return mse(x1, y1) + mse(x2, y2)


def combined(z1, z2, x1, y1, x2, y2, cfg=LossConfig()):
    """Contrastive term plus ``alpha`` times the summed reconstruction error of both views."""
    return ntxent(z1, z2, cfg.temperature) + reconstruction(x1, y1, x2, y2) * cfg.alpha
