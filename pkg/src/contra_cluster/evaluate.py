"""Downstream classification protocols on frozen representations.

Three routes turn unsupervised features into labels: mapping each cluster
to the modal true label of its members, k-nearest-neighbour voting against a
labelled memory bank, and a linear probe trained with cross-entropy.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels
from .cluster import hard_label
from .nncore import Adam, Linear, ops
from .nncore.tensor import Tensor

log = logging.getLogger(__name__)


def _mode(values, fallback=None):
    """Most frequent value; smallest value wins ties."""
    values = np.asarray(values, dtype=np.int64)
    if values.size == 0:
        return fallback
    uniq, counts = np.unique(values, return_counts=True)
    return int(uniq[np.argmax(counts)])


@dataclass
class ClusterLabelMap:
    mapping: dict
    support: dict

    def __getitem__(self, cluster):
        return self.mapping[int(cluster)]

    def lookup(self, clusters):
        return np.array([self.mapping[int(c)] for c in clusters], dtype=np.int64)


def fit_label_map(clusters, true_labels, k):
    """Map each of ``k`` cluster ids to the modal true label of its members."""
    clusters = np.asarray(clusters, dtype=np.int64)
    true_labels = np.asarray(true_labels, dtype=np.int64)
    if clusters.shape != true_labels.shape or clusters.size == 0:
        raise ValueError("clusters and labels must be nonempty and aligned")
    global_mode = _mode(true_labels)
    mapping, support = {}, {}
    for c in range(k):
        members = true_labels[clusters == c]
        uniq, counts = np.unique(members, return_counts=True)
        support[c] = {int(u): int(n) for u, n in zip(uniq, counts)}
        if members.size == 0:
            warnings.warn(f"cluster {c} is empty; mapped to the global modal label {global_mode}", stacklevel=2)
            mapping[c] = global_mode
        else:
            mapping[c] = _mode(members)
    return ClusterLabelMap(mapping, support)


def fit_cluster_label_map(latents, true_labels, protos):
    return fit_label_map(hard_label(latents, protos), true_labels, protos.k)


def predict_stat(latents, protos, label_map):
    return label_map.lookup(hard_label(latents, protos))


@dataclass
class MemoryBank:
    latents: np.ndarray
    labels: np.ndarray
    k_neighbors: int = 5

    def __post_init__(self):
        self.latents = np.asarray(self.latents, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.latents) != len(self.labels):
            raise ValueError("memory bank latents and labels differ in length")
        if len(self.labels) == 0:
            raise ValueError("memory bank is empty")
        if not 1 <= self.k_neighbors <= len(self.labels):
            raise ValueError(f"k_neighbors={self.k_neighbors} must be in [1, {len(self.labels)}]")


def knn_predict(bank, queries, chunk=1024):
    """Modal label among the k Euclidean-nearest bank entries.

    Distance ties go to the lower bank index (stable sort); label ties to the
    smaller label.
    """
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    k = bank.k_neighbors
    out = np.empty(len(q), dtype=np.int64)
    for s in range(0, len(q), chunk):
        d = _kernels.sq_dists(q[s : s + chunk], bank.latents)
        nn = np.argsort(d, axis=1, kind="stable")[:, :k]
        for i, row in enumerate(bank.labels[nn]):
            out[s + i] = _mode(row)
    return out


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float

    def to_dict(self):
        return asdict(self)


def confusion_matrix(pred, true, class_count):
    cm = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(cm, (np.asarray(true, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
    return cm


def compute_metrics(pred, true, class_count):
    """Accuracy plus macro-averaged precision and recall over ``class_count`` classes.

    A class with no predictions (precision) or no members (recall) scores 0
    for that term and triggers a warning.
    """
    pred = np.asarray(pred, dtype=np.int64)
    true = np.asarray(true, dtype=np.int64)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise ValueError("no predictions")
    cm = confusion_matrix(pred, true, class_count)
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    if np.any(predicted == 0):
        warnings.warn(f"precision undefined for classes {np.flatnonzero(predicted == 0).tolist()}; using 0", stacklevel=2)
    if np.any(actual == 0):
        warnings.warn(f"recall undefined for classes {np.flatnonzero(actual == 0).tolist()}; using 0", stacklevel=2)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    return Metrics(float(tp.sum() / pred.size), float(precision.mean()), float(recall.mean()))


class LinearProbe:
    """Softmax classifier on frozen features."""

    def __init__(self, in_dim, class_count, seed=0):
        self.layer = Linear(in_dim, class_count, np.random.default_rng(seed), name="probe", dtype=np.float64)
        self.class_count = class_count

    def logits(self, x):
        return self.layer(Tensor(np.asarray(x, dtype=np.float64)))

    def predict(self, x):
        return np.argmax(self.logits(x).data, axis=1)

    def predict_proba(self, x):
        return np.exp(ops.log_softmax(self.logits(x), axis=1).data)


def cross_entropy(logits, labels):
    """Mean categorical cross-entropy of integer ``labels`` under ``logits``."""
    labels = np.asarray(labels, dtype=np.int64)
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(len(labels)), labels] = 1.0
    return ops.sum(ops.log_softmax(logits, axis=1) * Tensor(onehot)) * (-1.0 / len(labels))


def linear_probe(features, labels, class_count, epochs=200, lr=3e-4, batch_size=256, seed=0):
    """Train a linear layer with Adam on (already subsetted) features.

    Returns the probe and its per-epoch mean training loss.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    missing = sorted(set(range(class_count)) - set(np.unique(y).tolist()))
    if missing:
        raise ValueError(f"linear probe needs every class present; missing {missing}")
    probe = LinearProbe(x.shape[1], class_count, seed=seed)
    opt = Adam(probe.layer.parameters())
    rng = np.random.default_rng(seed + 1)
    losses = []
    for _ in range(epochs):
        order = rng.permutation(len(y))
        total = 0.0
        for s in range(0, len(y), batch_size):
            idx = order[s : s + batch_size]
            opt.zero_grad()
            loss = cross_entropy(probe.logits(x[idx]), y[idx])
            loss.backward()
            opt.step(lr)
            total += loss.item() * len(idx)
        losses.append(total / len(y))
    return probe, losses
