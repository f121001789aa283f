"""Pseudo-labels from the representation matrix: spectral embedding + k-means."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import bd
from .selfexpr import PostprocessConfig, postprocess_C


@dataclass(frozen=True)
class PseudoLabelState:
    labels: np.ndarray
    Q: np.ndarray
    centroids: np.ndarray | None = None
    epoch: int = 0

    @property
    def k(self):
        return self.Q.shape[1]

    def same_cluster(self):
        """Pairwise indicator q_ij = 1 iff samples i and j share a pseudo-label."""
        return (self.labels[:, None] == self.labels[None, :]).astype(float)


def one_hot(labels, k):
    labels = np.asarray(labels, dtype=int)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    Q = np.zeros((len(labels), k))
    Q[np.arange(len(labels)), labels] = 1.0
    return Q


def spectral_embed(A, k, method="auto", return_raw=False):
    """Rows of the k bottom eigenvectors of the normalized Laplacian, scaled to unit length."""
    A = np.asarray(A, dtype=float)
    L, _ = bd.laplacian_from_affinity(A)
    V = bd.k_smallest_eigs(L, k, method=method).vectors
    norms = np.linalg.norm(V, axis=1, keepdims=True)
    U = np.divide(V, norms, out=np.zeros_like(V), where=norms > 1e-12)
    return (U, V) if return_raw else U


def _kmeanspp(points, k, rng):
    n = len(points)
    centers = [points[rng.integers(n)]]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(points[idx])
        d2 = np.minimum(d2, np.sum((points - points[idx]) ** 2, axis=1))
    return np.array(centers)


def _sq_dists(points, centers):
    return (np.sum(points**2, axis=1)[:, None] - 2 * points @ centers.T
            + np.sum(centers**2, axis=1)[None, :]).clip(min=0)


def _lloyd(points, centers, max_iter):
    labels = None
    for _ in range(max_iter):
        d2 = _sq_dists(points, centers)
        new = np.argmin(d2, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(len(centers)):
            members = points[labels == c]
            if len(members):
                centers[c] = members.mean(axis=0)
            else:
                # empty cluster: move its centroid to the point farthest from its own center
                far = int(np.argmax(d2[np.arange(len(points)), labels]))
                centers[c] = points[far]
                labels[far] = c
    d2 = _sq_dists(points, centers)
    labels = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(len(points)), labels].sum())
    return labels, centers, inertia


def kmeans(points, k, seed=0, max_iter=300, restarts=1):
    """k-means++ seeded Lloyd iterations; the restart with lowest inertia wins
    (ties resolved by restart index). Returns (labels, centers, inertia)."""
    points = np.asarray(points, dtype=float)
    if k > len(points):
        raise ValueError(f"k={k} exceeds the number of points ({len(points)})")
    best = None
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        result = _lloyd(points, _kmeanspp(points, k, rng), max_iter)
        if best is None or result[2] < best[2]:
            best = result
    return best


def make_pseudo_labels(C, k, pp_cfg=None, seed=0, restarts=20, epoch=0, postprocess=True):
    """Post-process C, build its affinity, embed spectrally and cluster."""
    C = np.asarray(C, dtype=float)
    if postprocess:
        C = postprocess_C(C, pp_cfg or PostprocessConfig())
    system = bd.build_affinity(C)
    U = spectral_embed(system.A, k)
    labels, _, _ = kmeans(U, k, seed=seed, restarts=restarts)
    return PseudoLabelState(labels=labels, Q=one_hot(labels, k), epoch=epoch)


def contingency(a, b, k):
    M = np.zeros((k, k), dtype=np.int64)
    np.add.at(M, (np.asarray(a), np.asarray(b)), 1)
    return M


def align_labels(new, old, k):
    """Relabel ``new`` so that it overlaps ``old`` as much as possible (Hungarian matching)."""
    M = contingency(new, old, k)
    rows, cols = linear_sum_assignment(-M)
    mapping = np.empty(k, dtype=int)
    mapping[rows] = cols
    return mapping[np.asarray(new)]
