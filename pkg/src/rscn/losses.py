"""Loss terms of the robust self-supervised subspace clustering network.

Matrix conventions follow the self-expressive model: ``E``, ``S`` and ``T``
hold one sample per column. Logits and one-hot label matrices hold one
sample per row.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .nn import softmax


@dataclass(frozen=True)
class CimConfig:
    """Gaussian-kernel settings. ``sigma <= 0`` means: pick it with :func:`median_sigma`."""

    sigma: float = 0.0
    distance: str = "squared"  # or "euclidean"

    def __post_init__(self):
        if self.distance not in ("squared", "euclidean"):
            raise ValueError(f"unknown CIM distance {self.distance!r}")

    def with_sigma(self, sigma):
        return CimConfig(sigma=float(sigma), distance=self.distance)


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 0.0
    lambda4: float = 0.0
    lambda5: float = 0.0
    lambda6: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ValueError(f"loss weight {name} must be >= 0, got {value}")

    def as_tuple(self):
        return (self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.lambda5, self.lambda6)


def _require_sigma(cfg):
    if not cfg.sigma > 0:
        raise ValueError("CimConfig.sigma must be > 0 at evaluation time")
    return cfg.sigma


def _col_dist(diff, cfg):
    sq = np.sum(diff * diff, axis=0)
    return sq if cfg.distance == "squared" else np.sqrt(sq)


def correntropy_kernel(s, t, cfg):
    s, t = np.asarray(s, dtype=float), np.asarray(t, dtype=float)
    if s.shape != t.shape:
        raise ValueError(f"length mismatch: {s.shape} vs {t.shape}")
    sigma = _require_sigma(cfg)
    d = _col_dist((s - t).reshape(-1, 1), cfg)[0]
    return float(np.exp(-d / (2 * sigma**2)))


def correntropy(S, T, cfg):
    """Empirical correntropy: mean kernel value over paired columns."""
    S, T = np.asarray(S, dtype=float), np.asarray(T, dtype=float)
    if S.shape != T.shape:
        raise ValueError(f"shape mismatch: {S.shape} vs {T.shape}")
    sigma = _require_sigma(cfg)
    S2, T2 = S.reshape(S.shape[0], -1), T.reshape(T.shape[0], -1)
    return float(np.mean(np.exp(-_col_dist(S2 - T2, cfg) / (2 * sigma**2))))


def cim(S, T, cfg):
    """Correntropy induced metric, bounded in [0, 1]."""
    return float(np.sqrt(max(1.0 - correntropy(S, T, cfg), 0.0)))


def median_sigma(E, fallback=1.0):
    """Median pairwise distance between the columns of ``E``."""
    E = np.asarray(E, dtype=float)
    if E.shape[1] < 2:
        return fallback
    med = float(np.median(pdist(E.T)))
    return med if med > 0 and np.isfinite(med) else fallback


def cim_loss_and_grad(E, cfg):
    """Squared CIM of ``E`` against zero and its gradient with respect to ``E``."""
    E = np.asarray(E, dtype=float)
    if not np.all(np.isfinite(E)):
        raise FloatingPointError("non-finite entries in self-expression residual")
    sigma = _require_sigma(cfg)
    n = E.shape[1]
    sq = np.sum(E * E, axis=0)
    if cfg.distance == "squared":
        kern = np.exp(-sq / (2 * sigma**2))
        grad = E * (kern / (n * sigma**2))
    else:
        norm = np.sqrt(sq)
        kern = np.exp(-norm / (2 * sigma**2))
        scale = np.divide(kern, 2 * sigma**2 * n * norm, out=np.zeros_like(norm), where=norm > 0)
        grad = E * scale
    return float(1.0 - kern.mean()), grad


def mse_loss_and_grad(E):
    """Self-expression MSE counterpart: (1/2N) ||E||_F^2."""
    E = np.asarray(E, dtype=float)
    if not np.all(np.isfinite(E)):
        raise FloatingPointError("non-finite entries in self-expression residual")
    n = E.shape[1]
    return float(0.5 * np.sum(E * E) / n), E / n


def reconstruction_loss(X, X_hat, with_grad=False):
    X, X_hat = np.asarray(X, dtype=float), np.asarray(X_hat, dtype=float)
    if X.shape != X_hat.shape:
        raise ValueError(f"shape mismatch: {X.shape} vs {X_hat.shape}")
    n = X.shape[0]
    diff = X_hat - X
    loss = float(0.5 * np.sum(diff * diff) / n)
    return (loss, diff / n) if with_grad else loss


def disagreement_mask(Q):
    """M_ij = ||q_i - q_j||^2 / 2, i.e. 1 where pseudo-labels differ."""
    Q = np.asarray(Q, dtype=float)
    sq = np.sum(Q * Q, axis=1)
    return 0.5 * (sq[:, None] + sq[None, :] - 2 * Q @ Q.T)


def cq_loss(C, Q, with_grad=False):
    C, Q = np.asarray(C, dtype=float), np.asarray(Q, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1] or Q.shape[0] != C.shape[0]:
        raise ValueError(f"cq_loss: C {C.shape} and Q {Q.shape} do not match")
    M = disagreement_mask(Q)
    loss = float(np.sum(np.abs(C) * M))
    return (loss, np.sign(C) * M) if with_grad else loss


def cross_entropy_loss(logits, Q, with_grad=False):
    """Mean categorical cross-entropy of softmax(logits) against one-hot ``Q``."""
    logits, Q = np.asarray(logits, dtype=float), np.asarray(Q, dtype=float)
    if logits.shape != Q.shape:
        raise ValueError(f"shape mismatch: logits {logits.shape} vs targets {Q.shape}")
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.sum(np.exp(z), axis=1, keepdims=True))
    loss = float(-np.sum(Q * logp) / n)
    if not with_grad:
        return loss
    return loss, (softmax(logits) - Q) / n


def center_loss(logits, labels, centroids, with_grad=False):
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels)
    centroids = np.asarray(centroids, dtype=float)
    if labels.size and (labels.min() < 0 or labels.max() >= len(centroids)):
        raise ValueError("center_loss: label out of range of the centroid table")
    n = logits.shape[0]
    diff = logits - centroids[labels]
    loss = float(np.sum(diff * diff) / n)
    return (loss, 2 * diff / n) if with_grad else loss


def symmetric_affinity(C):
    C = np.asarray(C, dtype=float)
    return 0.5 * (np.abs(C) + np.abs(C.T))


def symmetry_loss(C, with_grad=False):
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"symmetry_loss needs a square matrix, got {C.shape}")
    R = C - symmetric_affinity(C)
    loss = float(0.5 * np.sum(R * R))
    if not with_grad:
        return loss
    # A_ij and A_ji both hold |c_ij| / 2
    return loss, R - 0.5 * np.sign(C) * (R + R.T)


def total_loss(parts, weights):
    parts = tuple(float(p) for p in parts)
    if len(parts) != 6:
        raise ValueError("total_loss expects six loss parts")
    return float(sum(w * p for w, p in zip(weights.as_tuple(), parts)))
