"""Self-expression layer: Z -> ZC, the robust objectives on C, and C post-processing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bd
from .losses import CimConfig, cim_loss_and_grad, median_sigma, mse_loss_and_grad


@dataclass(frozen=True)
class PostprocessConfig:
    """``keep_ratio``: fraction of each row's magnitude mass kept;
    ``rank``: number of singular triplets kept after thresholding."""

    keep_ratio: float = 0.9
    rank: int = 1

    def __post_init__(self):
        if not 0 < self.keep_ratio <= 1:
            raise ValueError(f"keep_ratio must be in (0, 1], got {self.keep_ratio}")
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")


def zero_diagonal(C):
    np.fill_diagonal(C, 0.0)
    return C


def self_express(Z, C):
    """Return (ZC, E = Z - ZC) for Z of shape (features, N)."""
    Z, C = np.asarray(Z, dtype=float), np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape != (Z.shape[1], Z.shape[1]):
        raise ValueError(f"C must be {Z.shape[1]}x{Z.shape[1]} for Z of shape {Z.shape}, got {C.shape}")
    ZC = Z @ C
    return ZC, Z - ZC


def error_loss(E, error="cim", cim_cfg=None):
    """Self-expression error term (CIM^2 or MSE) and its gradient wrt E."""
    if error == "cim":
        cfg = cim_cfg or CimConfig()
        if not cfg.sigma > 0:
            cfg = cfg.with_sigma(median_sigma(E))
        return cim_loss_and_grad(E, cfg)
    if error == "mse":
        return mse_loss_and_grad(E)
    raise ValueError(f"unknown error measure {error!r}")


def regularizer(C, kind, k=None, eig_method="auto"):
    """Regularizer value and gradient: squared Frobenius norm (l2) or BD norm."""
    if kind == "l2":
        return float(np.sum(C * C)), 2.0 * C
    if kind == "bd":
        if k is None:
            raise ValueError("BD regularizer needs the number of clusters k")
        return bd.bd_norm_and_subgradient(C, k, method=eig_method)
    raise ValueError(f"unknown regularizer {kind!r}")


def robust_objective(Z, C, kind="l2", gamma=0.0, cim_cfg=None, k=None, error="cim"):
    """Error(Z - ZC) + gamma * reg(C); returns (loss, grad wrt C) with zero diagonal.

    ``cim_cfg.sigma <= 0`` selects the kernel width from the current residual.
    """
    Z = np.asarray(Z, dtype=float)
    _, E = self_express(Z, C)
    err, gE = error_loss(E, error, cim_cfg)
    reg, gR = regularizer(C, kind, k) if gamma > 0 else (0.0, 0.0)
    grad = -Z.T @ gE + gamma * gR
    return err + gamma * reg, zero_diagonal(np.array(grad, dtype=float))


def threshold_rows(C, keep_ratio):
    """Keep, per row, the largest-magnitude entries whose sum first reaches keep_ratio of the row mass."""
    C = np.asarray(C, dtype=float)
    out = np.zeros_like(C)
    for i, row in enumerate(C):
        mag = np.abs(row)
        total = mag.sum()
        if total == 0:
            out[i] = row
            continue
        # stable: ties keep the lower column index first
        order = np.argsort(-mag, kind="stable")
        csum = np.cumsum(mag[order])
        cut = int(np.searchsorted(csum, keep_ratio * total - 1e-12 * total)) + 1
        keep = order[: min(cut, len(order))]
        out[i, keep] = row[keep]
    return out


def truncate_rank(C, rank):
    U, s, Vt = np.linalg.svd(C)
    r = min(rank, len(s))
    return (U[:, :r] * s[:r]) @ Vt[:r]


def postprocess_C(C, cfg):
    return truncate_rank(threshold_rows(C, cfg.keep_ratio), cfg.rank)


def off_block_mass(C, labels):
    """Fraction of |C| mass linking samples with different labels."""
    labels = np.asarray(labels)
    mag = np.abs(np.asarray(C, dtype=float))
    total = mag.sum()
    if total == 0:
        return 0.0
    return float(mag[labels[:, None] != labels[None, :]].sum() / total)
