"""Block-diagonal regularizer: affinity, normalized Laplacian, eigensolver, subgradient."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

DENSE_CUTOFF = 512


class ConvergenceError(RuntimeError):
    def __init__(self, message, residuals):
        super().__init__(f"{message}; residuals={np.array2string(np.asarray(residuals), precision=3)}")
        self.residuals = np.asarray(residuals)


@dataclass(frozen=True)
class AffinitySystem:
    A: np.ndarray
    degree: np.ndarray
    L: np.ndarray

    @property
    def inv_sqrt_degree(self):
        return _inv_sqrt(self.degree)


@dataclass(frozen=True)
class EigResult:
    values: np.ndarray
    vectors: np.ndarray
    method: str = "dense"
    iterations: int = 0


def _inv_sqrt(degree):
    out = np.zeros_like(degree)
    pos = degree > 0
    out[pos] = 1.0 / np.sqrt(degree[pos])
    return out


def _check_square(C):
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise ValueError("matrix has non-finite entries")
    return C


def laplacian_from_affinity(A, degree=None):
    """I - D^-1/2 A D^-1/2; isolated nodes keep their identity diagonal entry.

    ``degree`` can be supplied to evaluate the Laplacian with a frozen degree matrix.
    """
    A = np.asarray(A, dtype=float)
    if degree is None:
        degree = A.sum(axis=1)
    s = _inv_sqrt(degree)
    L = np.eye(len(A)) - s[:, None] * A * s[None, :]
    return 0.5 * (L + L.T), degree


def build_affinity(C, degree=None):
    C = _check_square(C)
    A = 0.5 * (np.abs(C) + np.abs(C.T))
    L, deg = laplacian_from_affinity(A, degree)
    return AffinitySystem(A=A, degree=deg, L=L)


# -- eigensolvers ---------------------------------------------------------------

def _dense(L, k):
    w, V = np.linalg.eigh(L)
    return EigResult(values=w[:k].copy(), vectors=V[:, :k].copy(), method="dense")


def _orthonormalize(W, V, rng):
    """Orthonormalize the block W against V (twice) and within itself.

    Columns that collapse numerically are replaced by random directions so
    that the Krylov basis keeps growing after an invariant subspace is hit.
    """
    n = W.shape[0]
    for _ in range(2):
        if V.shape[1]:
            W = W - V @ (V.T @ W)
    out = []
    for j in range(W.shape[1]):
        w = W[:, j]
        for attempt in range(3):
            basis = [V] + ([np.column_stack(out)] if out else [])
            for B in basis:
                if B.shape[1]:
                    w = w - B @ (B.T @ w)
                    w = w - B @ (B.T @ w)
            nrm = np.linalg.norm(w)
            if nrm > 1e-10 * max(1.0, np.linalg.norm(W[:, j])):
                out.append(w / nrm)
                break
            w = rng.standard_normal(n)
        else:
            break
    return np.column_stack(out) if out else np.zeros((n, 0))


def lanczos_smallest(L, k, block=None, krylov_dim=None, restarts=20, tol=1e-10, seed=0):
    """k smallest eigenpairs of symmetric ``L`` by thick-restart block Lanczos.

    The Krylov basis is grown block by block with full reorthogonalization;
    the block size (default ``k``) lets eigenvalues of multiplicity up to the
    block size be resolved, which is needed when the graph splits into
    several components. After each cycle the best Ritz vectors are kept
    together with the next Krylov block and the expansion continues.

    Raises ConvergenceError when residuals stay above ``tol * ||L||`` after
    ``restarts`` cycles.
    """
    L = np.asarray(L, dtype=float)
    n = L.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    b = min(block or k, n)
    m = min(n, krylov_dim or max(10 * k, 4 * b + 20))
    keep = min(n, max(k + b, min(2 * k + 2, m - b)))
    rng = np.random.default_rng(seed)

    V = _orthonormalize(rng.standard_normal((n, b)), np.zeros((n, 0)), rng)
    LV = L @ V
    last = V.shape[1]  # width of the newest block, whose images are LV[:, -last:]
    matvecs = last
    res = np.full(k, np.inf)
    for cycle in range(restarts + 1):
        while V.shape[1] < m:
            W = _orthonormalize(LV[:, -last:], V, rng)[:, : m - V.shape[1]]
            if W.shape[1] == 0:
                break
            LW = L @ W
            matvecs += W.shape[1]
            V, LV = np.column_stack([V, W]), np.column_stack([LV, LW])
            last = W.shape[1]
        H = V.T @ LV
        theta, S = np.linalg.eigh(0.5 * (H + H.T))
        Y, LY = V @ S, LV @ S
        R = LY[:, :k] - Y[:, :k] * theta[None, :k]
        res = np.linalg.norm(R, axis=0)
        scale = max(np.abs(theta).max(), 1e-300)
        if V.shape[1] >= n or np.all(res <= tol * scale):
            return EigResult(values=theta[:k].copy(), vectors=Y[:, :k].copy(),
                             method="lanczos", iterations=matvecs)
        # thick restart: keep the leading Ritz vectors and continue from their residual block
        Rk = LY[:, :b] - Y[:, :b] * theta[None, :b]
        V, LV = Y[:, :keep], LY[:, :keep]
        nb = _orthonormalize(Rk, V, rng)
        LNB = L @ nb
        matvecs += nb.shape[1]
        V, LV = np.column_stack([V, nb]), np.column_stack([LV, LNB])
        last = nb.shape[1]
    raise ConvergenceError(f"lanczos did not converge in {restarts} restarts", res)


def k_smallest_eigs(L, k, method="auto", fallback=True, **lanczos_kw):
    """Ascending k smallest eigenvalues of symmetric ``L`` with orthonormal eigenvectors.

    ``method='auto'`` uses the dense solver for N <= 512 and Lanczos above.
    An explicit ``'lanczos'`` request falls back to the dense solver when the
    iteration budget is exhausted, unless ``fallback=False``.
    """
    L = np.asarray(L, dtype=float)
    n = L.shape[0]
    if L.ndim != 2 or L.shape[1] != n:
        raise ValueError(f"expected a square matrix, got {L.shape}")
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if method == "auto":
        method = "dense" if n <= DENSE_CUTOFF else "lanczos"
    if method == "dense":
        return _dense(L, k)
    if method != "lanczos":
        raise ValueError(f"unknown eigensolver {method!r}")
    try:
        return lanczos_smallest(L, k, **lanczos_kw)
    except ConvergenceError as err:
        if not fallback:
            raise
        log.warning("lanczos fell back to dense eigensolver: %s", err)
        return _dense(L, k)


def bd_norm(C, k, method="auto", degree=None):
    """Sum of the k smallest eigenvalues of the normalized Laplacian of C."""
    system = build_affinity(C, degree)
    res = k_smallest_eigs(system.L, k, method=method)
    return float(max(res.values.sum(), 0.0))


def bd_norm_and_subgradient(C, k, method="auto", frozen_degree=True):
    """BD norm and its subgradient with respect to C.

    By default the degree matrix is held fixed at the current point, so the
    returned gradient is exact for ``bd_norm(C', k, degree=D(C))``. With
    ``frozen_degree=False`` the dependence of D on C is differentiated too.
    """
    C = _check_square(C)
    system = build_affinity(C)
    res = k_smallest_eigs(system.L, k, method=method)
    V = res.vectors
    s = system.inv_sqrt_degree
    W = V @ V.T
    # d(sum lambda)/dL = V V^T ; L = I - S A S
    G_A = -(s[:, None] * W * s[None, :])
    if not frozen_degree:
        # S = diag(d)^-1/2 with d_i = sum_j A_ij
        G_A = G_A + (np.einsum("ij,j,ji->i", system.A, s, W) * s**3)[:, None]
    # A = (|C| + |C^T|)/2
    grad = np.sign(C) * 0.5 * (G_A + G_A.T)
    return float(max(res.values.sum(), 0.0)), grad


def bd_subgradient(C, k, method="auto", frozen_degree=True):
    return bd_norm_and_subgradient(C, k, method, frozen_degree)[1]


def connected_components(A, tol=0.0):
    """Number of connected components of the graph with edges where A > tol."""
    from scipy.sparse.csgraph import connected_components as cc

    return int(cc(np.asarray(A) > tol, directed=False)[0])
