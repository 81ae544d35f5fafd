"""Small dense linear-algebra kernels for the EM updates and initialization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


@dataclass(frozen=True)
class ThinSvd:
    """Thin SVD M = U diag(S) V^T with S non-negative and descending."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray


def thin_svd(M):
    """Thin SVD of a tall matrix with a deterministic sign convention.

    Each column of V is flipped so that its largest-magnitude entry (first
    such index on ties) is positive; the matching U column is flipped with
    it, so U diag(S) V^T is unchanged and so is U V^T.
    """
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise ValueError("thin_svd: non-finite input")
    if M.shape[0] < M.shape[1]:
        raise ValueError("thin_svd expects d_X >= d_Z")
    U, S, Vt = scipy.linalg.svd(M, full_matrices=False)
    V = Vt.T
    for j in range(V.shape[1]):
        i = int(np.argmax(np.abs(V[:, j])))
        if V[i, j] < 0:
            V[:, j] = -V[:, j]
            U[:, j] = -U[:, j]
    return ThinSvd(U=U, S=S, V=V)


def ridge_solve(G, b, lam):
    """Solve (G + lam I) x = b for symmetric positive semidefinite G.

    Uses a Cholesky factorization; a LinAlgError propagates when lam = 0 and
    G is singular.
    """
    G = np.asarray(G, dtype=float)
    b = np.asarray(b, dtype=float)
    A = G + lam * np.eye(G.shape[0])
    c, low = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
    return scipy.linalg.cho_solve((c, low), b, check_finite=False)


def pca_loadings(X_pooled, d_z):
    """Top principal directions of column-centered data.

    Returns a d_X x d_z matrix with orthonormal columns and a deterministic
    sign convention: the largest-magnitude entry of each column is positive.
    """
    X = np.asarray(X_pooled, dtype=float)
    n, d_x = X.shape
    if d_z > min(n, d_x):
        raise ValueError(f"d_z={d_z} exceeds min(N, d_X)={min(n, d_x)}")
    if n <= d_z:
        raise ValueError("need more samples than components")
    Xc = X - X.mean(axis=0)
    _, _, Vt = scipy.linalg.svd(Xc, full_matrices=False)
    L = Vt[:d_z].T.copy()
    for j in range(d_z):
        i = int(np.argmax(np.abs(L[:, j])))
        if L[i, j] < 0:
            L[:, j] = -L[:, j]
    return L


def pca_residual_variance(X_pooled, d_z):
    """Mean of the variance left outside the top-d_z principal subspace.

    This is the usual probabilistic-PCA noise estimate: the average of the
    discarded covariance eigenvalues. Returns 0.0 when d_z spans everything.
    """
    X = np.asarray(X_pooled, dtype=float)
    n, d_x = X.shape
    if d_x <= d_z:
        return 0.0
    Xc = X - X.mean(axis=0)
    s = scipy.linalg.svd(Xc, full_matrices=False, compute_uv=False)
    ev = s**2 / n
    return float(np.sum(ev[d_z:]) / (d_x - d_z))
