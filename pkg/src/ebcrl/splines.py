"""Tensor-product cubic B-spline features and their own-coordinate derivative.

A 1D basis is a clamped cubic B-spline family on [lo, hi]: K basis functions
built from a uniform interior knot grid with 4-fold boundary knots, so the
basis forms a partition of unity on the box. Inputs outside the box are
clamped to it (constant extension, zero derivative in the clamped
coordinate).
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import BSpline

DEGREE = 3
FEATURE_CAP = 32768


class SplineBasis1D:
    """K clamped cubic B-spline basis functions on [knots[0], knots[-1]]."""

    def __init__(self, knots, n_basis):
        knots = np.asarray(knots, dtype=float)
        if len(knots) != n_basis + DEGREE + 1:
            raise ValueError("knot vector length must be n_basis + 4")
        self.knots = knots
        self.n_basis = int(n_basis)
        self.lo = float(knots[0])
        self.hi = float(knots[-1])
        self._spl = BSpline(knots, np.eye(self.n_basis), DEGREE)
        self._dspl = self._spl.derivative()

    def design(self, t):
        """Basis values at points t (clamped to the box), shape (len(t), K)."""
        t = np.clip(np.asarray(t, dtype=float), self.lo, self.hi)
        return self._spl(t)

    def ddesign(self, t):
        """First-derivative values at clamped points, shape (len(t), K).

        Points outside the box are moved onto the boundary first, then the
        derivative is zeroed there: the extension is constant.
        """
        t = np.asarray(t, dtype=float)
        inside = (t >= self.lo) & (t <= self.hi)
        out = self._dspl(np.clip(t, self.lo, self.hi))
        out[~inside] = 0.0
        return out


def uniform_basis(n_basis, lo, hi):
    """Clamped cubic basis with n_basis functions on [lo, hi]."""
    if n_basis < DEGREE + 1:
        raise ValueError("cubic basis needs at least 4 basis functions")
    if not lo < hi:
        raise ValueError("need lo < hi")
    interior = np.linspace(lo, hi, n_basis - DEGREE + 1)[1:-1]
    knots = np.concatenate([[lo] * (DEGREE + 1), interior, [hi] * (DEGREE + 1)])
    return SplineBasis1D(knots, n_basis)


def eval_1d(basis, t):
    """Basis vector at a single point."""
    return basis.design(np.atleast_1d(t))[0]


class TensorBasis:
    """Tensor product of per-coordinate 1D bases.

    Coordinate 0 is the node's own coordinate; the rest are its parents in
    sorted order. The feature vector is the Kronecker product of the
    per-coordinate basis vectors, so m is the product of the basis counts.
    """

    def __init__(self, bases, cap=FEATURE_CAP):
        if not bases:
            raise ValueError("need at least one coordinate")
        self.bases = list(bases)
        m = 1
        for b in self.bases:
            m *= b.n_basis
        if m > cap:
            raise ValueError(
                f"tensor feature count {m} exceeds cap {cap}; "
                "reduce the basis size or the parent set"
            )
        self.m = m
        self.n_coords = len(self.bases)


def _fold(mats):
    # row-wise Kronecker product of (n, K_r) matrices, in coordinate order
    out = mats[0]
    for B in mats[1:]:
        n = out.shape[0]
        out = (out[:, :, None] * B[:, None, :]).reshape(n, -1)
    return out


def _as_batch(basis, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != basis.n_coords:
        raise ValueError(f"expected {basis.n_coords} input coordinates, got {X.shape[1]}")
    return X


def feature_matrix(basis, X):
    """Feature rows for a batch of inputs X (n x n_coords)."""
    X = _as_batch(basis, X)
    mats = [b.design(X[:, r]) for r, b in enumerate(basis.bases)]
    return _fold(mats)


def feature_matrix_dself(basis, X):
    """Derivative of the feature rows w.r.t. the first coordinate."""
    X = _as_batch(basis, X)
    mats = [basis.bases[0].ddesign(X[:, 0])]
    mats += [b.design(X[:, r]) for r, b in enumerate(basis.bases) if r > 0]
    return _fold(mats)


def eval_features(basis, x):
    """Tensor feature vector at a single input (y_j, y_parents)."""
    return feature_matrix(basis, np.asarray(x, dtype=float).reshape(1, -1))[0]


def eval_features_dself(basis, x):
    """Derivative of the feature vector w.r.t. the node's own coordinate."""
    return feature_matrix_dself(basis, np.asarray(x, dtype=float).reshape(1, -1))[0]
