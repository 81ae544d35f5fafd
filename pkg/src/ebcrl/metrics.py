"""Evaluation against ground truth, up to the signed-permutation gauge.

Estimates are compared after aligning estimated columns to true columns by
an exact assignment on absolute inner products; latents reuse the alignment
computed from the mixing matrices, one gauge per run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass(frozen=True)
class Alignment:
    """perm[j] is the estimated column matched to true column j; signs in {-1, +1}."""

    perm: tuple
    signs: tuple

    def __post_init__(self):
        d = len(self.perm)
        if sorted(self.perm) != list(range(d)):
            raise ValueError("perm must be a permutation of 0..d_Z-1")
        if len(self.signs) != d or any(s not in (-1.0, 1.0) for s in self.signs):
            raise ValueError("signs must be +-1, one per column")


def align_columns(A_hat, A_true):
    """Signed permutation maximizing the total absolute matched inner product.

    Solved exactly as an assignment problem on |A_hat^T A_true|.
    """
    A_hat = np.asarray(A_hat, dtype=float)
    A_true = np.asarray(A_true, dtype=float)
    if A_hat.shape != A_true.shape or A_hat.ndim != 2:
        raise ValueError("matrices must share shape d_X x d_Z")
    if np.any(np.linalg.norm(A_hat, axis=0) == 0) or np.any(np.linalg.norm(A_true, axis=0) == 0):
        raise ValueError("zero column")
    C = np.abs(A_hat.T @ A_true)
    rows, cols = linear_sum_assignment(C, maximize=True)
    d = A_hat.shape[1]
    perm = np.empty(d, dtype=int)
    perm[cols] = rows
    signs = []
    for j in range(d):
        ip = float(A_hat[:, perm[j]] @ A_true[:, j])
        signs.append(-1.0 if ip < 0 else 1.0)
    return Alignment(perm=tuple(int(p) for p in perm), signs=tuple(signs))


def apply_alignment(M, alignment):
    """Reorder and sign-flip columns of M into the true-column gauge."""
    M = np.asarray(M, dtype=float)
    return M[:, list(alignment.perm)] * np.asarray(alignment.signs)


def rel_mse(Z_hat, Z_true, alignment=None):
    """Mean over rows of the squared error relative to the true squared norm."""
    Z_hat = np.asarray(Z_hat, dtype=float)
    if alignment is not None:
        Z_hat = apply_alignment(Z_hat, alignment)
    Z_true = np.asarray(Z_true, dtype=float)
    if Z_hat.shape != Z_true.shape:
        raise ValueError("shapes must match after alignment")
    denom = np.sum(Z_true**2, axis=1)
    if np.any(denom == 0):
        raise ValueError("zero-norm true row")
    num = np.sum((Z_hat - Z_true) ** 2, axis=1)
    return float(np.mean(num / denom))


def frobenius_error(A_hat, A_true, alignment=None):
    """Squared Frobenius distance after alignment."""
    A_hat = np.asarray(A_hat, dtype=float)
    if alignment is not None:
        A_hat = apply_alignment(A_hat, alignment)
    A_true = np.asarray(A_true, dtype=float)
    if A_hat.shape != A_true.shape:
        raise ValueError("shapes must match after alignment")
    return float(np.sum((A_hat - A_true) ** 2))


def _env_key(env):
    return (0, 0) if env == "all" else (1, int(env))


def summarize(records):
    """Median and interquartile range per (method, metric, environment).

    Quartiles use linear interpolation. Output order is fixed, so equal
    record multisets give identical summaries regardless of input order.
    """
    if not records:
        raise ValueError("no records to summarize")
    groups = {}
    for rec in records:
        key = (rec["method"], rec["metric"], rec["environment"])
        groups.setdefault(key, []).append(float(rec["value"]))
    out = []
    for method, metric, env in sorted(groups, key=lambda k: (k[0], k[1], _env_key(k[2]))):
        vals = np.sort(np.asarray(groups[(method, metric, env)], dtype=float))
        q1, med, q3 = np.percentile(vals, [25.0, 50.0, 75.0])
        out.append(
            {
                "method": method,
                "environment": env,
                "metric": metric,
                "median": float(med),
                "iqr": float(q3 - q1),
                "n_runs": len(vals),
            }
        )
    return out


def evaluate_result(dataset, result):
    """Metric rows (metric, environment, value) for one fitted result.

    RelMSE is reported pooled over rows of all domains (environment "all")
    and per domain; the Frobenius error of the mixing map is run-level.
    """
    if dataset.true_A is None or dataset.true_Z is None:
        raise ValueError("dataset carries no ground truth")
    a_hat = result.estimate.a_matrix()
    align = align_columns(a_hat, dataset.true_A)
    rows = [
        ("frobenius", "all", frobenius_error(a_hat, dataset.true_A, align)),
        ("relmse", "all", rel_mse(np.vstack(result.z_hat), np.vstack(dataset.true_Z), align)),
    ]
    for e, (zh, zt) in enumerate(zip(result.z_hat, dataset.true_Z)):
        rows.append(("relmse", str(e + 1), rel_mse(zh, zt, align)))
    return rows
