"""Causally structured score estimation on tensor-product spline features.

Component j of the score depends only on (y_j, y_pa(j)) and the local
intervention indicator a_j. Under the quadratic score-matching loss the fit
then decouples into one ridge-regularized linear system per (node, arm),
solved in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .graph import build_dag, parents
from .numeric import ridge_solve
from .splines import TensorBasis, feature_matrix, feature_matrix_dself, uniform_basis


@dataclass(frozen=True)
class ScoreModel:
    """Per-node spline score functions, one coefficient vector per arm.

    coords[j] lists the input columns of component j as (j, *parents);
    theta[j] has shape (2, m_j) with row a holding the arm-a coefficients.
    """

    dag: object
    bases: tuple
    coords: tuple
    theta: tuple
    n_basis: int
    knot_range: tuple
    lam: float

    @property
    def n_nodes(self):
        return self.dag.n_nodes


def make_score_model(dag, n_basis=8, knot_range=(-15.0, 15.0), lam=1e-3):
    """Zero-initialized model over the given DAG; shared 1D basis per coordinate."""
    if lam < 0:
        raise ValueError("lam must be >= 0")
    lo, hi = float(knot_range[0]), float(knot_range[1])
    b1 = uniform_basis(n_basis, lo, hi)
    bases, coords, theta = [], [], []
    for j in range(dag.n_nodes):
        pa = parents(dag, j)
        coords.append((j, *pa))
        tb = TensorBasis((b1,) * (1 + len(pa)))
        bases.append(tb)
        theta.append(np.zeros((2, tb.m)))
    return ScoreModel(
        dag=dag,
        bases=tuple(bases),
        coords=tuple(coords),
        theta=tuple(theta),
        n_basis=int(n_basis),
        knot_range=(lo, hi),
        lam=float(lam),
    )


def _check_domains(model, Y_list, a_list, weights):
    if weights is None:
        weights = [1.0 / len(Y_list)] * len(Y_list)
    if not (len(Y_list) == len(a_list) == len(weights)):
        raise ValueError("Y_list, a_list, weights must have equal length")
    out = []
    for Y, a, w in zip(Y_list, a_list, weights):
        Y = np.asarray(Y, dtype=float)
        a = np.asarray(a)
        if Y.ndim != 2 or Y.shape[1] != model.n_nodes:
            raise ValueError("each Y must be N_e x d_Z")
        if len(a) != model.n_nodes:
            raise ValueError("each target vector must have one entry per node")
        if not np.isfinite(Y).all():
            raise ValueError("non-finite values in Y")
        if w < 0:
            raise ValueError("weights must be >= 0")
        out.append((Y, a, float(w)))
    return out


def _normal_eq_terms(model, domains):
    """Per (node, arm) Gram matrix and derivative vector of the data term.

    Accumulated in fixed domain order so refits are bitwise reproducible.
    """
    grams = [np.zeros((2, b.m, b.m)) for b in model.bases]
    rhs = [np.zeros((2, b.m)) for b in model.bases]
    seen = [[False, False] for _ in model.bases]
    for Y, a, w in domains:
        if w == 0.0:
            continue
        scale = w / Y.shape[0]
        for j in range(model.n_nodes):
            Yj = Y[:, model.coords[j]]
            Phi = feature_matrix(model.bases[j], Yj)
            Psi = feature_matrix_dself(model.bases[j], Yj)
            arm = int(a[j])
            grams[j][arm] += scale * (Phi.T @ Phi)
            rhs[j][arm] += scale * Psi.sum(axis=0)
            seen[j][arm] = True
    return grams, rhs, seen


def fit_score(model, Y_list, a_list, weights=None):
    """Closed-form refit of every (node, arm) coefficient vector.

    Arms with no participating domain keep zero coefficients (zero score).
    """
    domains = _check_domains(model, Y_list, a_list, weights)
    grams, rhs, seen = _normal_eq_terms(model, domains)
    theta = []
    for j in range(model.n_nodes):
        th = np.zeros((2, model.bases[j].m))
        for arm in (0, 1):
            if seen[j][arm]:
                th[arm] = -ridge_solve(grams[j][arm], rhs[j][arm], model.lam)
        theta.append(th)
    return replace(model, theta=tuple(theta))


def score_values(model, Y, a):
    """Score matrix: row i, column j = s_j(y_ij, y_i,pa(j), a_j)."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    a = np.asarray(a)
    out = np.empty((Y.shape[0], model.n_nodes))
    for j in range(model.n_nodes):
        Phi = feature_matrix(model.bases[j], Y[:, model.coords[j]])
        out[:, j] = Phi @ model.theta[j][int(a[j])]
    return out


def score_dself_values(model, Y, a):
    """Own-coordinate derivative of each score component, same layout."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    a = np.asarray(a)
    out = np.empty((Y.shape[0], model.n_nodes))
    for j in range(model.n_nodes):
        Psi = feature_matrix_dself(model.bases[j], Y[:, model.coords[j]])
        out[:, j] = Psi @ model.theta[j][int(a[j])]
    return out


def eval_score(model, y, a):
    return score_values(model, np.asarray(y, dtype=float).reshape(1, -1), a)[0]


def eval_score_dself(model, y, a):
    return score_dself_values(model, np.asarray(y, dtype=float).reshape(1, -1), a)[0]


def empirical_loss(model, Y_list, a_list, weights=None):
    """Weighted score-matching data term sum_e (w_e/N_e) sum_ij [d_j s_j + s_j^2/2]."""
    domains = _check_domains(model, Y_list, a_list, weights)
    total = 0.0
    for Y, a, w in domains:
        if w == 0.0:
            continue
        s = score_values(model, Y, a)
        ds = score_dself_values(model, Y, a)
        total += (w / Y.shape[0]) * float(np.sum(ds + 0.5 * s * s))
    return total


def regularized_loss(model, Y_list, a_list, weights=None):
    penalty = 0.5 * model.lam * sum(float(np.sum(th * th)) for th in model.theta)
    return empirical_loss(model, Y_list, a_list, weights) + penalty


def loss_gradient(model, Y_list, a_list, weights=None):
    """Gradient of the regularized loss in coefficient space.

    Returns one (2, m_j) array per node; vanishes at the fit_score solution
    up to the linear solver's round-off.
    """
    domains = _check_domains(model, Y_list, a_list, weights)
    grams, rhs, _ = _normal_eq_terms(model, domains)
    grads = []
    for j in range(model.n_nodes):
        g = np.empty_like(model.theta[j])
        for arm in (0, 1):
            th = model.theta[j][arm]
            g[arm] = grams[j][arm] @ th + model.lam * th + rhs[j][arm]
        grads.append(g)
    return grads


def score_model_to_dict(model):
    """JSON-ready form: graph, basis settings, per-node arm coefficients."""
    return {
        "n_nodes": model.n_nodes,
        "edges": [[k + 1, j + 1] for k, j in sorted(model.dag.edges)],
        "knots": model.n_basis,
        "knot_range": list(model.knot_range),
        "lambda": model.lam,
        "theta": [[list(map(float, row)) for row in th] for th in model.theta],
    }


def score_model_from_dict(d):
    dag = build_dag(int(d["n_nodes"]), [(k - 1, j - 1) for k, j in d["edges"]])
    model = make_score_model(
        dag,
        n_basis=int(d["knots"]),
        knot_range=tuple(d["knot_range"]),
        lam=float(d["lambda"]),
    )
    theta = []
    for j, th in enumerate(d["theta"]):
        arr = np.asarray(th, dtype=float)
        if arr.shape != (2, model.bases[j].m):
            raise ValueError("coefficient shape does not match the basis")
        theta.append(arr)
    return replace(model, theta=tuple(theta))
