"""EM for the linear Gaussian measurement model with empirical Bayes shrinkage.

Each iteration projects the data to the latent dimension, fits the causally
structured score on the projections, applies damped first- and second-order
Tweedie updates, then re-estimates the mixing map by an SVD-based M-step and
the noise variance by its MLE.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from functools import partial

import numpy as np
from scipy.optimize import linear_sum_assignment

from .graph import GraphVariant, apply_variant
from .numeric import pca_loadings, pca_residual_variance, thin_svd
from .scm import ConfigError
from .score import empirical_loss, fit_score, make_score_model, score_dself_values, score_values

METHODS = ("true-dag", "no-shrinkage", "empty", "complete", "pooled", "pca")


class NonFiniteError(Exception):
    """A non-finite value appeared during EM; carries the iteration index."""

    def __init__(self, message, iteration=None):
        super().__init__(message if iteration is None else f"{message} (iteration {iteration})")
        self.iteration = iteration


@dataclass(frozen=True)
class MeasurementEstimate:
    """Estimated measurement map A = O diag(D) plus noise variance."""

    O: np.ndarray
    D: np.ndarray
    sigma2: float

    def __post_init__(self):
        O = np.asarray(self.O, dtype=float)
        D = np.asarray(self.D, dtype=float)
        object.__setattr__(self, "O", O)
        object.__setattr__(self, "D", D)
        if O.ndim != 2 or D.ndim != 1 or O.shape[1] != D.shape[0]:
            raise ValueError("O must be d_X x d_Z with one D entry per column")
        gram_gap = np.abs(O.T @ O - np.eye(O.shape[1])).max()
        if not gram_gap < 1e-7:
            raise ValueError("O columns must be orthonormal")
        if not np.all(D > 0):
            raise ValueError("D entries must be positive")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")

    def a_matrix(self):
        return self.O * self.D


@dataclass(frozen=True)
class EmConfig:
    """Settings of the EM loop; knots counts basis functions per coordinate."""

    iterations: int = 1000
    eta: float = 1.0
    lam: float = 1e-3
    knots: int = 8
    knot_range: tuple = (-15.0, 15.0)
    graph_variant: GraphVariant = field(default_factory=GraphVariant)
    clamp_z2_eps: float = 1e-6
    sigma2_floor: float = 1e-8
    init: str = "pca"
    init_estimate: MeasurementEstimate | None = None
    oracle: bool = False
    early_stop: float | None = None

    # weight policy: "spec" uses the per-domain weights (normalized to sum 1),
    # "uniform" ignores them, "samples" sets w_e proportional to N_e
    weights: str = "spec"

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError("eta must lie in [0, 1]")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.knots < 4:
            raise ConfigError("need at least 4 basis functions")
        lo, hi = self.knot_range
        if not lo < hi:
            raise ConfigError("knot_range must satisfy lo < hi")
        if self.clamp_z2_eps <= 0 or self.sigma2_floor <= 0:
            raise ConfigError("clamp_z2_eps and sigma2_floor must be positive")
        if self.init not in ("pca", "provided"):
            raise ConfigError("init must be 'pca' or 'provided'")
        if self.init == "provided" and self.init_estimate is None:
            raise ConfigError("init='provided' requires init_estimate")
        if self.early_stop is not None and self.early_stop <= 0:
            raise ConfigError("early_stop must be positive when set")
        if self.weights not in ("spec", "uniform", "samples"):
            raise ConfigError("weights must be 'spec', 'uniform' or 'samples'")

    @staticmethod
    def from_dict(d):
        try:
            gv = d.get("graph_variant", "true-dag")
            if isinstance(gv, str):
                variant = GraphVariant(kind=gv)
            else:
                order = gv.get("order")
                variant = GraphVariant(
                    kind=gv["kind"],
                    order=None if order is None else tuple(int(v) - 1 for v in order),
                )
            early = d.get("early_stop")
            if early is True:
                early = 1e-8
            elif early is False:
                early = None
            return EmConfig(
                iterations=int(d.get("iterations", 1000)),
                eta=float(d.get("eta", 1.0)),
                lam=float(d.get("lambda", 1e-3)),
                knots=int(d.get("knots", 8)),
                knot_range=tuple(float(v) for v in d.get("knot_range", (-15.0, 15.0))),
                graph_variant=variant,
                clamp_z2_eps=float(d.get("clamp_z2_eps", 1e-6)),
                sigma2_floor=float(d.get("sigma2_floor", 1e-8)),
                init=str(d.get("init", "pca")),
                oracle=bool(d.get("oracle", False)),
                early_stop=None if early is None else float(early),
                weights=str(d.get("weights", "spec")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid em config: {exc}") from exc

    def to_dict(self):
        gv = self.graph_variant
        return {
            "iterations": self.iterations,
            "eta": self.eta,
            "lambda": self.lam,
            "knots": self.knots,
            "knot_range": list(self.knot_range),
            "graph_variant": {
                "kind": gv.kind,
                "order": None if gv.order is None else [v + 1 for v in gv.order],
            },
            "clamp_z2_eps": self.clamp_z2_eps,
            "sigma2_floor": self.sigma2_floor,
            "init": self.init,
            "oracle": self.oracle,
            "early_stop": self.early_stop,
            "weights": self.weights,
        }


@dataclass
class EmResult:
    """Final estimate, per-domain posterior moments, and the iteration trace.

    trace rows are (sigma2, m_step_objective, score_loss) per iteration.
    """

    estimate: MeasurementEstimate
    z_hat: list
    z2_hat: list | None
    trace: np.ndarray
    method: str = "true-dag"
    iterations_run: int = 0


def project(O, X):
    """Latent-dimension coordinates y_i = O^T x_i for every row of X."""
    return np.asarray(X) @ O


def tweedie_mean(Y, a, model, D, sigma2, eta):
    """Damped posterior-mean update z_i = D^{-1}(y_i + eta sigma2 s(y_i, a)).

    eta = 0 short-circuits to Y / D without touching the score model.
    """
    D = np.asarray(D, dtype=float)
    if np.any(D == 0):
        raise ValueError("zero D entry")
    if eta == 0:
        return Y / D
    s = score_values(model, Y, a)
    return (Y + eta * sigma2 * s) / D


def tweedie_second_moment(Z_hat, Y, a, model, D, sigma2, clamp_z2_eps=1e-6):
    """Second-order update; clamped below so column scales stay positive."""
    D = np.asarray(D, dtype=float)
    if np.any(D == 0):
        raise ValueError("zero D entry")
    ds = score_dself_values(model, Y, a)
    z2 = Z_hat**2 + sigma2 / D**2 + (sigma2**2 / D**2) * ds
    return np.maximum(z2, clamp_z2_eps)


def m_step_moments(X_list, Z_hat_list, Z2_hat_list):
    """Sufficient statistics of the M-step: cross matrix M and column sums S."""
    M = None
    S = None
    for X, Zh, Z2 in zip(X_list, Z_hat_list, Z2_hat_list):
        MX = np.asarray(X).T @ np.asarray(Zh)
        SX = np.asarray(Z2).sum(axis=0)
        M = MX if M is None else M + MX
        S = SX if S is None else S + SX
    return M, S


def m_step_objective(M, S, O, D):
    """Expected negative log-likelihood terms that depend on (O, D).

    Equals sum_j D_j^2 S_j - 2 D_j (O^T M)_jj; the data norm constant is
    excluded.
    """
    diag = np.einsum("ij,ij->j", O, M)
    return float(np.sum(D**2 * S) - 2.0 * np.sum(D * diag))


_M_STEP_RESTARTS = 32


def _reduced_objective(W, C, S):
    diag = np.einsum("ij,ij->j", W, C)
    return -float(np.sum(diag**2 / S))


def _refine_reduced(W, C, S, max_iter=60):
    """Alternating descent on the reduced M-step objective.

    Given W, each column scale has the closed form diag(W^T C)/S; given the
    scales, the best W is the polar factor of C diag(D). Both half-steps are
    exact, so the objective is non-increasing and the loop terminates fast.
    """
    obj = _reduced_objective(W, C, S)
    for _ in range(max_iter):
        D = np.einsum("ij,ij->j", W, C) / S
        U2, _, V2t = np.linalg.svd(C * D, full_matrices=False)
        W_new = U2 @ V2t
        obj_new = _reduced_objective(W_new, C, S)
        if obj_new >= obj - 1e-13 * (1.0 + abs(obj)):
            break
        W, obj = W_new, obj_new
    return W, obj


def m_step_A(X_list, Z_hat_list, Z2_hat_list):
    """Update of the mixing map from posterior moments, exact per column.

    The optimal O has all columns inside the span of the cross matrix M, so
    the search reduces to a d_Z x d_Z orthogonal factor. That small problem
    is solved by alternating closed-form half-steps from the Procrustes
    initializer (SVD of M with a canonical permutation and sign choice) plus
    a fixed set of seeded restarts; the best stationary point wins. Each
    column scale is then the exact minimizer D_j = (O^T M)_jj / S_j.
    """
    M, S = m_step_moments(X_list, Z_hat_list, Z2_hat_list)
    if np.any(S <= 0):
        raise ValueError("zero second-moment column")
    svd = thin_svd(M)
    d_z = len(svd.S)

    smat = np.diag(svd.S)
    rows, cols = linear_sum_assignment(np.abs(smat), maximize=True)
    P = np.zeros((d_z, d_z))
    P[cols, rows] = 1.0
    d_sign = np.sign(np.diag(P @ smat))
    d_sign[d_sign == 0] = 1.0

    # reduced problem over the span of M; U is an orthonormal basis for it
    C = svd.U.T @ M
    W_init = (P @ svd.V.T) * d_sign
    W_best, obj_best = _refine_reduced(W_init, C, S)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(271828)))
    for _ in range(_M_STEP_RESTARTS):
        Q, R = np.linalg.qr(rng.standard_normal((d_z, d_z)))
        signs = np.sign(np.diag(R))
        signs[signs == 0] = 1.0
        W, obj = _refine_reduced(Q * signs, C, S)
        if obj < obj_best - 1e-12 * (1.0 + abs(obj_best)):
            W_best, obj_best = W, obj

    O = svd.U @ W_best
    D = np.einsum("ij,ij->j", O, M) / S
    flip = np.where(D < 0, -1.0, 1.0)
    return O * flip, D * flip


def m_step_sigma2(X_list, A, D, Z_hat_list, Z2_hat_list, sigma2_floor=1e-8):
    """Noise-variance MLE from the same posterior moments, floored."""
    D = np.asarray(D, dtype=float)
    num = 0.0
    total_n = 0
    d_x = np.asarray(X_list[0]).shape[1]
    for X, Zh, Z2 in zip(X_list, Z_hat_list, Z2_hat_list):
        X = np.asarray(X)
        num += float(np.sum(Z2 * D**2) - 2.0 * np.sum((X @ A) * Zh) + np.sum(X * X))
        total_n += X.shape[0]
    return max(num / (d_x * total_n), sigma2_floor)


def _domain_weights(dataset, policy):
    if policy == "uniform":
        w = np.ones(len(dataset.domains))
    elif policy == "samples":
        w = np.array([spec.n_samples for spec, _ in dataset.domains], dtype=float)
    else:
        w = np.array(dataset.weight_list(), dtype=float)
    total = w.sum()
    if total <= 0:
        raise ConfigError("domain weights must not all be zero")
    return list(w / total)


def _initial_estimate(dataset, config):
    if config.oracle:
        if dataset.true_A is None or dataset.true_sigma2 is None:
            raise ConfigError("oracle mode requires ground-truth A and sigma2")
        sigma2 = max(float(dataset.true_sigma2), config.sigma2_floor)
        return MeasurementEstimate(
            O=np.asarray(dataset.true_A, dtype=float),
            D=np.ones(dataset.d_z),
            sigma2=sigma2,
        )
    if config.init == "provided":
        return config.init_estimate
    X_pooled = np.vstack(dataset.x_list())
    O = pca_loadings(X_pooled, dataset.d_z)
    sigma2 = max(pca_residual_variance(X_pooled, dataset.d_z), config.sigma2_floor)
    return MeasurementEstimate(O=O, D=np.ones(dataset.d_z), sigma2=sigma2)


def _check_finite(arrays, what, iteration):
    for arr in arrays:
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite {what}", iteration=iteration)


def run_em(dataset, config, rng=None):
    """Fixed-count EM per the iteration order project, fit, Tweedie, M-steps.

    Deterministic given the dataset and config; rng is accepted for
    interface symmetry but the loop draws no randomness. In oracle mode the
    measurement estimate stays at ground truth and only E-steps run.
    """
    if dataset.dag is None:
        raise ConfigError("dataset carries no graph; cannot build the score class")
    if not dataset.domains:
        raise ConfigError("dataset has no domains")

    X_list = dataset.x_list()
    a_list = dataset.target_list()
    if config.graph_variant.kind == "pooled":
        a_list = [np.zeros_like(a) for a in a_list]
    weights = _domain_weights(dataset, config.weights)
    dag = apply_variant(dataset.dag, config.graph_variant)
    model = make_score_model(dag, config.knots, config.knot_range, config.lam)

    est = _initial_estimate(dataset, config)
    trace = []
    z_hat = z2_hat = None
    prev = None
    iterations_run = 0
    for t in range(config.iterations):
        Y_list = [project(est.O, X) for X in X_list]
        _check_finite(Y_list, "projection", t)
        model = fit_score(model, Y_list, a_list, weights)
        loss = empirical_loss(model, Y_list, a_list, weights)
        z_hat = [
            tweedie_mean(Y, a, model, est.D, est.sigma2, config.eta)
            for Y, a in zip(Y_list, a_list)
        ]
        z2_hat = [
            tweedie_second_moment(zh, Y, a, model, est.D, est.sigma2, config.clamp_z2_eps)
            for zh, Y, a in zip(z_hat, Y_list, a_list)
        ]
        _check_finite(z_hat, "posterior mean", t)
        _check_finite(z2_hat, "posterior second moment", t)

        M, S = m_step_moments(X_list, z_hat, z2_hat)
        if config.oracle:
            obj = m_step_objective(M, S, est.O, est.D)
        else:
            O, D = m_step_A(X_list, z_hat, z2_hat)
            sigma2 = m_step_sigma2(
                X_list, O * D, D, z_hat, z2_hat, sigma2_floor=config.sigma2_floor
            )
            if not np.isfinite(sigma2):
                raise NonFiniteError("non-finite sigma2", iteration=t)
            est = MeasurementEstimate(O=O, D=D, sigma2=sigma2)
            obj = m_step_objective(M, S, O, D)
        if not np.isfinite(obj) or not np.isfinite(loss):
            raise NonFiniteError("non-finite objective", iteration=t)
        trace.append((est.sigma2, obj, loss))
        iterations_run = t + 1

        if config.early_stop is not None and prev is not None:
            ds = abs(est.sigma2 - prev[0]) / max(abs(prev[0]), config.sigma2_floor)
            do = abs(obj - prev[1]) / max(abs(prev[1]), 1e-30)
            if ds < config.early_stop and do < config.early_stop:
                break
        prev = (est.sigma2, obj)

    return EmResult(
        estimate=est,
        z_hat=z_hat,
        z2_hat=z2_hat,
        trace=np.asarray(trace, dtype=float).reshape(-1, 3),
        method="oracle" if config.oracle else config.graph_variant.kind,
        iterations_run=iterations_run,
    )


def pca_estimate(dataset, config):
    """PCA-only baseline: O from pooled loadings, D = I, no EM iterations."""
    X_pooled = np.vstack(dataset.x_list())
    O = pca_loadings(X_pooled, dataset.d_z)
    sigma2 = max(pca_residual_variance(X_pooled, dataset.d_z), config.sigma2_floor)
    D = np.ones(dataset.d_z)
    est = MeasurementEstimate(O=O, D=D, sigma2=sigma2)
    z_hat = [project(O, X) for X in dataset.x_list()]
    z2_hat = [np.maximum(zh**2 + sigma2, config.clamp_z2_eps) for zh in z_hat]
    return EmResult(
        estimate=est,
        z_hat=z_hat,
        z2_hat=z2_hat,
        trace=np.zeros((0, 3)),
        method="pca",
        iterations_run=0,
    )


def make_baseline(config, kind):
    """Specialize an EmConfig to one of the named methods.

    Returns an EmConfig for the EM-based methods and a dataset -> EmResult
    callable for the PCA baseline, which skips EM entirely.
    """
    if kind not in METHODS:
        raise ConfigError(f"unknown method '{kind}'")
    if kind == "pca":
        return partial(pca_estimate, config=config)
    if kind == "no-shrinkage":
        return replace(config, eta=0.0, graph_variant=GraphVariant(kind="true-dag"))
    return replace(config, graph_variant=GraphVariant(kind=kind))


def run_method(dataset, config, method, rng=None):
    """Fit one named method on a dataset and return its EmResult."""
    baseline = make_baseline(config, method)
    if callable(baseline):
        result = baseline(dataset)
    else:
        result = run_em(dataset, baseline, rng)
        result.method = method
    return result


def save_result(result, outdir, config=None):
    """Persist an EmResult directory; returns the file names written."""
    os.makedirs(outdir, exist_ok=True)
    files = []
    z_files = []
    for e, zh in enumerate(result.z_hat):
        name = f"zhat_{e + 1:02d}.csv"
        header = ",".join(f"z{j + 1}" for j in range(zh.shape[1]))
        np.savetxt(
            os.path.join(outdir, name), zh, delimiter=",", header=header, comments="", fmt="%.17g"
        )
        files.append(name)
        z_files.append(name)
    np.savetxt(
        os.path.join(outdir, "trace.csv"),
        result.trace,
        delimiter=",",
        header="sigma2,m_step_objective,score_loss",
        comments="",
        fmt="%.17g",
    )
    files.append("trace.csv")
    payload = {
        "O": [[float(v) for v in row] for row in result.estimate.O],
        "D": [float(v) for v in result.estimate.D],
        "sigma2": float(result.estimate.sigma2),
        "method": result.method,
        "iterations_run": result.iterations_run,
        "trace_columns": ["sigma2", "m_step_objective", "score_loss"],
        "trace": [[float(v) for v in row] for row in result.trace],
        "zhat_files": z_files,
    }
    if config is not None:
        payload["em_config"] = config.to_dict()
    with open(os.path.join(outdir, "estimate.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    files.append("estimate.json")
    return files


def load_result(indir):
    with open(os.path.join(indir, "estimate.json")) as fh:
        payload = json.load(fh)
    est = MeasurementEstimate(
        O=np.asarray(payload["O"], dtype=float),
        D=np.asarray(payload["D"], dtype=float),
        sigma2=float(payload["sigma2"]),
    )
    z_hat = [
        np.loadtxt(os.path.join(indir, name), delimiter=",", skiprows=1, ndmin=2)
        for name in payload["zhat_files"]
    ]
    return EmResult(
        estimate=est,
        z_hat=z_hat,
        z2_hat=None,
        trace=np.asarray(payload["trace"], dtype=float).reshape(-1, 3),
        method=payload.get("method", "true-dag"),
        iterations_run=int(payload.get("iterations_run", 0)),
    )
