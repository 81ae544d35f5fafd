"""Ground-truth interventional SCM simulation and the synthetic benchmark.

Latents follow per-node structural equations over a known DAG; a domain is a
set of i.i.d. draws under one intervention-target vector. Observations pass
the latents through a linear measurement map with orthonormal-column mixing
and isotropic Gaussian noise.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .graph import Dag, build_dag, parents

SCHEMA_VERSION = 1


class ConfigError(Exception):
    """Invalid configuration content."""


def make_rng(seed, *path):
    """Named deterministic generator: counter-based Philox under a seed path.

    The path extends the entropy, so (seed, 3) and (seed, 4) give
    independent streams and the mapping is documented and stable.
    """
    entropy = [int(seed)] + [int(p) for p in path]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


@dataclass(frozen=True)
class Mechanism:
    """One structural equation: z_j = sum_k w_jk g(z_k) + u_j.

    weights maps each parent k to w_jk; g(z) = tanh(kappa z) + (kappa z)^3;
    u_j is centered Gaussian with std noise_std.
    """

    weights: dict
    kappa: float
    noise_std: float

    def __post_init__(self):
        if self.noise_std <= 0:
            raise ValueError("noise_std must be positive")


@dataclass(frozen=True)
class InterventionSpec:
    """Mean-shift perfect intervention: z_j := N(shift_mean, shift_std^2)."""

    shift_mean: float
    shift_std: float

    def __post_init__(self):
        if self.shift_std <= 0:
            raise ValueError("shift_std must be positive")


@dataclass(frozen=True)
class ScmSpec:
    dag: Dag
    mechanisms: tuple
    intervention: InterventionSpec

    def __post_init__(self):
        if len(self.mechanisms) != self.dag.n_nodes:
            raise ValueError("need one mechanism per node")
        for j, mech in enumerate(self.mechanisms):
            if sorted(mech.weights) != parents(self.dag, j):
                raise ValueError(f"mechanism {j} weights do not match the parent set")


@dataclass(frozen=True)
class DomainSpec:
    """One domain: intervention targets a, sample count, loss weight."""

    a: np.ndarray
    n_samples: int
    weight: float = 1.0

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.int8)
        if not np.isin(a, (0, 1)).all():
            raise ValueError("targets must be binary")
        object.__setattr__(self, "a", a)
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.weight < 0:
            raise ValueError("weight must be >= 0")


@dataclass
class Dataset:
    """Observed multi-domain sample with optional held-out ground truth.

    domains is a list of (DomainSpec, X) pairs where X is N_e x d_X.
    """

    domains: list
    true_Z: list | None = None
    true_A: np.ndarray | None = None
    true_sigma2: float | None = None
    dag: Dag | None = None
    seed: int | None = None

    def __post_init__(self):
        d_x = {X.shape[1] for _, X in self.domains}
        if len(d_x) != 1:
            raise ValueError("all domains must share d_X")
        for spec, X in self.domains:
            if X.shape[0] != spec.n_samples:
                raise ValueError("sample count mismatch")
        if self.true_Z is not None:
            for (spec, _), Z in zip(self.domains, self.true_Z):
                if Z.shape[0] != spec.n_samples:
                    raise ValueError("true_Z sample count mismatch")

    @property
    def d_x(self):
        return self.domains[0][1].shape[1]

    @property
    def d_z(self):
        return len(self.domains[0][0].a)

    def x_list(self):
        return [X for _, X in self.domains]

    def target_list(self):
        return [spec.a for spec, _ in self.domains]

    def weight_list(self):
        return [spec.weight for spec, _ in self.domains]


def _g(z, kappa):
    kz = kappa * z
    return np.tanh(kz) + kz**3


def sample_scm(spec, a, n, rng):
    """Ancestral sampling of n i.i.d. latent rows under targets a.

    The noise stream is one standard-normal matrix indexed by
    (sample, node), shared between the observational and intervened
    mechanisms, so any valid topological order gives identical output and
    non-descendants of interventions match the observational run exactly.
    """
    dag = spec.dag
    a = np.asarray(a, dtype=np.int8)
    if len(a) != dag.n_nodes:
        raise ValueError("target vector length must equal the node count")
    E = rng.standard_normal((n, dag.n_nodes))
    Z = np.empty((n, dag.n_nodes))
    iv = spec.intervention
    for j in dag.topo_order:
        mech = spec.mechanisms[j]
        if a[j]:
            Z[:, j] = iv.shift_mean + iv.shift_std * E[:, j]
        else:
            acc = mech.noise_std * E[:, j]
            for k in sorted(mech.weights):
                acc = acc + mech.weights[k] * _g(Z[:, k], mech.kappa)
            Z[:, j] = acc
    return Z


def sample_orthonormal_mixing(d_x, d_z, rng):
    """Random column-orthonormal d_X x d_Z matrix.

    QR of an i.i.d. standard-normal matrix with the R diagonal forced
    positive, which fixes the sign convention and gives a Haar-like draw.
    """
    if d_x < d_z:
        raise ValueError("need d_x >= d_z for orthonormal columns")
    G = rng.standard_normal((d_x, d_z))
    Q, R = np.linalg.qr(G)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


@dataclass(frozen=True)
class BenchmarkConfig:
    """Generator settings for one synthetic multi-domain dataset.

    Node indices are 0-based here; the JSON form uses 1-based indices.
    sigma_z is the latent noise standard deviation, sigma_x2 the measurement
    noise variance.
    """

    d_z: int
    d_x: int
    edges: tuple
    kappa: float = 3.0
    sigma_z: float = 2.0
    weight_range: tuple = (-1.0, 1.0)
    intervention_mean: float = 10.0
    intervention_std: float = 1.0
    sigma_x2: float = 2.0
    domains: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.d_z < 1 or self.d_x < self.d_z:
            raise ConfigError("need d_z >= 1 and d_x >= d_z")
        if self.sigma_z <= 0 or self.intervention_std <= 0:
            raise ConfigError("sigma_z and intervention std must be positive")
        if self.sigma_x2 < 0:
            raise ConfigError("sigma_x2 must be >= 0")
        lo, hi = self.weight_range
        if lo > hi:
            raise ConfigError("weight_range must be [lo, hi] with lo <= hi")
        if not self.domains:
            raise ConfigError("need at least one domain")
        for targets, n, weight in self.domains:
            if any(not 0 <= t < self.d_z for t in targets):
                raise ConfigError("domain target outside node range")
            if n < 1:
                raise ConfigError("domain sample count must be >= 1")
            if weight < 0:
                raise ConfigError("domain weight must be >= 0")

    @staticmethod
    def from_dict(d):
        try:
            edges = tuple((int(k) - 1, int(j) - 1) for k, j in d["edges"])
            domains = tuple(
                (
                    tuple(int(t) - 1 for t in dom["targets"]),
                    int(dom["n"]),
                    float(dom.get("weight", 1.0)),
                )
                for dom in d["domains"]
            )
            iv = d.get("intervention", {})
            return BenchmarkConfig(
                d_z=int(d["d_z"]),
                d_x=int(d["d_x"]),
                edges=edges,
                kappa=float(d.get("kappa", 3.0)),
                sigma_z=float(d.get("sigma_z", 2.0)),
                weight_range=tuple(float(v) for v in d.get("weight_range", (-1.0, 1.0))),
                intervention_mean=float(iv.get("mean", 10.0)),
                intervention_std=float(iv.get("std", 1.0)),
                sigma_x2=float(d.get("sigma_x2", 2.0)),
                domains=domains,
                seed=int(d.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid benchmark config: {exc}") from exc

    def to_dict(self):
        return {
            "d_z": self.d_z,
            "d_x": self.d_x,
            "edges": [[k + 1, j + 1] for k, j in self.edges],
            "kappa": self.kappa,
            "sigma_z": self.sigma_z,
            "weight_range": list(self.weight_range),
            "intervention": {"mean": self.intervention_mean, "std": self.intervention_std},
            "sigma_x2": self.sigma_x2,
            "domains": [
                {"targets": [t + 1 for t in targets], "n": n, "weight": w}
                for targets, n, w in self.domains
            ],
            "seed": self.seed,
        }


def generate_benchmark(config, rng):
    """Draw one multi-domain dataset: weights, mixing, latents, observations.

    Stream order is fixed (weights, mixing, then latent/measurement noise
    per domain), so domains are independent and the draw is reproducible.
    """
    dag = build_dag(config.d_z, config.edges)
    streams = rng.spawn(2 + 2 * len(config.domains))
    w_rng, a_rng = streams[0], streams[1]

    lo, hi = config.weight_range
    mechanisms = []
    for j in range(config.d_z):
        weights = {k: float(w_rng.uniform(lo, hi)) for k in parents(dag, j)}
        mechanisms.append(Mechanism(weights=weights, kappa=config.kappa, noise_std=config.sigma_z))
    spec = ScmSpec(
        dag=dag,
        mechanisms=tuple(mechanisms),
        intervention=InterventionSpec(config.intervention_mean, config.intervention_std),
    )
    A = sample_orthonormal_mixing(config.d_x, config.d_z, a_rng)

    domains, true_Z = [], []
    for e, (targets, n, weight) in enumerate(config.domains):
        a = np.zeros(config.d_z, dtype=np.int8)
        a[list(targets)] = 1
        Z = sample_scm(spec, a, n, streams[2 + 2 * e])
        eps = streams[3 + 2 * e].standard_normal((n, config.d_x))
        X = Z @ A.T + np.sqrt(config.sigma_x2) * eps
        domains.append((DomainSpec(a=a, n_samples=n, weight=weight), X))
        true_Z.append(Z)
    return Dataset(
        domains=domains,
        true_Z=true_Z,
        true_A=A,
        true_sigma2=config.sigma_x2,
        dag=dag,
        seed=config.seed,
    )


def _write_csv(path, M, prefix):
    header = ",".join(f"{prefix}{i + 1}" for i in range(M.shape[1]))
    np.savetxt(path, M, delimiter=",", header=header, comments="", fmt="%.17g")


def save_dataset(dataset, outdir):
    """Persist a dataset directory: meta.json plus per-domain CSV matrices.

    Returns the list of files written (relative names), for manifests.
    """
    os.makedirs(outdir, exist_ok=True)
    files = []
    meta_domains = []
    for e, (spec, X) in enumerate(dataset.domains):
        name = f"domain_{e + 1:02d}.csv"
        _write_csv(os.path.join(outdir, name), X, "x")
        files.append(name)
        entry = {
            "targets": [int(t) + 1 for t in np.flatnonzero(spec.a)],
            "n": int(spec.n_samples),
            "weight": float(spec.weight),
            "file": name,
        }
        if dataset.true_Z is not None:
            zname = f"true_Z_{e + 1:02d}.csv"
            _write_csv(os.path.join(outdir, zname), dataset.true_Z[e], "z")
            files.append(zname)
            entry["true_z_file"] = zname
        meta_domains.append(entry)
    meta = {
        "schema": SCHEMA_VERSION,
        "seed": dataset.seed,
        "d_z": dataset.d_z,
        "d_x": dataset.d_x,
        "edges": [[k + 1, j + 1] for k, j in sorted(dataset.dag.edges)] if dataset.dag else None,
        "true_sigma2": dataset.true_sigma2,
        "domains": meta_domains,
    }
    if dataset.true_A is not None:
        _write_csv(os.path.join(outdir, "true_A.csv"), dataset.true_A, "a")
        files.append("true_A.csv")
        meta["true_a_file"] = "true_A.csv"
    with open(os.path.join(outdir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    files.append("meta.json")
    return files


def load_dataset(indir):
    """Read back a dataset directory written by save_dataset."""
    with open(os.path.join(indir, "meta.json")) as fh:
        meta = json.load(fh)
    d_z = int(meta["d_z"])
    dag = None
    if meta.get("edges") is not None:
        dag = build_dag(d_z, [(k - 1, j - 1) for k, j in meta["edges"]])
    domains, true_Z = [], []
    any_true_z = False
    for dom in meta["domains"]:
        X = np.loadtxt(os.path.join(indir, dom["file"]), delimiter=",", skiprows=1, ndmin=2)
        a = np.zeros(d_z, dtype=np.int8)
        a[[t - 1 for t in dom["targets"]]] = 1
        domains.append((DomainSpec(a=a, n_samples=int(dom["n"]), weight=float(dom["weight"])), X))
        if "true_z_file" in dom:
            any_true_z = True
            true_Z.append(
                np.loadtxt(os.path.join(indir, dom["true_z_file"]), delimiter=",", skiprows=1, ndmin=2)
            )
    true_A = None
    if meta.get("true_a_file"):
        true_A = np.loadtxt(os.path.join(indir, meta["true_a_file"]), delimiter=",", skiprows=1, ndmin=2)
    return Dataset(
        domains=domains,
        true_Z=true_Z if any_true_z else None,
        true_A=true_A,
        true_sigma2=meta.get("true_sigma2"),
        dag=dag,
        seed=meta.get("seed"),
    )
