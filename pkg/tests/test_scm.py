"""Latent SCM sampling, intervention semantics, and dataset persistence."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from ebcrl.graph import build_dag
from ebcrl.scm import (
    BenchmarkConfig,
    ConfigError,
    DomainSpec,
    InterventionSpec,
    Mechanism,
    ScmSpec,
    generate_benchmark,
    load_dataset,
    make_rng,
    sample_orthonormal_mixing,
    sample_scm,
    save_dataset,
)


def chain_spec(kappa=0.5, sigma_z=1.0):
    dag = build_dag(3, [(0, 1), (1, 2)])
    mechs = (
        Mechanism({}, kappa, sigma_z),
        Mechanism({0: 0.8}, kappa, sigma_z),
        Mechanism({1: -0.6}, kappa, sigma_z),
    )
    return ScmSpec(dag, mechs, InterventionSpec(10.0, 1.0))


def test_make_rng_is_deterministic_and_path_separated():
    a = make_rng(42, 3).standard_normal(5)
    b = make_rng(42, 3).standard_normal(5)
    c = make_rng(42, 4).standard_normal(5)
    assert_allclose(a, b, atol=0)
    assert not np.allclose(a, c)


def test_sample_scm_mechanism_values():
    # with the noise matrix known, node values follow the structural equations
    spec = chain_spec(kappa=0.5, sigma_z=2.0)
    rng = make_rng(0, 1)
    Z = sample_scm(spec, np.zeros(3, dtype=np.int8), 64, rng)
    E = make_rng(0, 1).standard_normal((64, 3))

    def g(z, k=0.5):
        return np.tanh(k * z) + (k * z) ** 3

    assert_allclose(Z[:, 0], 2.0 * E[:, 0], atol=1e-14)
    assert_allclose(Z[:, 1], 0.8 * g(Z[:, 0]) + 2.0 * E[:, 1], atol=1e-14)
    assert_allclose(Z[:, 2], -0.6 * g(Z[:, 1]) + 2.0 * E[:, 2], atol=1e-14)


def test_intervention_replaces_mechanism():
    spec = chain_spec()
    a = np.array([0, 1, 0], dtype=np.int8)
    Z = sample_scm(spec, a, 10000, make_rng(1, 0))
    assert abs(Z[:, 1].mean() - 10.0) < 0.05
    assert abs(Z[:, 1].std() - 1.0) < 0.05


def test_intervention_leaves_non_descendants_bitwise_unchanged():
    spec = chain_spec()
    obs = sample_scm(spec, np.array([0, 0, 0], dtype=np.int8), 500, make_rng(2, 0))
    hit = sample_scm(spec, np.array([0, 1, 0], dtype=np.int8), 500, make_rng(2, 0))
    # node 0 is upstream of the target, so it must match exactly
    assert np.array_equal(obs[:, 0], hit[:, 0])
    # the descendant changes
    assert not np.array_equal(obs[:, 2], hit[:, 2])


def test_intervention_propagates_downstream():
    spec = chain_spec(kappa=0.5)
    hit = sample_scm(spec, np.array([1, 0, 0], dtype=np.int8), 20000, make_rng(3, 0))
    obs = sample_scm(spec, np.array([0, 0, 0], dtype=np.int8), 20000, make_rng(3, 0))
    assert abs(hit[:, 1].mean() - obs[:, 1].mean()) > 1.0


def test_sample_scm_target_length_check():
    spec = chain_spec()
    with pytest.raises(ValueError):
        sample_scm(spec, np.zeros(2, dtype=np.int8), 10, make_rng(0, 0))


def test_scm_spec_validates_weights_against_parents():
    dag = build_dag(2, [(0, 1)])
    with pytest.raises(ValueError):
        ScmSpec(dag, (Mechanism({}, 1.0, 1.0), Mechanism({}, 1.0, 1.0)), InterventionSpec(10, 1))
    with pytest.raises(ValueError):
        Mechanism({}, 1.0, 0.0)
    with pytest.raises(ValueError):
        InterventionSpec(10.0, -1.0)


def test_domain_spec_validation():
    with pytest.raises(ValueError):
        DomainSpec(a=np.array([0, 2]), n_samples=5)
    with pytest.raises(ValueError):
        DomainSpec(a=np.array([0, 1]), n_samples=0)
    with pytest.raises(ValueError):
        DomainSpec(a=np.array([0, 1]), n_samples=5, weight=-0.5)


def test_orthonormal_mixing():
    A = sample_orthonormal_mixing(9, 4, make_rng(5, 0))
    assert A.shape == (9, 4)
    assert np.max(np.abs(A.T @ A - np.eye(4))) < 1e-12
    again = sample_orthonormal_mixing(9, 4, make_rng(5, 0))
    assert np.array_equal(A, again)
    with pytest.raises(ValueError):
        sample_orthonormal_mixing(3, 4, make_rng(5, 0))


def desk_config(**kw):
    base = dict(
        d_z=3,
        d_x=8,
        edges=((0, 1), (1, 2)),
        kappa=0.2,
        sigma_z=1.5,
        sigma_x2=0.5,
        domains=(((), 40, 1.0), ((0,), 40, 1.0), ((2,), 40, 1.0)),
        seed=7,
    )
    base.update(kw)
    return BenchmarkConfig(**base)


def test_generate_benchmark_shapes_and_truth():
    cfg = desk_config()
    ds = generate_benchmark(cfg, make_rng(cfg.seed))
    assert ds.d_x == 8 and ds.d_z == 3
    assert len(ds.domains) == 3
    assert ds.true_A.shape == (8, 3)
    assert ds.true_sigma2 == 0.5
    assert [spec.n_samples for spec, _ in ds.domains] == [40, 40, 40]
    assert ds.target_list()[1].tolist() == [1, 0, 0]
    assert ds.dag.edges == frozenset({(0, 1), (1, 2)})


def test_generate_benchmark_noiseless_measurement():
    cfg = desk_config(sigma_x2=0.0)
    ds = generate_benchmark(cfg, make_rng(cfg.seed))
    for Z, X in zip(ds.true_Z, ds.x_list()):
        assert_allclose(X, Z @ ds.true_A.T, atol=1e-12)


def test_generate_benchmark_domain_streams_are_modular():
    # dropping the trailing domain must not change the earlier draws
    full = generate_benchmark(desk_config(), make_rng(7))
    short_cfg = desk_config(domains=(((), 40, 1.0), ((0,), 40, 1.0)))
    short = generate_benchmark(short_cfg, make_rng(7))
    assert np.array_equal(full.true_A, short.true_A)
    for e in range(2):
        assert np.array_equal(full.x_list()[e], short.x_list()[e])
        assert np.array_equal(full.true_Z[e], short.true_Z[e])


def test_generate_benchmark_sample_extension():
    # growing one domain keeps the first rows identical (paired subsampling)
    small = generate_benchmark(desk_config(), make_rng(7))
    big_cfg = desk_config(domains=(((), 100, 1.0), ((0,), 40, 1.0), ((2,), 40, 1.0)))
    big = generate_benchmark(big_cfg, make_rng(7))
    assert np.array_equal(big.true_Z[0][:40], small.true_Z[0])


def test_benchmark_config_validation():
    with pytest.raises(ConfigError):
        desk_config(d_x=2)  # d_x < d_z
    with pytest.raises(ConfigError):
        desk_config(domains=())
    with pytest.raises(ConfigError):
        desk_config(domains=(((5,), 40, 1.0),))
    with pytest.raises(ConfigError):
        desk_config(sigma_z=0.0)
    with pytest.raises(ConfigError):
        desk_config(sigma_x2=-1.0)


def test_benchmark_config_dict_roundtrip():
    cfg = desk_config()
    again = BenchmarkConfig.from_dict(cfg.to_dict())
    assert again == cfg
    d = cfg.to_dict()
    # JSON form is 1-based
    assert d["edges"] == [[1, 2], [2, 3]]
    assert d["domains"][1]["targets"] == [1]


def test_benchmark_config_from_dict_errors():
    with pytest.raises(ConfigError):
        BenchmarkConfig.from_dict({"d_z": 2})
    with pytest.raises(ConfigError):
        BenchmarkConfig.from_dict({"d_z": "x", "d_x": 4, "edges": [], "domains": []})


def test_dataset_roundtrip(tmp_path):
    ds = generate_benchmark(desk_config(), make_rng(7))
    files = save_dataset(ds, tmp_path)
    assert "meta.json" in files
    back = load_dataset(tmp_path)
    assert back.d_x == ds.d_x and back.d_z == ds.d_z
    assert back.dag == ds.dag
    assert back.true_sigma2 == ds.true_sigma2
    assert back.seed == ds.seed
    for e in range(len(ds.domains)):
        assert np.array_equal(back.x_list()[e], ds.x_list()[e])
        assert np.array_equal(back.true_Z[e], ds.true_Z[e])
        assert np.array_equal(back.target_list()[e], ds.target_list()[e])
    assert np.array_equal(back.true_A, ds.true_A)


def test_dataset_roundtrip_without_truth(tmp_path):
    ds = generate_benchmark(desk_config(), make_rng(7))
    stripped = type(ds)(domains=ds.domains, dag=ds.dag, seed=ds.seed)
    save_dataset(stripped, tmp_path)
    back = load_dataset(tmp_path)
    assert back.true_Z is None
    assert back.true_A is None
    assert back.true_sigma2 is None
