"""Empirical Bayes EM for multi-domain causal representation learning.

Simulates interventional latent SCMs observed through a linear Gaussian
measurement map and recovers the latents, the mixing matrix, and the noise
variance by EM with causally structured spline score matching.
"""

from .em import (
    METHODS,
    EmConfig,
    EmResult,
    MeasurementEstimate,
    NonFiniteError,
    load_result,
    m_step_A,
    m_step_moments,
    m_step_objective,
    m_step_sigma2,
    make_baseline,
    pca_estimate,
    project,
    run_em,
    run_method,
    save_result,
    tweedie_mean,
    tweedie_second_moment,
)
from .graph import CycleError, Dag, GraphVariant, apply_variant, build_dag, parents
from .metrics import (
    Alignment,
    align_columns,
    apply_alignment,
    evaluate_result,
    frobenius_error,
    rel_mse,
    summarize,
)
from .numeric import ThinSvd, pca_loadings, pca_residual_variance, ridge_solve, thin_svd
from .scm import (
    BenchmarkConfig,
    ConfigError,
    Dataset,
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
from .score import (
    ScoreModel,
    empirical_loss,
    eval_score,
    eval_score_dself,
    fit_score,
    loss_gradient,
    make_score_model,
    regularized_loss,
    score_dself_values,
    score_model_from_dict,
    score_model_to_dict,
    score_values,
)
from .splines import SplineBasis1D, TensorBasis, uniform_basis

__version__ = "0.1.0"

__all__ = [
    "Alignment",
    "BenchmarkConfig",
    "ConfigError",
    "CycleError",
    "Dag",
    "Dataset",
    "DomainSpec",
    "EmConfig",
    "EmResult",
    "GraphVariant",
    "InterventionSpec",
    "METHODS",
    "MeasurementEstimate",
    "Mechanism",
    "NonFiniteError",
    "ScmSpec",
    "ScoreModel",
    "SplineBasis1D",
    "TensorBasis",
    "ThinSvd",
    "align_columns",
    "apply_alignment",
    "apply_variant",
    "build_dag",
    "empirical_loss",
    "eval_score",
    "eval_score_dself",
    "evaluate_result",
    "fit_score",
    "frobenius_error",
    "generate_benchmark",
    "load_dataset",
    "load_result",
    "loss_gradient",
    "m_step_A",
    "m_step_moments",
    "m_step_objective",
    "m_step_sigma2",
    "make_baseline",
    "make_rng",
    "make_score_model",
    "parents",
    "pca_estimate",
    "pca_loadings",
    "pca_residual_variance",
    "project",
    "regularized_loss",
    "rel_mse",
    "ridge_solve",
    "run_em",
    "run_method",
    "sample_orthonormal_mixing",
    "sample_scm",
    "save_dataset",
    "save_result",
    "score_dself_values",
    "score_model_from_dict",
    "score_model_to_dict",
    "score_values",
    "summarize",
    "thin_svd",
    "tweedie_mean",
    "tweedie_second_moment",
    "uniform_basis",
]
