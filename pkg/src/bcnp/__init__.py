"""Amortized Bayesian causal discovery.

A library and CLI that trains a dataset-to-DAG-posterior model, plus the
synthetic SCM data engine, evaluation metrics, and exact small-graph
posterior oracles used to verify it.
"""

from .errors import (
    BcnpError,
    CyclicGraphError,
    IntegrityError,
    NumericalError,
    TrainingDivergedError,
    UndefinedMetricError,
    ValidationError,
    VersionMismatchError,
)
from .graphs import (
    Dag,
    GraphDistributionSpec,
    GraphFamily,
    compose_dag,
    decompose_dag,
    is_acyclic,
    is_permutation_matrix,
    is_strict_lower_triangular,
    sample_er_graph,
    sample_sf_graph,
    topological_order,
)
from .datagen import GeneratorConfig, GeneratorTag, ScmSample, generate_corpus, standardize
from .metrics import PosteriorSampleSet, auc, edge_f1, expected_metric, log_prob_metric, shd
from .model import BcnpModel, DecoderOutput, ModelConfig, edge_marginals, sample_dags
from .oracle import (
    ConjugateLinearGaussianBcm,
    ExactPosterior,
    enumerate_dags,
    exact_posterior,
    node_marginal_likelihood,
    posterior_tv_distance,
)
from .sinkhorn import (
    GumbelSinkhornConfig,
    brute_force_assignment,
    gumbel_sinkhorn_sample,
    hungarian,
    sinkhorn_normalize,
)
from .training import (
    Checkpoint,
    TrainConfig,
    load_checkpoint,
    log_bernoulli_dag,
    nll_loss,
    save_checkpoint,
    train,
)

__all__ = [
    "BcnpError",
    "BcnpModel",
    "Checkpoint",
    "ConjugateLinearGaussianBcm",
    "CyclicGraphError",
    "Dag",
    "DecoderOutput",
    "ExactPosterior",
    "GeneratorConfig",
    "GeneratorTag",
    "GraphDistributionSpec",
    "GraphFamily",
    "GumbelSinkhornConfig",
    "IntegrityError",
    "ModelConfig",
    "NumericalError",
    "PosteriorSampleSet",
    "ScmSample",
    "TrainConfig",
    "TrainingDivergedError",
    "UndefinedMetricError",
    "ValidationError",
    "VersionMismatchError",
    "auc",
    "brute_force_assignment",
    "compose_dag",
    "decompose_dag",
    "edge_f1",
    "edge_marginals",
    "enumerate_dags",
    "exact_posterior",
    "expected_metric",
    "generate_corpus",
    "gumbel_sinkhorn_sample",
    "hungarian",
    "is_acyclic",
    "is_permutation_matrix",
    "is_strict_lower_triangular",
    "load_checkpoint",
    "log_bernoulli_dag",
    "log_prob_metric",
    "nll_loss",
    "node_marginal_likelihood",
    "posterior_tv_distance",
    "sample_dags",
    "sample_er_graph",
    "sample_sf_graph",
    "save_checkpoint",
    "shd",
    "sinkhorn_normalize",
    "standardize",
    "topological_order",
    "train",
]
