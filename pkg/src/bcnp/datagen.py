"""Synthetic (dataset, DAG) pair generators.

Three multi-node Bayesian causal models (linear heteroscedastic, random
neural network, GP with latent input), the two-variable unidentifiable
linear-Gaussian generator, the conjugate linear-Gaussian model used by the
exact oracle, and post-hoc column standardization.

All generators traverse nodes in topological order and consume randomness
per node in that order, so relabeling the nodes of a graph with a unique
topological order relabels the generated columns instead of reshuffling
the random stream.
"""

from __future__ import annotations

import enum
from collections.abc import Callable, Iterator
from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericalError, ValidationError
from .graphs import Dag, GraphDistributionSpec, GraphFamily, sample_er_graph, sample_sf_graph, topological_order
from .oracle import ConjugateLinearGaussianBcm, sample_bcm_dataset

STD_FLOOR = 1e-8


class GeneratorTag(enum.Enum):
    TWO_VAR_LINEAR = "two_var_linear"
    LINEAR = "linear"
    NEURAL_NET = "neural_net"
    GPCDE = "gpcde"
    CONJUGATE_LINEAR = "conjugate_linear"


@dataclass(frozen=True)
class ScmSample:
    """One (dataset, graph) draw from a Bayesian causal model."""

    dataset: np.ndarray  # N x D
    graph: Dag
    generator_tag: GeneratorTag
    seed: int = 0

    def __post_init__(self):
        data = np.asarray(self.dataset, dtype=np.float64)
        if data.ndim != 2:
            raise ValidationError("dataset must be an N x D matrix")
        if data.shape[1] != self.graph.num_nodes:
            raise ValidationError(
                f"dataset has {data.shape[1]} columns, graph has {self.graph.num_nodes} nodes"
            )
        if not np.isfinite(data).all():
            raise ValidationError("dataset must be finite")
        data.setflags(write=False)
        object.__setattr__(self, "dataset", data)

    @property
    def num_samples(self) -> int:
        return self.dataset.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes


@dataclass(frozen=True)
class GeneratorConfig:
    """Hyperparameters of the data generators.

    Gamma distributions are shape-rate: Gamma(2.5, 2.5) has mean 1, which
    keeps noise scales comparable to the unit-variance signals.
    """

    generator_tag: GeneratorTag
    num_samples: int
    graph_spec: GraphDistributionSpec | None = None
    weight_std: float = float(np.sqrt(10.0))
    noise_gamma_shape: float = 2.5
    noise_gamma_rate: float = 2.5
    nn_width: int = 32
    nn_layers: int = 2
    leaky_slope: float = 0.01
    gp_gamma_range: tuple[float, float] = (0.1, 1.0)
    gp_lambda_logmean: float = -1.0
    gp_lambda_logstd: float = 1.0
    gp_noise_gamma: tuple[float, float] = (1.0, 10.0)
    bcm_weight_std: float = 1.0
    bcm_noise_std: float = 0.5
    standardize: bool = True

    def __post_init__(self):
        if self.num_samples < 2:
            raise ValidationError("num_samples must be >= 2")
        positive = {
            "weight_std": self.weight_std,
            "noise_gamma_shape": self.noise_gamma_shape,
            "noise_gamma_rate": self.noise_gamma_rate,
            "nn_width": self.nn_width,
            "leaky_slope": self.leaky_slope,
            "gp_lambda_logstd": self.gp_lambda_logstd,
            "bcm_weight_std": self.bcm_weight_std,
            "bcm_noise_std": self.bcm_noise_std,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ValidationError(f"{name} must be > 0")
        if self.nn_layers < 2:
            raise ValidationError("nn_layers must be >= 2")
        needs_graph = (GeneratorTag.LINEAR, GeneratorTag.NEURAL_NET, GeneratorTag.GPCDE)
        if self.generator_tag in needs_graph and self.graph_spec is None:
            raise ValidationError(f"{self.generator_tag.value} requires a graph_spec")

    @property
    def num_nodes(self) -> int:
        if self.generator_tag is GeneratorTag.TWO_VAR_LINEAR:
            return 2
        if self.generator_tag is GeneratorTag.CONJUGATE_LINEAR:
            return 3 if self.graph_spec is None else self.graph_spec.num_nodes
        return self.graph_spec.num_nodes


def standardize(dataset: np.ndarray) -> np.ndarray:
    """Shift/scale every column to sample mean 0 and standard deviation 1
    (population convention, divisor N); near-constant columns are divided by
    max(std, 1e-8) instead of blowing up."""
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValidationError("standardize expects an N x D matrix with N >= 2")
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    return (data - mean) / np.maximum(std, STD_FLOOR)


def _ancestral_sample(
    graph: Dag,
    num_samples: int,
    rng: np.random.Generator,
    node_fn: Callable[[int, np.ndarray, np.random.Generator], np.ndarray],
) -> np.ndarray:
    """Generate columns in topological order; parents are presented sorted by
    topological rank so the traversal is structure-driven, not index-driven."""
    order = topological_order(graph.adjacency)
    rank = {node: pos for pos, node in enumerate(order)}
    data = np.zeros((num_samples, graph.num_nodes))
    for node in order:
        parents = sorted(graph.parents(node), key=rank.__getitem__)
        data[:, node] = node_fn(node, data[:, parents], rng)
    return data


def gen_two_var_linear_gaussian(
    num_samples: int,
    rng: np.random.Generator,
    config: GeneratorConfig | None = None,
    weight_override: float | None = None,
) -> ScmSample:
    """Unidentifiable two-variable generator: a fair coin picks 0->1 or 1->0,
    the cause is standard normal, the effect is a linear map plus Gaussian
    noise with per-dataset scale, and both columns are standardized so the
    direction cannot be read off the data."""
    cfg = config or GeneratorConfig(GeneratorTag.TWO_VAR_LINEAR, num_samples)
    adj = np.zeros((2, 2), dtype=np.uint8)
    if rng.integers(2) == 0:
        adj[0, 1] = 1
    else:
        adj[1, 0] = 1
    graph = Dag(adj)

    def node_fn(node, x_parents, rng):
        if x_parents.shape[1] == 0:
            return rng.standard_normal(num_samples)
        w = rng.normal(0.0, cfg.weight_std) if weight_override is None else weight_override
        sigma = rng.gamma(cfg.noise_gamma_shape, 1.0 / cfg.noise_gamma_rate)
        return w * x_parents[:, 0] + sigma * rng.standard_normal(num_samples)

    data = standardize(_ancestral_sample(graph, num_samples, rng, node_fn))
    return ScmSample(data, graph, GeneratorTag.TWO_VAR_LINEAR)


def gen_linear(
    graph: Dag,
    config: GeneratorConfig,
    rng: np.random.Generator,
    weight_override: float | None = None,
) -> ScmSample:
    """Linear mechanism with heteroscedastic noise: roots are standard normal;
    each non-root draws one weight vector per node and a fresh noise scale per
    sample."""

    def node_fn(node, x_parents, rng):
        n = config.num_samples
        if x_parents.shape[1] == 0:
            return rng.standard_normal(n)
        k = x_parents.shape[1]
        if weight_override is None:
            w = rng.normal(0.0, config.weight_std, size=k)
        else:
            w = np.full(k, float(weight_override))
        sigma = rng.gamma(config.noise_gamma_shape, 1.0 / config.noise_gamma_rate, size=n)
        return x_parents @ w + sigma * rng.standard_normal(n)

    data = _ancestral_sample(graph, config.num_samples, rng, node_fn)
    if config.standardize:
        data = standardize(data)
    return ScmSample(data, graph, GeneratorTag.LINEAR)


def _sample_mlp_params(dims: list[int], rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    params = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        scale = 1.0 / np.sqrt(fan_in)
        w = rng.normal(0.0, scale, size=(fan_in, fan_out))
        b = rng.normal(0.0, scale, size=fan_out)
        params.append((w, b))
    return params


def gen_neuralnet(
    graph: Dag,
    config: GeneratorConfig,
    rng: np.random.Generator,
    params_fn: Callable[[list[int], np.random.Generator], list] | None = None,
) -> ScmSample:
    """Each node is a freshly initialized LeakyReLU MLP applied to
    (parent values, latent standard-normal input); a root sees the latent
    input alone."""
    params_fn = params_fn or _sample_mlp_params

    def node_fn(node, x_parents, rng):
        n = config.num_samples
        eps = rng.standard_normal(n)
        dims = [x_parents.shape[1] + 1] + [config.nn_width] * (config.nn_layers - 1) + [1]
        params = params_fn(dims, rng)
        h = np.concatenate([x_parents, eps[:, None]], axis=1)
        for layer, (w, b) in enumerate(params):
            h = h @ w + b
            if layer < len(params) - 1:
                h = np.where(h >= 0, h, config.leaky_slope * h)
        return h[:, 0]

    data = _ancestral_sample(graph, config.num_samples, rng, node_fn)
    if config.standardize:
        data = standardize(data)
    return ScmSample(data, graph, GeneratorTag.NEURAL_NET)


def exponential_gamma_kernel(
    inputs: np.ndarray, gamma: float, lengthscales: np.ndarray
) -> np.ndarray:
    """K_ij = exp(-sum_k |z_ik - z_jk|^(2 gamma) / lambda_k), one lengthscale
    per input dimension (ARD form); the diagonal is exactly 1."""
    z = np.asarray(inputs, dtype=np.float64)
    n, k = z.shape
    lengthscales = np.asarray(lengthscales, dtype=np.float64)
    if lengthscales.shape != (k,):
        raise ValidationError("need one lengthscale per input dimension")
    log_k = np.zeros((n, n))
    for dim in range(k):
        diff = np.abs(z[:, dim, None] - z[None, :, dim])
        log_k -= diff ** (2.0 * gamma) / lengthscales[dim]
    return np.exp(log_k)


def _cholesky_with_jitter(cov: np.ndarray) -> np.ndarray:
    base_jitter = 1e-6 * float(np.diag(cov).mean())
    jitter = base_jitter
    for attempt in range(4):
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError(
        f"Cholesky failed after jitter escalation to {jitter:.3e} "
        f"(matrix size {cov.shape[0]}, mean diag {np.diag(cov).mean():.3e})"
    )


MAX_GP_SAMPLES = 5000


def gen_gpcde(graph: Dag, config: GeneratorConfig, rng: np.random.Generator) -> ScmSample:
    """Each node is a draw from a zero-mean GP over (parents, latent input)
    under the exponential gamma kernel, plus homoscedastic Gaussian noise."""
    if config.num_samples > MAX_GP_SAMPLES:
        raise ValidationError(f"gpcde supports at most N = {MAX_GP_SAMPLES} samples")
    lo, hi = config.gp_gamma_range
    shape, rate = config.gp_noise_gamma

    def node_fn(node, x_parents, rng):
        n = config.num_samples
        eps = rng.standard_normal(n)
        z = np.concatenate([x_parents, eps[:, None]], axis=1)
        gamma = rng.uniform(lo, hi)
        lam = rng.lognormal(config.gp_lambda_logmean, config.gp_lambda_logstd, size=z.shape[1])
        kernel = exponential_gamma_kernel(z, gamma, lam)
        sigma = rng.gamma(shape, 1.0 / rate)
        chol = _cholesky_with_jitter(kernel + sigma**2 * np.eye(n))
        return chol @ rng.standard_normal(n)

    data = _ancestral_sample(graph, config.num_samples, rng, node_fn)
    if config.standardize:
        data = standardize(data)
    return ScmSample(data, graph, GeneratorTag.GPCDE)


def _record_rng(master_seed: int, index: int) -> np.random.Generator:
    """Per-record counter-based stream: Philox keyed by (master seed, index)."""
    key = np.array([master_seed % 2**64, index % 2**64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def generate_sample(config: GeneratorConfig, rng: np.random.Generator, seed: int = 0) -> ScmSample:
    """One ScmSample according to the configured generator family."""
    tag = config.generator_tag
    if tag is GeneratorTag.TWO_VAR_LINEAR:
        sample = gen_two_var_linear_gaussian(config.num_samples, rng, config)
    elif tag is GeneratorTag.CONJUGATE_LINEAR:
        bcm = ConjugateLinearGaussianBcm(
            num_nodes=config.num_nodes,
            weight_prior_std=config.bcm_weight_std,
            noise_std=config.bcm_noise_std,
        )
        data, graph = sample_bcm_dataset(bcm, config.num_samples, rng)
        if config.standardize:
            raise ValidationError(
                "conjugate_linear corpora must not be standardized: the exact "
                "oracle scores raw draws"
            )
        sample = ScmSample(data, graph, tag)
    else:
        graph = _sample_graph(config, rng)
        if tag is GeneratorTag.LINEAR:
            sample = gen_linear(graph, config, rng)
        elif tag is GeneratorTag.NEURAL_NET:
            sample = gen_neuralnet(graph, config, rng)
        elif tag is GeneratorTag.GPCDE:
            sample = gen_gpcde(graph, config, rng)
        else:
            raise ValidationError(f"unknown generator tag {tag}")
    return replace(sample, seed=seed)


def _sample_graph(config: GeneratorConfig, rng: np.random.Generator) -> Dag:
    spec = config.graph_spec
    if spec.family is GraphFamily.ERDOS_RENYI:
        return sample_er_graph(spec, rng)
    return sample_sf_graph(spec, rng)


def generate_corpus(
    config: GeneratorConfig, count: int, master_seed: int
) -> Iterator[ScmSample]:
    """``count`` independent ScmSamples, fully reproducible from
    (config, master_seed): record i is generated from its own Philox stream
    keyed by (master_seed, i), so records can be produced in any order or in
    parallel."""
    if count < 1:
        raise ValidationError("count must be >= 1")
    for index in range(count):
        rng = _record_rng(master_seed, index)
        try:
            yield generate_sample(config, rng, seed=index)
        except (ValidationError, NumericalError) as exc:
            raise type(exc)(f"record {index}: {exc}") from exc
