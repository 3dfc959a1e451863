"""Experiment orchestration: evaluating a trained model over test corpora,
comparing its sampled posterior against the exact small-graph oracle, and the
two-variable graph-type tabulation.

Samplers are plain callables ``(dataset, num_samples, generator) ->
PosteriorSampleSet`` so stub models can stand in for trained ones in tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .datagen import GeneratorConfig, GeneratorTag, _record_rng, generate_sample
from .errors import UndefinedMetricError, ValidationError
from .graphs import Dag
from .metrics import (
    MetricReport,
    PosteriorSampleSet,
    expected_metric,
    graph_type_tabulation,
    log_prob_metric,
    auc,
)
from .model import BcnpModel, sample_dags
from .oracle import (
    ConjugateLinearGaussianBcm,
    ExactPosterior,
    empirical_dag_counts,
    enumerate_dags,
    exact_posterior,
    posterior_tv_distance,
    sample_bcm_dataset,
)
from .sinkhorn import GumbelSinkhornConfig


def model_sampler(model: BcnpModel, gs_config: GumbelSinkhornConfig | None = None):
    """Wrap a model as a posterior sampler callable."""
    config = gs_config or model.config.gs

    def sampler(dataset, num_samples, generator) -> PosteriorSampleSet:
        output = model.posterior_params(dataset)
        return sample_dags(output, num_samples, config, generator)

    return sampler


@dataclass(frozen=True)
class DatasetEvaluation:
    index: int
    report: dict

    def line(self) -> str:
        parts = [f"dataset={self.index}"]
        for key, value in self.report.items():
            parts.append(f"{key}={'NA' if value is None else f'{value:.6f}'}")
        return " ".join(parts)


def evaluate_dataset(
    sampler, dataset, true_graph: Dag, num_samples: int,
    generator: torch.Generator, log_prob_eps: float = 1e-8,
) -> dict:
    samples = sampler(dataset, num_samples, generator)
    try:
        auc_value = auc(samples.marginals, true_graph)
    except UndefinedMetricError:
        auc_value = None
    return {
        "auc": auc_value,
        "log_probability": log_prob_metric(samples.marginals, true_graph, log_prob_eps),
        "expected_shd": expected_metric(samples, true_graph, "shd"),
        "expected_edge_f1": expected_metric(samples, true_graph, "f1"),
    }


def evaluate_on_corpus(
    sampler, corpus, num_samples: int, seed: int = 0, log_prob_eps: float = 1e-8,
    limit: int | None = None,
) -> list[DatasetEvaluation]:
    """Evaluate every (dataset, graph) record of a corpus-like object with
    ``record(i)`` access."""
    count = len(corpus) if limit is None else min(limit, len(corpus))
    results = []
    for index in range(count):
        dataset, adjacency = corpus.record(index)
        generator = torch.Generator().manual_seed(_eval_seed(seed, index))
        report = evaluate_dataset(
            sampler, dataset, Dag(adjacency), num_samples, generator, log_prob_eps
        )
        results.append(DatasetEvaluation(index, report))
    return results


def _eval_seed(seed: int, index: int) -> int:
    return (seed * 1_000_003 + index) % (2**62)


def aggregate_reports(results: list[DatasetEvaluation]) -> dict:
    """Per-metric mean and standard error of the mean, skipping undefined
    entries."""
    aggregate: dict[str, dict] = {}
    keys = results[0].report.keys() if results else ()
    for key in keys:
        values = [r.report[key] for r in results if r.report[key] is not None]
        if not values:
            aggregate[key] = {"mean": None, "stderr": None, "count": 0}
            continue
        arr = np.asarray(values, dtype=np.float64)
        stderr = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
        aggregate[key] = {"mean": float(arr.mean()), "stderr": stderr, "count": arr.size}
    return aggregate


@dataclass(frozen=True)
class OracleComparison:
    tv_distances: list[float]
    modal_agreements: list[bool]

    @property
    def mean_tv(self) -> float:
        return float(np.mean(self.tv_distances))

    @property
    def max_tv(self) -> float:
        return float(np.max(self.tv_distances))

    @property
    def modal_agreement_rate(self) -> float:
        return float(np.mean(self.modal_agreements))


def oracle_compare(
    sampler,
    bcm: ConjugateLinearGaussianBcm,
    num_test: int,
    num_posterior_samples: int,
    num_data_samples: int = 100,
    seed: int = 0,
) -> OracleComparison:
    """Generate held-out datasets from the conjugate model, compute exact
    posteriors, sample the model, and report total-variation distances plus
    modal-graph agreement."""
    if num_test < 1:
        raise ValidationError("num_test must be >= 1")
    dags = enumerate_dags(bcm.num_nodes)
    tvs, modals = [], []
    for index in range(num_test):
        rng = _record_rng(seed, index)
        dataset, _ = sample_bcm_dataset(bcm, num_data_samples, rng)
        exact = exact_posterior(dataset, bcm)
        generator = torch.Generator().manual_seed(_eval_seed(seed, index))
        samples = sampler(dataset, num_posterior_samples, generator)
        counts = empirical_dag_counts(samples.graphs, dags)
        tvs.append(posterior_tv_distance(counts, exact))
        modals.append(dags[int(np.argmax(counts))] == exact.modal_dag())
    return OracleComparison(tvs, modals)


def exact_posterior_sampler(bcm: ConjugateLinearGaussianBcm):
    """Stub sampler that draws directly from the exact posterior; the
    total-variation distance against the oracle must then shrink as the
    sample count grows."""
    dags = enumerate_dags(bcm.num_nodes)

    def sampler(dataset, num_samples, generator) -> PosteriorSampleSet:
        exact = exact_posterior(dataset, bcm)
        probs = torch.tensor(exact.probs)
        picks = torch.multinomial(
            probs, num_samples, replacement=True, generator=generator
        )
        graphs = [dags[int(i)] for i in picks]
        marginals = np.einsum(
            "g,gij->ij",
            exact.probs,
            np.stack([d.adjacency.astype(np.float64) for d in dags]),
        )
        return PosteriorSampleSet(graphs, marginals, num_samples)

    return sampler


def uniform_dag_sampler(num_nodes: int):
    """Stub sampler that ignores the dataset and samples DAGs uniformly."""
    dags = enumerate_dags(num_nodes)

    def sampler(dataset, num_samples, generator) -> PosteriorSampleSet:
        picks = torch.randint(len(dags), (num_samples,), generator=generator)
        graphs = [dags[int(i)] for i in picks]
        marginals = np.mean([d.adjacency.astype(np.float64) for d in dags], axis=0)
        return PosteriorSampleSet(graphs, marginals, num_samples)

    return sampler


def two_var_tabulation(
    sampler, generator_config: GeneratorConfig, num_datasets: int,
    num_samples: int, seed: int = 0,
) -> dict[str, float]:
    """Aggregate graph-type proportions over freshly generated two-variable
    test datasets."""
    if generator_config.generator_tag is not GeneratorTag.TWO_VAR_LINEAR:
        raise ValidationError("two_var_tabulation needs the two-variable generator")
    all_graphs = []
    for index in range(num_datasets):
        sample = generate_sample(generator_config, _record_rng(seed, index), seed=index)
        generator = torch.Generator().manual_seed(_eval_seed(seed, index))
        samples = sampler(sample.dataset, num_samples, generator)
        all_graphs.extend(samples.graphs)
    return graph_type_tabulation(all_graphs)
