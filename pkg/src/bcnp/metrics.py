"""Evaluation metrics over posterior DAG samples and marginal edge
probabilities: AUC, log Bernoulli probability, expected structural Hamming
distance, expected edge F1, and the two-variable graph-type tabulation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.stats import rankdata

from .errors import UndefinedMetricError, ValidationError
from .graphs import Dag

GRAPH_TYPES = ("no_edge", "edge_01", "edge_10", "bidirectional", "other")


@dataclass(frozen=True)
class PosteriorSampleSet:
    """Sampled DAGs plus derived marginal edge probabilities."""

    graphs: list[Dag]
    marginals: np.ndarray
    source_samples: int

    def __post_init__(self):
        if not self.graphs:
            raise ValidationError("PosteriorSampleSet needs at least one graph")
        m = np.asarray(self.marginals, dtype=np.float64)
        d = self.graphs[0].num_nodes
        if m.shape != (d, d):
            raise ValidationError(f"marginals must be {d} x {d}, got {m.shape}")
        if np.any(np.diag(m) != 0):
            raise ValidationError("marginals must have a zero diagonal")
        if (m < 0).any() or (m > 1).any():
            raise ValidationError("marginals must lie in [0, 1]")
        if any(g.num_nodes != d for g in self.graphs):
            raise ValidationError("all graphs must share one node count")
        m.setflags(write=False)
        object.__setattr__(self, "marginals", m)

    @property
    def num_nodes(self) -> int:
        return self.graphs[0].num_nodes


@dataclass(frozen=True)
class MetricReport:
    auc: float
    log_probability: float
    expected_shd: float
    expected_edge_f1: float

    def as_dict(self) -> dict[str, float]:
        return {
            "auc": self.auc,
            "log_probability": self.log_probability,
            "expected_shd": self.expected_shd,
            "expected_edge_f1": self.expected_edge_f1,
        }


def _offdiag_mask(d: int) -> np.ndarray:
    return ~np.eye(d, dtype=bool)


def auc(marginals: np.ndarray, true_graph: Dag) -> float:
    """Area under the ROC curve for directed-edge existence.

    Each ordered off-diagonal pair is one classification instance with score
    from the marginals and label from the true graph; computed as a
    Mann-Whitney U statistic with midranks on ties.
    """
    m = np.asarray(marginals, dtype=np.float64)
    d = true_graph.num_nodes
    if m.shape != (d, d):
        raise ValidationError(f"marginals must be {d} x {d}")
    mask = _offdiag_mask(d)
    scores = m[mask]
    labels = true_graph.adjacency[mask].astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            "AUC is undefined without both an edge and a non-edge"
        )
    ranks = rankdata(scores)  # average ranks = midranks
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def log_prob_metric(marginals: np.ndarray, true_graph: Dag, eps: float = 1e-8) -> float:
    """Sum over ordered off-diagonal pairs of the log Bernoulli probability of
    the true edge indicator under the (clamped) marginal."""
    m = np.asarray(marginals, dtype=np.float64)
    d = true_graph.num_nodes
    if m.shape != (d, d):
        raise ValidationError(f"marginals must be {d} x {d}")
    mask = _offdiag_mask(d)
    p = np.clip(m[mask], eps, 1.0 - eps)
    y = true_graph.adjacency[mask].astype(np.float64)
    return float((y * np.log(p) + (1.0 - y) * np.log1p(-p)).sum())


def shd(g1: Dag, g2: Dag) -> int:
    """Structural Hamming distance: the number of unordered node pairs whose
    edge status (none / forward / backward) differs; a reversal costs 1."""
    if g1.num_nodes != g2.num_nodes:
        raise ValidationError("graphs must have the same number of nodes")
    a, b = g1.adjacency.astype(np.int8), g2.adjacency.astype(np.int8)
    iu = np.triu_indices(g1.num_nodes, k=1)
    status_a = a[iu] + 2 * a.T[iu]
    status_b = b[iu] + 2 * b.T[iu]
    return int((status_a != status_b).sum())


def edge_f1(g_pred: Dag, g_true: Dag) -> float:
    """F1 over directed edges (ordered pairs).  Empty prediction and empty
    truth score 1.0 by convention: an exact match is perfect."""
    if g_pred.num_nodes != g_true.num_nodes:
        raise ValidationError("graphs must have the same number of nodes")
    pred = g_pred.adjacency.astype(bool)
    true = g_true.adjacency.astype(bool)
    tp = int((pred & true).sum())
    n_pred = int(pred.sum())
    n_true = int(true.sum())
    if n_pred == 0 and n_true == 0:
        return 1.0
    if tp == 0:
        return 0.0
    precision = tp / n_pred
    recall = tp / n_true
    return float(2 * precision * recall / (precision + recall))


def expected_metric(
    samples: PosteriorSampleSet, true_graph: Dag, which: Literal["shd", "f1"]
) -> float:
    """Arithmetic mean of the per-sample metric across the posterior samples."""
    if which == "shd":
        per_sample = [shd(g, true_graph) for g in samples.graphs]
    elif which == "f1":
        per_sample = [edge_f1(g, true_graph) for g in samples.graphs]
    else:
        raise ValidationError(f"unknown metric {which!r}")
    return float(np.mean(per_sample))


def metric_report(
    samples: PosteriorSampleSet, true_graph: Dag, log_prob_eps: float = 1e-8
) -> MetricReport:
    return MetricReport(
        auc=auc(samples.marginals, true_graph),
        log_probability=log_prob_metric(samples.marginals, true_graph, log_prob_eps),
        expected_shd=expected_metric(samples, true_graph, "shd"),
        expected_edge_f1=expected_metric(samples, true_graph, "f1"),
    )


def classify_two_node_graph(adjacency) -> str:
    """Bucket a raw 2 x 2 binary matrix: no edge, either single edge,
    both edges, or anything else (e.g. a self-loop)."""
    m = np.asarray(adjacency)
    if m.shape != (2, 2):
        raise ValidationError("graph_type classification needs 2 x 2 matrices")
    if m[0, 0] or m[1, 1]:
        return "other"
    forward, backward = bool(m[0, 1]), bool(m[1, 0])
    if forward and backward:
        return "bidirectional"
    if forward:
        return "edge_01"
    if backward:
        return "edge_10"
    return "no_edge"


def graph_type_tabulation(samples) -> dict[str, float]:
    """Proportion of each two-node graph type over a collection of sampled
    adjacency matrices (Dag instances or raw 2 x 2 arrays)."""
    counts = dict.fromkeys(GRAPH_TYPES, 0)
    total = 0
    for sample in samples:
        m = sample.adjacency if isinstance(sample, Dag) else sample
        counts[classify_two_node_graph(m)] += 1
        total += 1
    if total == 0:
        raise ValidationError("graph_type_tabulation needs at least one sample")
    return {k: v / total for k, v in counts.items()}
