"""Graph data types, acyclicity machinery, the permutation x triangular
factorization of DAGs, and random graph samplers.

Convention used everywhere in this package: ``adjacency[i, j] == 1`` means
there is a directed edge ``i -> j`` (row = parent, column = child).
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass

import numpy as np

from .errors import CyclicGraphError, ValidationError


def _as_binary_square(matrix, name: str) -> np.ndarray:
    m = np.asarray(matrix)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError(f"{name} must be a square matrix, got shape {m.shape}")
    if not (np.equal(m, 0) | np.equal(m, 1)).all():
        raise ValidationError(f"{name} must have entries in {{0, 1}}")
    return m.astype(np.uint8)


def _kahn_consumes_all(adj: np.ndarray) -> bool:
    # vectorized Kahn peel: repeatedly strip the zero-indegree frontier
    indegree = adj.sum(axis=0, dtype=np.int64)
    frontier = np.flatnonzero(indegree == 0)
    consumed = 0
    while frontier.size:
        consumed += frontier.size
        indegree -= adj[frontier].sum(axis=0, dtype=np.int64)
        indegree[frontier] = -1
        frontier = np.flatnonzero(indegree == 0)
    return consumed == adj.shape[0]


def is_acyclic(adjacency) -> bool:
    """True iff the binary adjacency matrix has no directed cycle or self-loop."""
    adj = _as_binary_square(adjacency, "adjacency")
    if np.any(np.diag(adj)):
        return False
    return _kahn_consumes_all(adj)


def topological_order(adjacency) -> list[int]:
    """Kahn topological order with ascending node-index tie-break.

    Raises CyclicGraphError if the graph has a cycle.
    """
    adj = np.asarray(adjacency)
    n = adj.shape[0]
    indegree = adj.sum(axis=0).astype(int)
    ready = [i for i in range(n) if indegree[i] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        node = heapq.heappop(ready)
        order.append(node)
        for child in np.flatnonzero(adj[node]):
            indegree[child] -= 1
            if indegree[child] == 0:
                heapq.heappush(ready, int(child))
    if len(order) != n:
        raise CyclicGraphError("adjacency matrix contains a directed cycle")
    return order


@dataclass(frozen=True, eq=False)
class Dag:
    """A directed acyclic graph stored as a binary adjacency matrix."""

    adjacency: np.ndarray

    def __post_init__(self):
        adj = _as_binary_square(self.adjacency, "adjacency")
        if np.any(np.diag(adj)):
            raise ValidationError("Dag adjacency must have a zero diagonal")
        if not _kahn_consumes_all(adj):
            raise CyclicGraphError("adjacency matrix contains a directed cycle")
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_edges(self) -> int:
        return int(self.adjacency.sum())

    def parents(self, node: int) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.adjacency[:, node])]

    def __eq__(self, other):
        if not isinstance(other, Dag):
            return NotImplemented
        return (
            self.adjacency.shape == other.adjacency.shape
            and bool((self.adjacency == other.adjacency).all())
        )

    def __hash__(self):
        return hash((self.adjacency.shape, self.adjacency.tobytes()))

    def __repr__(self):
        return f"Dag(num_nodes={self.num_nodes}, num_edges={self.num_edges})"


def is_permutation_matrix(matrix) -> bool:
    """True iff the matrix is binary with exactly one 1 per row and column."""
    try:
        m = _as_binary_square(matrix, "matrix")
    except ValidationError:
        return False
    return bool((m.sum(axis=0) == 1).all() and (m.sum(axis=1) == 1).all())


def is_strict_lower_triangular(matrix) -> bool:
    """True iff the matrix is binary with nonzeros only at positions i > j."""
    try:
        m = _as_binary_square(matrix, "matrix")
    except ValidationError:
        return False
    return not np.any(np.triu(m))


def permutation_matrix_from_order(order) -> np.ndarray:
    """Permutation matrix Q with Q[node, slot] = 1 for slot = position in order."""
    order = list(order)
    n = len(order)
    q = np.zeros((n, n), dtype=np.uint8)
    for slot, node in enumerate(order):
        q[node, slot] = 1
    return q


def compose_dag(q, a) -> Dag:
    """Build the DAG Q A Q^T from a permutation matrix and a strictly
    lower-triangular binary matrix.

    The result is acyclic by construction and has the same edge count as ``a``.
    """
    q = _as_binary_square(q, "permutation")
    a = _as_binary_square(a, "lower-triangular matrix")
    if q.shape != a.shape:
        raise ValidationError(f"shape mismatch: {q.shape} vs {a.shape}")
    if not is_permutation_matrix(q):
        raise ValidationError("q is not a permutation matrix")
    if not is_strict_lower_triangular(a):
        raise ValidationError("a is not strictly lower triangular")
    adjacency = q.astype(np.int64) @ a.astype(np.int64) @ q.T.astype(np.int64)
    return Dag(adjacency)


def decompose_dag(graph: Dag) -> tuple[np.ndarray, np.ndarray]:
    """Factor a DAG into (Q, A) with compose_dag(Q, A) == graph.

    The factorization is not unique; this one is canonical: the slot order is
    the reverse of the Kahn topological order (ascending-index tie-break), so
    the same DAG always yields the same (Q, A).
    """
    order = topological_order(graph.adjacency)
    q = permutation_matrix_from_order(reversed(order))
    a = q.T.astype(np.int64) @ graph.adjacency.astype(np.int64) @ q.astype(np.int64)
    return q, a.astype(np.uint8)


class GraphFamily(enum.Enum):
    ERDOS_RENYI = "erdos_renyi"
    SCALE_FREE = "scale_free"


@dataclass(frozen=True)
class GraphDistributionSpec:
    """Parameters of a random-graph family.

    expected_edges applies to ERDOS_RENYI; edges_per_node to SCALE_FREE.
    """

    family: GraphFamily
    num_nodes: int
    expected_edges: float | None = None
    edges_per_node: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.num_nodes < 1:
            raise ValidationError("num_nodes must be positive")
        if self.family is GraphFamily.ERDOS_RENYI:
            if self.expected_edges is None or self.expected_edges < 0:
                raise ValidationError("ERDOS_RENYI requires expected_edges >= 0")
            max_edges = self.num_nodes * (self.num_nodes - 1) / 2
            if self.expected_edges > max_edges:
                raise ValidationError(
                    f"expected_edges {self.expected_edges} exceeds D(D-1)/2 = {max_edges}"
                )
        elif self.family is GraphFamily.SCALE_FREE:
            if self.edges_per_node is None or self.edges_per_node < 1:
                raise ValidationError("SCALE_FREE requires edges_per_node >= 1")
            if self.edges_per_node >= self.num_nodes:
                raise ValidationError("edges_per_node must be < num_nodes")


def sample_er_graph(spec: GraphDistributionSpec, rng: np.random.Generator) -> Dag:
    """Erdos-Renyi DAG: a uniform random topological order combined with
    independent Bernoulli(p) inclusion of each strictly-lower position, where
    p = expected_edges / (D(D-1)/2)."""
    if spec.family is not GraphFamily.ERDOS_RENYI:
        raise ValidationError("sample_er_graph requires an ERDOS_RENYI spec")
    d = spec.num_nodes
    max_edges = d * (d - 1) / 2
    p = 0.0 if max_edges == 0 else spec.expected_edges / max_edges
    if p > 1.0:
        raise ValidationError(f"edge probability {p} > 1")
    order = rng.permutation(d)
    a = np.zeros((d, d), dtype=np.uint8)
    rows, cols = np.tril_indices(d, k=-1)
    a[rows, cols] = rng.random(rows.size) < p
    return compose_dag(permutation_matrix_from_order(order), a)


def sample_sf_graph(spec: GraphDistributionSpec, rng: np.random.Generator) -> Dag:
    """Scale-free DAG by preferential attachment, edges oriented old -> new.

    Seeding: node 0 exists initially; each new node t attaches to
    min(m, t) distinct existing nodes chosen proportionally to current total
    degree (uniformly while all degrees are zero).  With m edges per node this
    yields exactly sum_t min(m, t) edges, e.g. 2(D-2)+1 for m = 2.
    """
    if spec.family is not GraphFamily.SCALE_FREE:
        raise ValidationError("sample_sf_graph requires a SCALE_FREE spec")
    d = spec.num_nodes
    m = spec.edges_per_node
    adj = np.zeros((d, d), dtype=np.uint8)
    degree = np.zeros(d, dtype=np.int64)
    for new in range(1, d):
        k = min(m, new)
        weights = degree[:new].astype(np.float64)
        total = weights.sum()
        probs = np.full(new, 1.0 / new) if total == 0 else weights / total
        parents = rng.choice(new, size=k, replace=False, p=probs)
        for parent in parents:
            adj[parent, new] = 1
        degree[parents] += 1
        degree[new] += k
    return Dag(adj)
