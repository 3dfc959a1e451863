import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bcnp.errors import CyclicGraphError, ValidationError
from bcnp.graphs import (
    Dag,
    GraphDistributionSpec,
    GraphFamily,
    compose_dag,
    decompose_dag,
    is_acyclic,
    is_permutation_matrix,
    is_strict_lower_triangular,
    permutation_matrix_from_order,
    sample_er_graph,
    sample_sf_graph,
    topological_order,
)


def all_permutation_matrices(d):
    for order in itertools.permutations(range(d)):
        yield permutation_matrix_from_order(order)


def all_strict_lower(d):
    rows, cols = np.tril_indices(d, k=-1)
    for bits in itertools.product((0, 1), repeat=rows.size):
        a = np.zeros((d, d), dtype=np.uint8)
        a[rows, cols] = bits
        yield a


class TestIsAcyclic:
    def test_empty_graph(self):
        assert is_acyclic(np.zeros((2, 2), dtype=int))

    def test_two_cycle(self):
        assert not is_acyclic([[0, 1], [1, 0]])

    def test_self_loop(self):
        assert not is_acyclic([[1, 0], [0, 0]])

    def test_non_square_rejected(self):
        with pytest.raises(ValidationError):
            is_acyclic(np.zeros((2, 3)))

    def test_non_binary_rejected(self):
        with pytest.raises(ValidationError):
            is_acyclic([[0, 2], [0, 0]])

    def test_count_of_acyclic_4x4_binary_matrices(self):
        # Independent enumeration: of all 2^16 binary 4x4 matrices, exactly
        # 543 pass (the number of labeled DAGs on 4 nodes).
        count = 0
        for bits in range(1 << 16):
            m = np.array([(bits >> k) & 1 for k in range(16)], dtype=np.uint8)
            count += is_acyclic(m.reshape(4, 4))
        assert count == 543


class TestTopologicalOrder:
    def test_chain(self):
        adj = np.zeros((3, 3), dtype=np.uint8)
        adj[0, 1] = adj[1, 2] = 1
        assert topological_order(adj) == [0, 1, 2]

    def test_ascending_tie_break(self):
        assert topological_order(np.zeros((4, 4), dtype=np.uint8)) == [0, 1, 2, 3]

    def test_cycle_raises(self):
        with pytest.raises(CyclicGraphError):
            topological_order(np.array([[0, 1], [1, 0]], dtype=np.uint8))


class TestDag:
    def test_rejects_cycle(self):
        with pytest.raises(CyclicGraphError):
            Dag([[0, 1], [1, 0]])

    def test_rejects_nonzero_diagonal(self):
        with pytest.raises(ValidationError):
            Dag([[1, 0], [0, 0]])

    def test_parents(self):
        g = Dag([[0, 0, 1], [0, 0, 1], [0, 0, 0]])
        assert g.parents(2) == [0, 1]
        assert g.parents(0) == []

    def test_equality_and_hash(self):
        a = Dag([[0, 1], [0, 0]])
        b = Dag([[0, 1], [0, 0]])
        c = Dag([[0, 0], [1, 0]])
        assert a == b and hash(a) == hash(b)
        assert a != c


class TestComposeDag:
    def test_identity_permutation(self):
        g = compose_dag(np.eye(2, dtype=int), [[0, 0], [1, 0]])
        assert np.array_equal(g.adjacency, [[0, 0], [1, 0]])

    def test_conjugation_by_swap(self):
        q = np.array([[0, 1], [1, 0]])
        g = compose_dag(q, [[0, 0], [1, 0]])
        assert np.array_equal(g.adjacency, [[0, 1], [0, 0]])

    def test_edge_count_preserved_and_acyclic_random(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            order = rng.permutation(8)
            a = np.tril(rng.integers(0, 2, size=(8, 8)), k=-1).astype(np.uint8)
            g = compose_dag(permutation_matrix_from_order(order), a)
            assert is_acyclic(g.adjacency)
            assert g.num_edges == int(a.sum())

    @pytest.mark.parametrize("d", [2, 3])
    def test_exhaustive_small(self, d):
        for q in all_permutation_matrices(d):
            for a in all_strict_lower(d):
                g = compose_dag(q, a)
                assert is_acyclic(g.adjacency)

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            compose_dag(np.eye(2, dtype=int), np.zeros((3, 3), dtype=int))

    def test_invalid_inputs(self):
        with pytest.raises(ValidationError):
            compose_dag(np.ones((2, 2), dtype=int), np.zeros((2, 2), dtype=int))
        with pytest.raises(ValidationError):
            compose_dag(np.eye(2, dtype=int), np.triu(np.ones((2, 2), dtype=int), 1))


class TestDecomposeDag:
    def test_empty_graph_tie_break(self):
        q, a = decompose_dag(Dag(np.zeros((3, 3), dtype=int)))
        # reverse of Kahn order [0, 1, 2] puts node 2 in slot 0, etc.
        assert np.array_equal(q, np.eye(3, dtype=np.uint8)[:, ::-1])
        assert not a.any()

    def test_chain_round_trip(self):
        adj = np.zeros((3, 3), dtype=np.uint8)
        adj[0, 1] = adj[1, 2] = 1
        g = Dag(adj)
        q, a = decompose_dag(g)
        assert is_permutation_matrix(q)
        assert is_strict_lower_triangular(a)
        assert compose_dag(q, a) == g

    def test_round_trip_random_er(self):
        rng = np.random.default_rng(7)
        spec = GraphDistributionSpec(GraphFamily.ERDOS_RENYI, 10, expected_edges=15.0)
        for _ in range(500):
            g = sample_er_graph(spec, rng)
            q, a = decompose_dag(g)
            assert compose_dag(q, a) == g

    @given(st.integers(0, 2**30))
    @settings(max_examples=50, deadline=None)
    def test_round_trip_property(self, seed):
        rng = np.random.default_rng(seed)
        spec = GraphDistributionSpec(GraphFamily.ERDOS_RENYI, 6, expected_edges=5.0)
        g = sample_er_graph(spec, rng)
        q, a = decompose_dag(g)
        assert is_permutation_matrix(q) and is_strict_lower_triangular(a)
        assert compose_dag(q, a) == g


class TestSampleErGraph:
    def test_zero_edges(self):
        rng = np.random.default_rng(0)
        spec = GraphDistributionSpec(GraphFamily.ERDOS_RENYI, 5, expected_edges=0.0)
        for _ in range(20):
            assert sample_er_graph(spec, rng).num_edges == 0

    def test_mean_edge_count(self):
        rng = np.random.default_rng(1)
        spec = GraphDistributionSpec(GraphFamily.ERDOS_RENYI, 20, expected_edges=60.0)
        counts = [sample_er_graph(spec, rng).num_edges for _ in range(10_000)]
        assert abs(np.mean(counts) - 60.0) < 1.0

    def test_two_nodes_one_edge(self):
        rng = np.random.default_rng(2)
        spec = GraphDistributionSpec(GraphFamily.ERDOS_RENYI, 2, expected_edges=1.0)
        forward = 0
        n = 4000
        for _ in range(n):
            g = sample_er_graph(spec, rng)
            assert g.num_edges == 1
            forward += int(g.adjacency[0, 1])
        assert abs(forward / n - 0.5) < 0.03

    def test_overdense_spec_rejected(self):
        with pytest.raises(ValidationError):
            GraphDistributionSpec(GraphFamily.ERDOS_RENYI, 3, expected_edges=4.0)

    def test_edge_count_is_binomial(self):
        # chi-square goodness of fit against Binomial(10, 0.3) at D = 5.
        rng = np.random.default_rng(3)
        spec = GraphDistributionSpec(GraphFamily.ERDOS_RENYI, 5, expected_edges=3.0)
        draws = np.array([sample_er_graph(spec, rng).num_edges for _ in range(10_000)])
        n_pairs, p = 10, 0.3
        expected = stats.binom.pmf(np.arange(n_pairs + 1), n_pairs, p) * draws.size
        observed = np.bincount(draws, minlength=n_pairs + 1).astype(float)
        # merge bins with small expected counts into their neighbors
        keep = expected >= 5
        obs = np.concatenate([observed[keep], [observed[~keep].sum()]])
        exp = np.concatenate([expected[keep], [expected[~keep].sum()]])
        _, pvalue = stats.chisquare(obs, exp)
        assert pvalue > 0.001


class TestSampleSfGraph:
    def test_two_nodes_forced_edge(self):
        rng = np.random.default_rng(0)
        spec = GraphDistributionSpec(GraphFamily.SCALE_FREE, 2, edges_per_node=1)
        for _ in range(20):
            g = sample_sf_graph(spec, rng)
            assert np.array_equal(g.adjacency, [[0, 1], [0, 0]])

    def test_deterministic_edge_count(self):
        rng = np.random.default_rng(1)
        spec = GraphDistributionSpec(GraphFamily.SCALE_FREE, 20, edges_per_node=2)
        for _ in range(100):
            assert sample_sf_graph(spec, rng).num_edges == 2 * (20 - 2) + 1

    def test_always_acyclic(self):
        rng = np.random.default_rng(2)
        spec = GraphDistributionSpec(GraphFamily.SCALE_FREE, 12, edges_per_node=3)
        for _ in range(1000):
            assert is_acyclic(sample_sf_graph(spec, rng).adjacency)

    def test_m_too_large_rejected(self):
        with pytest.raises(ValidationError):
            GraphDistributionSpec(GraphFamily.SCALE_FREE, 3, edges_per_node=3)
