import numpy as np
import pytest
from scipy import stats

from bcnp.datagen import (
    GeneratorConfig,
    GeneratorTag,
    ScmSample,
    exponential_gamma_kernel,
    gen_gpcde,
    gen_linear,
    gen_neuralnet,
    gen_two_var_linear_gaussian,
    generate_corpus,
    standardize,
)
from bcnp.errors import ValidationError
from bcnp.graphs import Dag, GraphDistributionSpec, GraphFamily


def chain_dag(order):
    d = len(order)
    adj = np.zeros((d, d), dtype=np.uint8)
    for a, b in zip(order[:-1], order[1:]):
        adj[a, b] = 1
    return Dag(adj)


def linear_config(n, d, **kwargs):
    spec = GraphDistributionSpec(GraphFamily.ERDOS_RENYI, d, expected_edges=d - 1.0)
    return GeneratorConfig(GeneratorTag.LINEAR, n, graph_spec=spec, **kwargs)


class TestStandardize:
    def test_two_point_column(self):
        out = standardize(np.array([[1.0], [3.0]]))
        np.testing.assert_allclose(out, [[-1.0], [1.0]])

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        x = rng.normal(2.0, 3.0, size=(100, 4))
        once = standardize(x)
        np.testing.assert_allclose(standardize(once), once, atol=1e-12)

    def test_constant_column(self):
        out = standardize(np.array([[5.0], [5.0], [5.0]]))
        np.testing.assert_array_equal(out, np.zeros((3, 1)))

    def test_needs_two_rows(self):
        with pytest.raises(ValidationError):
            standardize(np.ones((1, 3)))


class TestTwoVarLinearGaussian:
    def test_columns_standardized(self):
        rng = np.random.default_rng(0)
        sample = gen_two_var_linear_gaussian(1000, rng)
        np.testing.assert_allclose(sample.dataset.mean(axis=0), 0.0, atol=1e-6)
        np.testing.assert_allclose(sample.dataset.std(axis=0), 1.0, atol=1e-6)

    def test_direction_is_fair_coin(self):
        rng = np.random.default_rng(1)
        forward = sum(
            int(gen_two_var_linear_gaussian(16, rng).graph.adjacency[0, 1])
            for _ in range(10_000)
        )
        assert abs(forward / 10_000 - 0.5) < 0.02

    def test_large_weight_gives_near_perfect_correlation(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            sample = gen_two_var_linear_gaussian(2000, rng, weight_override=100.0)
            corr = np.corrcoef(sample.dataset.T)[0, 1]
            assert abs(corr) > 0.99


class TestGenLinear:
    def test_empty_graph_standard_normal_roots(self):
        rng = np.random.default_rng(0)
        config = linear_config(2000, 3, standardize=False)
        sample = gen_linear(Dag(np.zeros((3, 3), dtype=int)), config, rng)
        for col in sample.dataset.T:
            assert stats.kstest(col, "norm").pvalue > 0.001

    def test_zero_weight_hook_breaks_dependence(self):
        rng = np.random.default_rng(1)
        config = linear_config(5000, 2)
        sample = gen_linear(chain_dag([0, 1]), config, rng, weight_override=0.0)
        corr = np.corrcoef(sample.dataset.T)[0, 1]
        assert abs(corr) < 0.05

    def test_cause_column_matches_two_var_generator(self):
        # both generators produce exactly standardized Gaussian cause columns;
        # the effect columns differ by design (per-sample vs per-dataset noise
        # scale), so only their first two moments are compared
        rng = np.random.default_rng(2)
        config = linear_config(400, 2)
        causes_linear, causes_two_var = [], []
        for _ in range(50):
            s1 = gen_linear(chain_dag([0, 1]), config, rng)
            s2 = gen_two_var_linear_gaussian(400, rng)
            causes_linear.append(s1.dataset[:, 0])
            cause_idx = 0 if s2.graph.adjacency[0, 1] else 1
            causes_two_var.append(s2.dataset[:, cause_idx])
            np.testing.assert_allclose(s2.dataset.mean(axis=0), 0.0, atol=1e-6)
            np.testing.assert_allclose(s1.dataset.std(axis=0), 1.0, atol=1e-6)
        ks = stats.ks_2samp(np.concatenate(causes_linear), np.concatenate(causes_two_var))
        assert ks.pvalue > 0.001

    def test_collider_leaves_parents_independent(self):
        rng = np.random.default_rng(3)
        adj = np.zeros((3, 3), dtype=np.uint8)
        adj[0, 2] = adj[1, 2] = 1
        config = linear_config(10_000, 3)
        sample = gen_linear(Dag(adj), config, rng)
        corr = np.corrcoef(sample.dataset.T)[0, 1]
        assert abs(corr) < 0.05

    def test_cyclic_input_rejected(self):
        # cyclic graphs cannot be represented: Dag construction rejects them
        # before any generator can run
        with pytest.raises(ValidationError):
            Dag([[0, 1], [1, 0]])


class TestGenNeuralNet:
    def test_deterministic_given_stream(self):
        config = linear_config(200, 4)
        config = GeneratorConfig(
            GeneratorTag.NEURAL_NET, 200, graph_spec=config.graph_spec
        )
        graph = chain_dag([0, 1, 2, 3])
        a = gen_neuralnet(graph, config, np.random.default_rng(42))
        b = gen_neuralnet(graph, config, np.random.default_rng(42))
        np.testing.assert_array_equal(a.dataset, b.dataset)

    def test_finite_and_standardized_at_scale(self):
        rng = np.random.default_rng(1)
        spec = GraphDistributionSpec(GraphFamily.ERDOS_RENYI, 20, expected_edges=40.0)
        config = GeneratorConfig(GeneratorTag.NEURAL_NET, 1000, graph_spec=spec)
        from bcnp.graphs import sample_er_graph

        sample = gen_neuralnet(sample_er_graph(spec, rng), config, rng)
        assert np.isfinite(sample.dataset).all()
        np.testing.assert_allclose(sample.dataset.mean(axis=0), 0.0, atol=1e-8)
        np.testing.assert_allclose(sample.dataset.std(axis=0), 1.0, atol=1e-8)

    def test_degenerate_network_constant_column(self):
        config = GeneratorConfig(
            GeneratorTag.NEURAL_NET,
            50,
            graph_spec=GraphDistributionSpec(GraphFamily.ERDOS_RENYI, 1, expected_edges=0.0),
            standardize=False,
        )

        def zero_params(dims, rng):
            params = []
            for fan_in, fan_out in zip(dims[:-1], dims[1:]):
                params.append((np.zeros((fan_in, fan_out)), np.zeros(fan_out)))
            w, b = params[-1]
            params[-1] = (w, b + 7.0)  # output bias only
            return params

        sample = gen_neuralnet(
            Dag(np.zeros((1, 1), dtype=int)), config, np.random.default_rng(0), zero_params
        )
        np.testing.assert_array_equal(sample.dataset, np.full((50, 1), 7.0))


class TestGenGpcde:
    def test_kernel_diagonal_is_one(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=(32, 3))
        k = exponential_gamma_kernel(z, 0.7, np.array([0.5, 1.0, 2.0]))
        np.testing.assert_allclose(np.diag(k), 1.0)

    def test_kernel_psd_on_random_inputs(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            z = rng.normal(size=(64, int(rng.integers(1, 4))))
            gamma = rng.uniform(0.1, 1.0)
            lam = rng.lognormal(-1.0, 1.0, size=z.shape[1])
            k = exponential_gamma_kernel(z, gamma, lam)
            min_eig = np.linalg.eigvalsh(k).min()
            assert min_eig >= -1e-8

    def test_smooth_regime_autocorrelation(self):
        # the smooth end of the exponent range with a generous lengthscale
        # concentrates the GP on slowly varying functions: adjacent
        # (sorted-input) values stay correlated
        rng = np.random.default_rng(2)
        z = np.sort(rng.normal(size=200))[:, None]
        k = exponential_gamma_kernel(z, 1.0, np.array([2.0]))
        chol = np.linalg.cholesky(k + 1e-4 * np.eye(200))
        acs = []
        for _ in range(20):
            f = chol @ rng.standard_normal(200)
            f = f - f.mean()
            acs.append((f[:-1] * f[1:]).sum() / (f * f).sum())
        assert np.mean(acs) > 0.9

    def test_output_standardized(self):
        rng = np.random.default_rng(3)
        spec = GraphDistributionSpec(GraphFamily.ERDOS_RENYI, 4, expected_edges=4.0)
        config = GeneratorConfig(GeneratorTag.GPCDE, 128, graph_spec=spec)
        from bcnp.graphs import sample_er_graph

        sample = gen_gpcde(sample_er_graph(spec, rng), config, rng)
        np.testing.assert_allclose(sample.dataset.std(axis=0), 1.0, atol=1e-8)

    def test_sample_budget_guard(self):
        spec = GraphDistributionSpec(GraphFamily.ERDOS_RENYI, 2, expected_edges=1.0)
        config = GeneratorConfig(GeneratorTag.GPCDE, 6000, graph_spec=spec)
        with pytest.raises(ValidationError):
            gen_gpcde(chain_dag([0, 1]), config, np.random.default_rng(0))


class TestRelabelingInvariance:
    @pytest.mark.parametrize("maker", ["linear", "neuralnet"])
    def test_chain_relabeling_permutes_columns(self, maker):
        # chains have a unique topological order, so regenerating the
        # relabeled graph from the same stream must relabel the columns
        n = 64
        base_order = [0, 1, 2, 3]
        relabel = {0: 2, 1: 0, 2: 3, 3: 1}
        new_order = [relabel[v] for v in base_order]
        config = linear_config(n, 4, standardize=False)
        if maker == "neuralnet":
            config = GeneratorConfig(
                GeneratorTag.NEURAL_NET, n, graph_spec=config.graph_spec, standardize=False
            )
            gen = gen_neuralnet
        else:
            gen = gen_linear
        a = gen(chain_dag(base_order), config, np.random.default_rng(9))
        b = gen(chain_dag(new_order), config, np.random.default_rng(9))
        for old, new in relabel.items():
            np.testing.assert_array_equal(a.dataset[:, old], b.dataset[:, new])


class TestGenerateCorpus:
    def test_bit_identical_reruns(self):
        config = linear_config(50, 3)
        a = list(generate_corpus(config, 5, master_seed=123))
        b = list(generate_corpus(config, 5, master_seed=123))
        for s1, s2 in zip(a, b):
            np.testing.assert_array_equal(s1.dataset, s2.dataset)
            assert s1.graph == s2.graph
            assert s1.seed == s2.seed

    def test_seed_changes_output(self):
        config = linear_config(50, 3)
        a = next(iter(generate_corpus(config, 1, master_seed=1)))
        b = next(iter(generate_corpus(config, 1, master_seed=2)))
        assert not np.array_equal(a.dataset, b.dataset)

    def test_records_are_independent_streams(self):
        config = linear_config(50, 3)
        full = list(generate_corpus(config, 3, master_seed=7))
        # regenerating only record 2 reproduces it without records 0-1
        from bcnp.datagen import _record_rng, generate_sample

        solo = generate_sample(config, _record_rng(7, 2), seed=2)
        np.testing.assert_array_equal(full[2].dataset, solo.dataset)

    def test_error_carries_record_index(self):
        spec = GraphDistributionSpec(GraphFamily.ERDOS_RENYI, 3, expected_edges=2.0)
        config = GeneratorConfig(
            GeneratorTag.CONJUGATE_LINEAR, 20, graph_spec=spec, standardize=True
        )
        with pytest.raises(ValidationError, match="record 0"):
            list(generate_corpus(config, 1, master_seed=0))

    def test_count_validation(self):
        with pytest.raises(ValidationError):
            list(generate_corpus(linear_config(10, 2), 0, master_seed=0))

    def test_conjugate_corpus(self):
        spec = GraphDistributionSpec(GraphFamily.ERDOS_RENYI, 3, expected_edges=2.0)
        config = GeneratorConfig(
            GeneratorTag.CONJUGATE_LINEAR, 30, graph_spec=spec, standardize=False
        )
        samples = list(generate_corpus(config, 4, master_seed=11))
        assert all(s.generator_tag is GeneratorTag.CONJUGATE_LINEAR for s in samples)
        assert all(s.dataset.shape == (30, 3) for s in samples)


class TestScmSample:
    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            ScmSample(np.zeros((10, 3)), Dag(np.zeros((2, 2), dtype=int)), GeneratorTag.LINEAR)

    def test_nonfinite_rejected(self):
        data = np.zeros((5, 2))
        data[0, 0] = np.inf
        with pytest.raises(ValidationError):
            ScmSample(data, Dag(np.zeros((2, 2), dtype=int)), GeneratorTag.LINEAR)
