import numpy as np
from django.test import TestCase

from clustering.exceptions import InvalidArgument, PreconditionViolation, StructuralError
from clustering.generators import GeneratorSpec, cube_half_edges, generate
from clustering.graphs import WeightKind, assign_weights, build_full, build_graph, GraphSpec
from clustering.problem import DataMatrix, Partition, WeightGraph
from clustering.theory import RecoveryInterval, lipschitz_harness, panahi_interval, partition_geometry, \
    random_graph, sun_interval, verify_recovery, zhu_size_prefactors, zhu_two_cubes


def circle(centre, count: int = 10, radius: float = 0.5) -> np.ndarray:
    angles = 2 * np.pi * np.arange(count) / count
    return np.stack([centre[0] + radius * np.cos(angles), centre[1] + radius * np.sin(angles)])


def two_circles(separation: float = 100.0):
    data = DataMatrix(np.hstack([circle((0.0, 0.0)), circle((separation, 0.0))]))
    return data, Partition(np.repeat([0, 1], 10))


def two_segments():
    """
    Two vertical rows of ten unit-spaced points, twelve apart
    """
    heights = np.arange(10.0)
    data = DataMatrix(np.hstack([np.stack([np.zeros(10), heights]), np.stack([np.full(10, 12.0), heights])]))
    return data, Partition(np.repeat([0, 1], 10))


def weighted_full(data: DataMatrix, kind: WeightKind) -> WeightGraph:
    return assign_weights(build_full(data), data, kind)


def sun_for_alpha(alpha: float) -> RecoveryInterval:
    data, partition = two_segments()
    graph = weighted_full(data, WeightKind('convex_combo', local_scale_neighbors=9, alpha=alpha))
    return sun_interval(partition_geometry(data, partition), graph, partition)


class TestGeometry(TestCase):
    def test_line(self):
        geometry = partition_geometry(DataMatrix([[0.0, 1.0, 4.0]]), Partition([0, 0, 1]))
        np.testing.assert_array_equal(geometry.diameters, [1.0, 0.0])
        np.testing.assert_array_equal(geometry.distances, [[0.0, 3.0], [3.0, 0.0]])
        np.testing.assert_array_equal(geometry.means, [[0.5, 4.0]])
        np.testing.assert_array_equal(geometry.sizes, [2, 1])
        self.assertEqual(geometry.K, 2)

    def test_size_mismatch(self):
        with self.assertRaises(StructuralError):
            partition_geometry(DataMatrix([[0.0, 1.0]]), Partition([0, 0, 1]))


class TestRecoveryInterval(TestCase):
    def test_feasibility(self):
        self.assertTrue(RecoveryInterval(0.1, 2.5, 'panahi_uniform').feasible)
        self.assertFalse(RecoveryInterval(2.5, 0.1, 'panahi_uniform').feasible)
        self.assertFalse(RecoveryInterval(np.inf, None, 'sun_weighted').feasible)
        self.assertTrue(RecoveryInterval(1.0, None, 'sun_weighted').unbounded)

    def test_validation(self):
        with self.assertRaises(InvalidArgument):
            RecoveryInterval(0.1, 1.0, 'hocking')
        with self.assertRaises(InvalidArgument):
            RecoveryInterval(-0.1, 1.0, 'panahi_uniform')

    def test_samples_inside(self):
        interval = RecoveryInterval(0.1, 2.5, 'panahi_uniform')
        gammas = interval.sample(5)
        self.assertEqual(gammas.size, 5)
        self.assertTrue(np.all(gammas > 0.1) and np.all(gammas < 2.5))
        self.assertAlmostEqual(float(gammas[2]), 0.5)
        self.assertTrue(np.all(np.diff(gammas) > 0))

    def test_samples_of_unbounded(self):
        gammas = RecoveryInterval(2.0, None, 'sun_weighted').sample(3)
        self.assertTrue(np.all(gammas > 2.0) and np.all(gammas < 2000.0))

    def test_infeasible_cannot_be_sampled(self):
        with self.assertRaises(InvalidArgument):
            RecoveryInterval(3.0, 1.0, 'panahi_uniform').sample()


class TestPanahi(TestCase):
    def test_line(self):
        interval = panahi_interval(partition_geometry(DataMatrix([[0.0, 1.0, 4.0]]), Partition([0, 0, 1])), 3)
        self.assertAlmostEqual(interval.lower, 0.5)
        self.assertAlmostEqual(interval.upper, 3.5 / 6.0)

    def test_two_singletons(self):
        interval = panahi_interval(partition_geometry(DataMatrix([[0.0, 4.0]]), Partition([0, 1])), 2)
        self.assertEqual((interval.lower, interval.upper), (0.0, 1.0))

    def test_needs_two_clusters(self):
        with self.assertRaises(PreconditionViolation):
            panahi_interval(partition_geometry(DataMatrix([[0.0, 4.0]]), Partition([0, 0])), 2)

    def test_scale_equivariant(self):
        data, partition = two_circles()
        interval = panahi_interval(partition_geometry(data, partition), 20)
        scaled = panahi_interval(partition_geometry(DataMatrix(3.0 * data.values), partition), 20)
        self.assertAlmostEqual(scaled.lower, 3.0 * interval.lower)
        self.assertAlmostEqual(scaled.upper, 3.0 * interval.upper)

    def test_two_circles_recovered(self):
        data, partition = two_circles()
        interval = panahi_interval(partition_geometry(data, partition), data.n)
        self.assertAlmostEqual(interval.lower, 0.1)
        self.assertAlmostEqual(interval.upper, 2.5)
        report = verify_recovery(data, partition, weighted_full(data, WeightKind('uniform')), interval)
        self.assertEqual(report['recovered'], [True] * 5)
        self.assertEqual(report['pass_rate'], 1.0)
        self.assertLessEqual(report['empirical_lower'], interval.lower)
        self.assertGreaterEqual(report['empirical_upper'], interval.upper)

    def test_infeasible_interval_rejected(self):
        data, partition = two_circles(separation=1.5)
        interval = panahi_interval(partition_geometry(data, partition), data.n)
        self.assertFalse(interval.feasible)
        with self.assertRaises(InvalidArgument):
            verify_recovery(data, partition, weighted_full(data, WeightKind('uniform')), interval)


class TestSun(TestCase):
    def test_uniform_complete_graph_relation(self):
        data, partition = two_circles()
        geometry = partition_geometry(data, partition)
        uniform = sun_interval(geometry, weighted_full(data, WeightKind('uniform')), partition)
        panahi = panahi_interval(geometry, data.n)
        self.assertAlmostEqual(uniform.lower, panahi.lower)
        # two blocks: (n - n_1) + (n - n_2) = n
        self.assertAlmostEqual(uniform.upper, 2.0 * panahi.upper)

    def test_unequal_blocks_factor(self):
        data = DataMatrix([[0.0, 0.5, 1.0, 20.0, 40.0]])
        partition = Partition([0, 0, 0, 1, 2])
        geometry = partition_geometry(data, partition)
        sun = sun_interval(geometry, weighted_full(data, WeightKind('uniform')), partition)
        n = 5
        expected = min(np.linalg.norm(geometry.means[:, k] - geometry.means[:, l])
                       / ((n - geometry.sizes[k]) + (n - geometry.sizes[l]))
                       for k, l in ((0, 1), (0, 2), (1, 2)))
        self.assertAlmostEqual(sun.upper, expected)

    def test_block_only_weights_unbounded(self):
        data, partition = two_circles()
        edges = [(i, j, 1.0) for block in partition.blocks() for a, i in enumerate(block) for j in block[a + 1:]]
        interval = sun_interval(partition_geometry(data, partition), WeightGraph(20, edges), partition)
        self.assertIsNone(interval.upper)
        self.assertAlmostEqual(interval.lower, 0.1)
        self.assertTrue(interval.feasible)

    def test_missing_block_weight(self):
        data = DataMatrix([[0.0, 1.0, 2.0, 10.0]])
        partition = Partition([0, 0, 0, 1])
        graph = WeightGraph(4, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)])
        with self.assertRaises(PreconditionViolation):
            sun_interval(partition_geometry(data, partition), graph, partition)

    def test_nonpositive_denominator_is_infeasible(self):
        data = DataMatrix([[0.0, 1.0, 10.0]])
        partition = Partition([0, 0, 1])
        # node 0 pulled much harder toward the other block than node 1
        graph = WeightGraph(3, [(0, 1, 0.1), (0, 2, 5.0), (1, 2, 0.1)])
        with self.assertLogs('clustering', level='WARNING'):
            interval = sun_interval(partition_geometry(data, partition), graph, partition)
        self.assertEqual(interval.lower, np.inf)
        self.assertFalse(interval.feasible)

    def test_alpha_sweep(self):
        self.assertFalse(sun_for_alpha(0.0).feasible)
        self.assertFalse(sun_for_alpha(0.7).feasible)
        self.assertTrue(sun_for_alpha(1.0).feasible)

    def test_gaussian_interval_recovered(self):
        data, partition = two_segments()
        graph = weighted_full(data, WeightKind('convex_combo', local_scale_neighbors=9, alpha=1.0))
        interval = sun_interval(partition_geometry(data, partition), graph, partition)
        report = verify_recovery(data, partition, graph, interval)
        self.assertEqual(report['pass_rate'], 1.0)


class TestZhu(TestCase):
    def test_prefactors(self):
        first, second = zhu_size_prefactors(10, 10)
        self.assertAlmostEqual(first, 2.8)
        self.assertAlmostEqual(second, 2.8)
        self.assertEqual(zhu_size_prefactors(1, 5)[0], 1.0)

    def test_interval(self):
        interval = zhu_two_cubes([0.5, 0.5], 10, 10, 2.0)
        self.assertAlmostEqual(interval.lower, 0.14)
        self.assertAlmostEqual(interval.upper, 0.2)
        self.assertTrue(interval.feasible)
        self.assertAlmostEqual(zhu_two_cubes([0.5, 0.5], 10, 10, 4.0).upper, 0.4)

    def test_half_edge_vectors(self):
        spec = GeneratorSpec('two_cubes', params={'half_edge_1': 0.5, 'half_edge_2': 0.5, 'dimension': 2})
        interval = zhu_two_cubes(cube_half_edges(spec), 10, 10, 2.0)
        self.assertAlmostEqual(interval.lower, 2.0 * 2.8 * np.sqrt(0.5) / 20)

    def test_balanced_split_minimises_size(self):
        n = 20
        sizes = {n1: max(zhu_size_prefactors(n1, n - n1)) for n1 in range(2, n - 1)}
        self.assertEqual(min(sizes, key=sizes.get), 10)

    def test_invalid(self):
        with self.assertRaises(InvalidArgument):
            zhu_two_cubes([0.5, 0.5], 0, 10, 2.0)
        with self.assertRaises(InvalidArgument):
            zhu_two_cubes([0.5, 0.5], 10, 10, -1.0)


class TestLipschitz(TestCase):
    def setUp(self):
        self.data = DataMatrix(np.random.default_rng(8).standard_normal((2, 8)))

    def graph(self, weights: str) -> WeightGraph:
        return build_graph(self.data, GraphSpec('mst_plus_knn', k=3, weights=WeightKind.parse(weights)))

    def test_ratio_at_most_one(self):
        """
        Solves stop at a relative gap of 1e-12, which puts each solution within
        about 1e-6 of its optimum; the ratio gets the same slack.
        """
        settings = [('gaussian', 0.05), ('gaussian', 0.5), ('uniform', 0.05), ('uniform', 0.5),
                    ('inverse_euclidean', 0.2)]
        for weights, gamma in settings:
            report = lipschitz_harness(self.data, self.graph(weights), gamma, trials=20, seed=1)
            self.assertEqual(report['trials'], 20)
            self.assertLessEqual(report['max_ratio'], 1.0 + 1e-6)

    def test_zero_perturbation(self):
        report = lipschitz_harness(self.data, self.graph('uniform'), 0.3, trials=3, perturbation_scale=0.0)
        self.assertEqual(report['ratios'], [0.0, 0.0, 0.0])
        self.assertEqual(report['violations'], 0)

    def test_zero_gamma_moves_rigidly(self):
        report = lipschitz_harness(self.data, self.graph('uniform'), 0.0, trials=5)
        np.testing.assert_allclose(report['ratios'], np.ones(5), atol=1e-12)

    def test_full_fusion_contracts(self):
        report = lipschitz_harness(self.data, self.graph('uniform'), 100.0, trials=5)
        self.assertLess(report['max_ratio'], 1.0)

    def test_negative_gamma(self):
        with self.assertRaises(InvalidArgument):
            lipschitz_harness(self.data, self.graph('uniform'), -1.0)


class TestRandomGraph(TestCase):
    def test_edge_count(self):
        graph = random_graph(50, 100, np.random.default_rng(0))
        self.assertEqual(graph.edge_count, 100)

    def test_too_many_edges(self):
        with self.assertRaises(InvalidArgument):
            random_graph(4, 7, np.random.default_rng(0))

    def test_generated_cubes_match_interval_inputs(self):
        data, labels = generate(GeneratorSpec('two_cubes', seed=2))
        self.assertEqual(data.n, 20)
        np.testing.assert_array_equal(np.bincount(labels), [10, 10])
