import numpy as np
from unittest.mock import patch
from django.test import TestCase

from clustering.exceptions import InvalidArgument, NonMonotoneFusion, NumericalFailure
from clustering.generators import GeneratorSpec, generate, meta_labels
from clustering.graphs import GraphSpec, WeightKind, build_full, build_graph, hierarchy_weights
from clustering.path import ClusterPath, GridSpec, Snapshot, compress, compute_path, detect_fusions, \
    extract_dendrogram, gamma_max, path_deviation
from clustering.problem import ClusteringProblem, DataMatrix, Partition, SolverState, WeightGraph, objective_value
from clustering.selection import adjusted_rand_index
from clustering.solvers.abstracts import SolverConfig
from clustering.solvers.solver_factories import solve

PRECISE = SolverConfig(gap_tolerance=1e-13, max_iterations=200000)


def two_points() -> tuple:
    return DataMatrix([[0.0, 4.0]]), WeightGraph(2, [(0, 1, 1.0)])


def fixed_state(U, edges: int) -> SolverState:
    U = np.asarray(U, dtype=float)
    zeros = np.zeros((U.shape[0], edges))
    return SolverState(U=U, V=zeros, Z=zeros, iterations=0, primal_residual=0.0, dual_residual=0.0,
                       duality_gap=0.0, converged=True, method='ama', gamma=1.0)


def snapshot(gamma: float, labels) -> Snapshot:
    labels = np.asarray(labels)
    return Snapshot(gamma, Partition(labels), np.zeros((1, labels.max() + 1)), np.zeros((1, labels.size)), 0.0)


def half_moons_graph(weights: str):
    data, labels = generate(GeneratorSpec('half_moons', seed=0))
    graph = build_graph(data, GraphSpec('mst_plus_knn', k=3, weights=WeightKind.parse(weights)))
    return data, labels, graph


def recovers_moons(path: ClusterPath, labels) -> bool:
    return any(s.K == 2 and adjusted_rand_index(s.partition.labels, labels) == 1.0 for s in path)


class TestFusions(TestCase):
    def test_components_of_coincident_centroids(self):
        graph = WeightGraph(3, [(0, 1, 1.0), (1, 2, 1.0)])
        partition = detect_fusions(fixed_state([[0.0, 0.0, 5.0]], 2), graph)
        np.testing.assert_array_equal(partition.labels, [0, 0, 1])

    def test_tolerance_is_relative_to_scale(self):
        graph = WeightGraph(2, [(0, 1, 1.0)])
        state = fixed_state([[0.0, 1e-3]], 1)
        state = SolverState(U=state.U, V=np.ones((1, 1)), Z=state.Z, iterations=0, primal_residual=0.0,
                            dual_residual=0.0, duality_gap=0.0, converged=True, method='ama', gamma=1.0)
        self.assertEqual(detect_fusions(state, graph, tolerance=1e-6, scale=1.0).K, 2)
        self.assertEqual(detect_fusions(state, graph, tolerance=1e-6, scale=1e4).K, 1)

    def test_exact_zero_split_fuses(self):
        graph = WeightGraph(2, [(0, 1, 1.0)])
        self.assertEqual(detect_fusions(fixed_state([[0.0, 1.0]], 1), graph).K, 1)


class TestCompression(TestCase):
    def setUp(self):
        data = DataMatrix([[0.0, 2.0, 10.0]])
        self.problem = ClusteringProblem(data, WeightGraph(3, [(0, 1, 1.0), (1, 2, 2.0), (0, 2, 3.0)]), 0.7)

    def test_blocks(self):
        compressed = compress(self.problem, Partition([0, 0, 1]))
        self.assertEqual(compressed.K, 2)
        np.testing.assert_array_equal(compressed.sizes, [2.0, 1.0])
        np.testing.assert_array_equal(compressed.means, [[1.0, 10.0]])
        self.assertEqual(compressed.problem.graph.edges, [(0, 1, 5.0)])
        self.assertAlmostEqual(compressed.constant, 1.0)

    def test_identity_partition(self):
        compressed = compress(self.problem, Partition([0, 1, 2]))
        self.assertEqual(compressed.problem.graph, self.problem.graph)
        np.testing.assert_array_equal(compressed.means, self.problem.data.values)
        self.assertEqual(compressed.constant, 0.0)

    def test_single_block(self):
        compressed = compress(self.problem, Partition([0, 0, 0]))
        self.assertEqual(compressed.problem.graph.edge_count, 0)
        np.testing.assert_allclose(compressed.means, [[4.0]])

    def test_objective_consistency(self):
        compressed = compress(self.problem, Partition([0, 0, 1]))
        rng = np.random.default_rng(0)
        for _ in range(5):
            blocks = rng.standard_normal((1, 2)) * 5
            full = objective_value(self.problem, compressed.broadcast(blocks))
            reduced = objective_value(compressed.problem, blocks) + compressed.constant
            self.assertAlmostEqual(full, reduced, delta=1e-9 * max(1.0, abs(full)))

    def test_fused_pairs_reproduce_full_solution(self):
        # pairs fuse at gamma = 0.2 while the blocks stay apart
        data = DataMatrix([[0.0, 0.2, 10.0, 10.2]])
        graph = build_full(data)
        problem = ClusteringProblem(data, graph, 0.2)
        compressed = compress(problem, Partition([0, 0, 1, 1]))
        full = solve(problem, PRECISE).U
        reduced = compressed.broadcast(solve(compressed.problem, PRECISE).U)
        np.testing.assert_allclose(reduced, [[0.5, 0.5, 9.7, 9.7]], atol=1e-8)
        np.testing.assert_allclose(full, reduced, atol=1e-6)


class TestGrid(TestCase):
    def test_parse_explicit(self):
        self.assertEqual(GridSpec.parse('0.4,0.1,0.2').gammas, (0.1, 0.2, 0.4))

    def test_parse_geometric(self):
        spec = GridSpec.parse('geom:5:0.01')
        np.testing.assert_allclose(spec.resolve(1.0), [0.01, 10 ** -1.5, 0.1, 10 ** -0.5, 1.0])

    def test_parse_errors(self):
        for text in ('a,b', 'geom:x', '-1'):
            with self.assertRaises(InvalidArgument):
                GridSpec.parse(text)

    def test_geometric_needs_top(self):
        with self.assertRaises(InvalidArgument):
            GridSpec(count=3).resolve()

    def test_refined_keeps_points(self):
        coarse = GridSpec(count=3, ratio=0.01, gamma_max=1.0)
        fine = coarse.refined().resolve()
        self.assertEqual(fine.size, 5)
        np.testing.assert_allclose(fine[::2], coarse.resolve())
        explicit = GridSpec(gammas=[0.0, 1.0, 4.0]).refined()
        self.assertEqual(explicit.gammas, (0.0, 1.0, 2.0, 4.0))


class TestExactPath(TestCase):
    def test_zero_grid(self):
        data = DataMatrix(np.random.default_rng(1).standard_normal((2, 6)))
        path = compute_path(data, build_full(data), GridSpec(gammas=[0.0]))
        self.assertEqual(path.cluster_counts, [6])
        np.testing.assert_allclose(path.snapshots[0].U, data.values)

    def test_two_points_fuse_at_half_distance(self):
        data, graph = two_points()
        path = compute_path(data, graph, GridSpec(gammas=[1.0, 1.9, 2.1, 3.0]))
        self.assertEqual(path.cluster_counts, [2, 2, 1, 1])
        np.testing.assert_allclose(path.snapshots[0].U, [[1.0, 3.0]], atol=1e-6)
        np.testing.assert_allclose(path.snapshots[-1].centroids, [[2.0]], atol=1e-8)

    def test_endpoint_is_the_mean(self):
        data, labels = generate(GeneratorSpec('hierarchy_5x5', seed=3))
        graph = build_graph(data, GraphSpec('mst_plus_knn', k=3, weights=WeightKind('gaussian')))
        path = compute_path(data, graph, GridSpec(count=20))
        last = path.snapshots[-1]
        self.assertEqual(last.K, 1)
        np.testing.assert_allclose(last.centroids[:, 0], data.values.mean(axis=1), atol=1e-8)
        self.assertEqual(sorted(path.cluster_counts, reverse=True), path.cluster_counts)

    def test_warm_path_matches_cold_solves(self):
        data = DataMatrix(np.random.default_rng(4).standard_normal((2, 12)))
        graph = build_graph(data, GraphSpec('mst_plus_knn', k=3, weights=WeightKind('gaussian')))
        config = SolverConfig(gap_tolerance=1e-12, max_iterations=200000)
        gammas = [0.05, 0.1, 0.2, 0.4]
        path = compute_path(data, graph, GridSpec(gammas=gammas), config=config)
        for gamma, snap in zip(gammas, path):
            cold = solve(ClusteringProblem(data, graph, gamma), config).U
            np.testing.assert_allclose(snap.U, cold, atol=1e-5)

    def test_refined_grid_keeps_shared_snapshots(self):
        data = DataMatrix(np.random.default_rng(8).standard_normal((2, 12)))
        graph = build_graph(data, GraphSpec('mst_plus_knn', k=3, weights=WeightKind('gaussian')))
        config = SolverConfig(gap_tolerance=1e-12, max_iterations=200000)
        coarse_grid = GridSpec(gammas=np.geomspace(0.02, 2.0, 6))
        coarse = compute_path(data, graph, coarse_grid, config=config)
        fine = compute_path(data, graph, coarse_grid.refined(), config=config)
        self.assertEqual(len(fine), 11)
        shared = {snap.gamma: snap for snap in fine}
        for snap in coarse:
            match = shared[snap.gamma]
            self.assertEqual(match.partition, snap.partition)
            np.testing.assert_allclose(match.U, snap.U, atol=1e-5)
        for earlier, later in zip(fine.snapshots, fine.snapshots[1:]):
            self.assertTrue(earlier.partition.is_refinement_of(later.partition))

    def test_half_moons_tree(self):
        data, labels, graph = half_moons_graph('gaussian')
        self.assertTrue(recovers_moons(compute_path(data, graph, GridSpec(count=100)), labels))

    def test_uniform_weights_miss_the_moons(self):
        data, labels, graph = half_moons_graph('uniform')
        self.assertFalse(recovers_moons(compute_path(data, graph, GridSpec(count=100)), labels))

    def test_solver_failure_truncates(self):
        data, graph = two_points()
        with patch('clustering.path._SolverCache.solve', side_effect=NumericalFailure('diverged', 3)):
            path = compute_path(data, graph, GridSpec(gammas=[1.0, 2.0]))
        self.assertTrue(path.truncated)
        self.assertEqual(len(path), 0)
        self.assertIn('diverged', path.error)

    def test_unknown_mode(self):
        data, graph = two_points()
        with self.assertRaises(InvalidArgument):
            compute_path(data, graph, GridSpec(gammas=[1.0]), mode='sieve')


class TestCarpPath(TestCase):
    def test_one_round_per_point(self):
        data, graph = two_points()
        path = compute_path(data, graph, GridSpec(gammas=[0.5, 1.0, 2.5]), mode='carp')
        self.assertEqual([s.diagnostics['iterations'] for s in path], [1, 1, 1])
        self.assertEqual(path.snapshots[0].diagnostics['method'], 'admm')

    def test_deviation_shrinks_as_grid_refines(self):
        data, _, graph = half_moons_graph('gaussian')
        grid = GridSpec(count=9, ratio=1e-2, gamma_max=gamma_max(data, graph))
        deviations = []
        for _ in range(4):
            exact = compute_path(data, graph, grid, config=SolverConfig(gap_tolerance=1e-10))
            carp = compute_path(data, graph, grid, mode='carp')
            deviations.append(path_deviation(carp, exact))
            grid = grid.refined()
        for coarse, fine in zip(deviations, deviations[1:]):
            self.assertLess(fine, coarse)


class TestGammaMax(TestCase):
    def test_two_points(self):
        data, graph = two_points()
        value = gamma_max(data, graph)
        self.assertGreaterEqual(value, 2.0)
        self.assertLess(value, 4.0)

    def test_single_point(self):
        self.assertEqual(gamma_max(DataMatrix([[1.0]]), WeightGraph(1)), 0.0)

    def test_disconnected_takes_largest_component(self):
        data = DataMatrix([[0.0, 4.0, 100.0, 102.0]])
        graph = WeightGraph(4, [(0, 1, 1.0), (2, 3, 1.0)])
        with self.assertLogs('clustering', level='WARNING'):
            value = gamma_max(data, graph)
        self.assertGreaterEqual(value, 2.0)
        self.assertLess(value, 4.0)


class TestDendrogram(TestCase):
    def test_two_points(self):
        data, graph = two_points()
        dendrogram = extract_dendrogram(compute_path(data, graph, GridSpec(gammas=[1.0, 3.0])))
        self.assertEqual(dendrogram.heights, [3.0])
        self.assertEqual(dendrogram.roots, [2])
        self.assertEqual(dendrogram.newick('%g'), '(0:3,1:3);')
        self.assertEqual(dendrogram.to_json(), {
            'node': 2, 'height': 3.0,
            'children': [{'node': 0, 'height': 0.0, 'children': []}, {'node': 1, 'height': 0.0, 'children': []}],
        })
        np.testing.assert_array_equal(dendrogram.linkage_matrix(), [[0.0, 1.0, 3.0, 2.0]])

    def test_forest(self):
        data = DataMatrix([[0.0, 1.0, 50.0, 51.0, 100.0, 101.0]])
        graph = WeightGraph(6, [(0, 1, 1.0), (2, 3, 1.0), (4, 5, 1.0)])
        path = compute_path(data, graph, GridSpec(gammas=[0.1, 5.0]))
        dendrogram = extract_dendrogram(path)
        self.assertEqual(len(dendrogram.roots), 3)
        self.assertEqual(len(dendrogram.to_json()), 3)
        self.assertEqual(len(dendrogram.newick().splitlines()), 3)
        with self.assertRaises(InvalidArgument):
            dendrogram.linkage_matrix()

    def test_multiway_merge_is_a_tie(self):
        data = DataMatrix([[0.0, 1.0, 2.0]])
        path = ClusterPath(data, WeightGraph(3), 'exact', [snapshot(1.0, [0, 0, 0])])
        dendrogram = extract_dendrogram(path)
        self.assertEqual(dendrogram.heights, [1.0, 1.0])
        self.assertEqual([(m.left, m.right) for m in dendrogram.merges], [(0, 1), (3, 2)])
        self.assertEqual(dendrogram.leaves(4), [0, 1, 2])

    def test_rank_heights(self):
        data = DataMatrix([[0.0, 1.0, 5.0]])
        path = ClusterPath(data, WeightGraph(3), 'exact', [snapshot(0.5, [0, 0, 1]), snapshot(7.0, [0, 0, 0])])
        self.assertEqual(extract_dendrogram(path, 'rank').heights, [1.0, 2.0])
        self.assertEqual(extract_dendrogram(path).fusion_gammas, [0.5, 7.0])

    def test_split_is_reported(self):
        data = DataMatrix([[0.0, 1.0, 5.0]])
        path = ClusterPath(data, WeightGraph(3), 'exact', [snapshot(1.0, [0, 0, 1]), snapshot(2.0, [0, 1, 2])])
        with self.assertRaises(NonMonotoneFusion) as raised:
            extract_dendrogram(path)
        self.assertEqual(raised.exception.gammas, (1.0, 2.0))

    def test_hierarchy_ordering(self):
        data, labels = generate(GeneratorSpec('hierarchy_5x5', seed=0))
        graph = hierarchy_weights(labels, meta_labels(labels))
        dendrogram = extract_dendrogram(compute_path(data, graph, GridSpec(count=60)))
        self.assertEqual(len(dendrogram.merges), 24)
        within, super_clusters, final = [], [], []
        for merge in dendrogram.merges:
            members = dendrogram.leaves(merge.node)
            if len(set(labels[members])) == 1:
                within.append(merge.height)
            elif len(set(meta_labels(labels)[members])) == 1:
                super_clusters.append(merge.height)
            else:
                final.append(merge.height)
        self.assertEqual((len(within), len(super_clusters), len(final)), (20, 3, 1))
        self.assertLess(max(within), min(super_clusters))
        self.assertLess(max(super_clusters), final[0])
        self.assertEqual(sorted(dendrogram.heights), dendrogram.heights)
