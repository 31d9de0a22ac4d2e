import os
import tempfile

import numpy as np
from django.test import TestCase
from scipy.sparse.csgraph import minimum_spanning_tree

from clustering.exceptions import InvalidArgument, InvariantViolation, ParseError
from clustering.graphs import GraphSpec, WeightKind, assign_weights, build_dmsts, build_full, build_graph, \
    build_knn, build_mst, build_mst_plus_knn, dmst_trees, hierarchy_weights, local_scales, read_edges, write_edges
from clustering.problem import DataMatrix, WeightGraph


def line_data(*positions) -> DataMatrix:
    return DataMatrix([list(positions)])


def unit_pairs(graph: WeightGraph) -> list:
    return [(i, j) for i, j, _ in graph.edges]


def edge_lengths_of(graph: WeightGraph, data: DataMatrix) -> np.ndarray:
    return np.linalg.norm(data.values[:, graph.heads] - data.values[:, graph.tails], axis=0)


def tree_length(graph: WeightGraph, data: DataMatrix) -> float:
    return float(edge_lengths_of(graph, data).sum())


class TestTopologies(TestCase):
    def test_mst_on_a_line(self):
        graph = build_mst(line_data(0.0, 1.0, 3.0))
        self.assertEqual(unit_pairs(graph), [(0, 1), (1, 2)])
        self.assertEqual(graph.provenance, 'mst')

    def test_mst_of_single_point(self):
        self.assertEqual(build_mst(line_data(2.0)).edge_count, 0)

    def test_mst_spans(self):
        rng = np.random.default_rng(11)
        graph = build_mst(DataMatrix(rng.standard_normal((3, 30))))
        self.assertEqual(graph.edge_count, 29)
        self.assertTrue(graph.is_connected)

    def test_mst_shorter_than_random_trees(self):
        rng = np.random.default_rng(13)
        data = DataMatrix(rng.standard_normal((2, 25)))
        shortest = tree_length(build_mst(data), data)
        for _ in range(100):
            random_weights = np.triu(rng.uniform(0.1, 1.0, size=(25, 25)), k=1)
            heads, tails = minimum_spanning_tree(random_weights).nonzero()
            tree = WeightGraph.from_arrays(25, heads, tails, np.ones(heads.size))
            self.assertTrue(tree.is_connected)
            self.assertLessEqual(shortest, tree_length(tree, data) + 1e-12)

    def test_knn_k1(self):
        self.assertEqual(unit_pairs(build_knn(line_data(0.0, 1.0, 3.0), 1)), [(0, 1), (1, 2)])

    def test_knn_symmetrised(self):
        # 3 picks 2 but 2 picks 1
        graph = build_knn(line_data(0.0, 1.0, 1.5, 10.0), 1)
        self.assertEqual(unit_pairs(graph), [(0, 1), (1, 2), (2, 3)])

    def test_knn_out_of_range(self):
        with self.assertRaises(InvalidArgument):
            build_knn(line_data(0.0, 1.0, 3.0), 3)
        with self.assertRaises(InvalidArgument):
            build_knn(line_data(0.0, 1.0, 3.0), 0)

    def test_mst_plus_knn_connected(self):
        data = line_data(0.0, 0.1, 0.2, 50.0, 50.1, 50.2)
        self.assertFalse(build_knn(data, 1).is_connected)
        graph = build_mst_plus_knn(data, 1)
        self.assertTrue(graph.is_connected)
        self.assertIn((2, 3), graph.pairs)

    def test_dmsts_two_trees(self):
        data = line_data(0.0, 1.0, 3.0, 7.0)
        trees = dmst_trees(data, 2)
        self.assertEqual(len(trees), 2)
        self.assertEqual(trees[0], [(0, 1), (1, 2), (2, 3)])
        self.assertFalse(set(trees[0]) & set(trees[1]))
        self.assertEqual(build_dmsts(data, 2).edge_count, 6)

    def test_dmsts_stops_when_exhausted(self):
        data = line_data(0.0, 1.0, 3.0)
        with self.assertLogs('clustering', level='WARNING'):
            trees = dmst_trees(data, 3)
        self.assertEqual(len(trees), 1)

    def test_full(self):
        graph = build_full(line_data(0.0, 1.0, 3.0, 7.0))
        self.assertEqual(graph.edge_count, 6)
        self.assertEqual(graph.provenance, 'full')


class TestWeights(TestCase):
    def test_uniform(self):
        graph = assign_weights(build_full(line_data(0.0, 4.0)), line_data(0.0, 4.0), WeightKind('uniform'))
        np.testing.assert_array_equal(graph.weights, [1.0])

    def test_inverse_euclidean(self):
        data = line_data(0.0, 4.0)
        graph = assign_weights(build_full(data), data, WeightKind('inverse_euclidean'))
        self.assertAlmostEqual(float(graph.weights[0]), 0.25)

    def test_gaussian_two_points(self):
        # the single neighbour sets sigma to the distance itself
        data = line_data(0.0, 4.0)
        graph = assign_weights(build_full(data), data, WeightKind('gaussian'))
        self.assertAlmostEqual(float(graph.weights[0]), np.exp(-1.0))

    def test_convex_combo_endpoints(self):
        data = line_data(0.0, 1.0, 5.0)
        full = build_full(data)
        flat = assign_weights(full, data, WeightKind('convex_combo', alpha=0.0))
        np.testing.assert_array_equal(flat.weights, np.ones(3))
        gaussian = assign_weights(full, data, WeightKind('gaussian'))
        combo = assign_weights(full, data, WeightKind('convex_combo', alpha=1.0))
        np.testing.assert_allclose(combo.weights, gaussian.weights)

    def test_weights_positive_in_far_tail(self):
        data = line_data(0.0, 0.001, 1000.0)
        graph = assign_weights(build_full(data), data, WeightKind('gaussian', local_scale_neighbors=1))
        self.assertTrue(np.all(graph.weights > 0))

    def test_gaussian_weights_in_unit_interval(self):
        rng = np.random.default_rng(14)
        for scale in (1e-3, 1.0, 1e3):
            data = DataMatrix(scale * rng.standard_normal((3, 20)))
            weights = assign_weights(build_full(data), data, WeightKind('gaussian')).weights
            self.assertTrue(np.all(weights > 0))
            self.assertTrue(np.all(weights <= 1))

    def test_inverse_euclidean_decreases_with_distance(self):
        data = DataMatrix(np.random.default_rng(15).standard_normal((2, 15)))
        graph = assign_weights(build_full(data), data, WeightKind('inverse_euclidean'))
        order = np.argsort(edge_lengths_of(graph, data))
        self.assertTrue(np.all(np.diff(graph.weights[order]) < 0))

    def test_weights_follow_point_permutation(self):
        rng = np.random.default_rng(16)
        data = DataMatrix(rng.standard_normal((2, 18)))
        graph = build_mst_plus_knn(data, 3)
        permutation = rng.permutation(18)
        position = np.argsort(permutation)
        moved = DataMatrix(data.values[:, permutation])
        moved_graph = WeightGraph.from_arrays(18, position[graph.heads], position[graph.tails],
                                              np.ones(graph.edge_count))
        for kind in (WeightKind('uniform'), WeightKind('inverse_euclidean'), WeightKind('gaussian'),
                     WeightKind('convex_combo', alpha=0.5)):
            original = assign_weights(graph, data, kind)
            permuted = assign_weights(moved_graph, moved, kind)
            expected = {(i, j): w for i, j, w in original.edges}
            for i, j, w in permuted.edges:
                head, tail = sorted((permutation[i], permutation[j]))
                self.assertAlmostEqual(w, expected[(head, tail)], places=12)

    def test_duplicates_rejected(self):
        data = line_data(1.0, 1.0, 2.0)
        with self.assertRaises(InvariantViolation):
            assign_weights(build_full(data), data, WeightKind('uniform'))

    def test_local_scales(self):
        scales = local_scales(line_data(0.0, 1.0, 3.0), neighbors=1)
        np.testing.assert_array_equal(scales, [1.0, 1.0, 2.0])

    def test_hierarchy_weights(self):
        graph = hierarchy_weights([0, 0, 1], [0, 0, 0])
        self.assertEqual(graph.edges, [(0, 1, 10.0), (0, 2, 1.0), (1, 2, 1.0)])
        graph = hierarchy_weights([0, 1, 2], [0, 0, 1])
        self.assertEqual(graph.edges, [(0, 1, 1.0), (0, 2, 0.1), (1, 2, 0.1)])

    def test_hierarchy_levels_checked(self):
        with self.assertRaises(InvalidArgument):
            hierarchy_weights([0, 1], [0, 0], levels=(1.0, 0.0, 1.0))


class TestSpecifications(TestCase):
    def test_graph_parse(self):
        spec = GraphSpec.parse('mst+knn:5')
        self.assertEqual(spec.method, 'mst_plus_knn')
        self.assertEqual(spec.k, 5)
        self.assertEqual(spec.describe(), 'mst+knn:5')
        self.assertEqual(GraphSpec.parse('dmsts:2').M, 2)
        self.assertEqual(GraphSpec.parse('full').method, 'full')

    def test_graph_parse_errors(self):
        for text in ('knn:x', 'mst:3', 'ring'):
            with self.assertRaises(InvalidArgument):
                GraphSpec.parse(text)

    def test_weight_parse(self):
        kind = WeightKind.parse('convex_combo:0.5:4')
        self.assertEqual((kind.kind, kind.alpha, kind.local_scale_neighbors), ('convex_combo', 0.5, 4))
        self.assertEqual(WeightKind.parse('gaussian:7').local_scale_neighbors, 7)
        self.assertEqual(WeightKind.parse('uniform').kind, 'uniform')

    def test_weight_parse_errors(self):
        for text in ('convex_combo', 'convex_combo:2', 'uniform:3', 'cosine'):
            with self.assertRaises(InvalidArgument):
                WeightKind.parse(text)

    def test_build_graph_warns_when_disconnected(self):
        data = line_data(0.0, 0.1, 50.0, 50.1)
        with self.assertLogs('clustering', level='WARNING'):
            graph = build_graph(data, GraphSpec('knn', k=1, weights=WeightKind('uniform')))
        self.assertFalse(graph.is_connected)


class TestEdgeFiles(TestCase):
    def test_edges_survive_csv(self):
        data = DataMatrix(np.random.default_rng(5).standard_normal((2, 12)))
        graph = build_graph(data, GraphSpec('mst_plus_knn', k=3, weights=WeightKind('gaussian')))
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'edges.csv')
            write_edges(graph, path)
            self.assertEqual(read_edges(path, n=12), graph)

    def test_bad_header(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'edges.csv')
            with open(path, 'w') as file:
                file.write('a,b,c\n0,1,1.0\n')
            with self.assertRaises(ParseError):
                read_edges(path)
