import numpy as np
from django.test import TestCase

from clustering.exceptions import InvalidArgument, InvariantViolation, ProjectionViolation, StructuralError
from clustering.problem import ClusteringProblem, DataMatrix, Partition, SolverState, WeightGraph, \
    canonical_labels, connected_components, dual_objective_and_gap, merge_duplicates, objective_value, \
    project_dual_ball, prox_group_norm, restrict


def two_point_problem(gamma: float = 1.0, weight: float = 1.0) -> ClusteringProblem:
    return ClusteringProblem(DataMatrix([[0.0, 4.0]]), WeightGraph(2, [(0, 1, weight)]), gamma)


def state_for(problem: ClusteringProblem, U, Z) -> SolverState:
    Z = np.asarray(Z, dtype=float)
    return SolverState(U=U, V=np.zeros_like(Z), Z=Z, iterations=0, primal_residual=0.0, dual_residual=0.0,
                       duality_gap=0.0, converged=True, method='ama', gamma=problem.gamma)


class TestDataMatrix(TestCase):
    def test_vector_becomes_one_feature(self):
        data = DataMatrix([1.0, 2.0, 3.0])
        self.assertEqual(data.p, 1)
        self.assertEqual(data.n, 3)
        self.assertFalse(data.has_missing)

    def test_values_are_read_only(self):
        data = DataMatrix([[1.0, 2.0]])
        with self.assertRaises(ValueError):
            data.values[0, 0] = 5.0

    def test_full_mask_is_dropped(self):
        data = DataMatrix([[1.0, 2.0]], mask=[[True, True]])
        self.assertIsNone(data.mask)

    def test_mask_zeroes_unobserved_entries(self):
        data = DataMatrix([[1.0, np.nan], [3.0, 4.0]], mask=[[True, False], [True, True]])
        self.assertTrue(data.has_missing)
        self.assertEqual(data.values[0, 1], 0.0)
        self.assertEqual(data.entry_weights.sum(), 3.0)

    def test_unobserved_column_rejected(self):
        with self.assertRaises(InvariantViolation):
            DataMatrix([[1.0, 2.0]], mask=[[True, False]])

    def test_non_finite_rejected(self):
        with self.assertRaises(InvariantViolation):
            DataMatrix([[1.0, np.inf]])

    def test_mask_shape_checked(self):
        with self.assertRaises(StructuralError):
            DataMatrix([[1.0, 2.0]], mask=[[True], [False]])

    def test_standardized(self):
        data = DataMatrix([[1.0, 2.0, 3.0], [5.0, 5.0, 5.0]]).standardized()
        self.assertAlmostEqual(float(data.values[0].mean()), 0.0, places=12)
        self.assertAlmostEqual(float(data.values[0].std()), 1.0, places=12)
        np.testing.assert_array_equal(data.values[1], np.zeros(3))

    def test_filled(self):
        data = DataMatrix([[1.0, 0.0], [2.0, 3.0]], mask=[[True, False], [True, True]])
        filled = data.filled(np.array([[9.0, 7.0], [9.0, 9.0]]))
        self.assertFalse(filled.has_missing)
        np.testing.assert_array_equal(filled.values, [[1.0, 7.0], [2.0, 3.0]])


class TestWeightGraph(TestCase):
    def test_edges_canonical_and_sorted(self):
        graph = WeightGraph(3, [(2, 1, 1.0), (1, 0, 2.0)])
        self.assertEqual(graph.edges, [(0, 1, 2.0), (1, 2, 1.0)])

    def test_invalid_edges(self):
        with self.assertRaises(InvariantViolation):
            WeightGraph(2, [(0, 0, 1.0)])
        with self.assertRaises(InvariantViolation):
            WeightGraph(2, [(0, 2, 1.0)])
        with self.assertRaises(InvariantViolation):
            WeightGraph(2, [(0, 1, 0.0)])
        with self.assertRaises(InvariantViolation):
            WeightGraph(2, [(0, 1, 1.0), (1, 0, 2.0)])

    def test_unknown_provenance(self):
        with self.assertRaises(InvalidArgument):
            WeightGraph(2, [(0, 1, 1.0)], 'random')

    def test_subgraph_relabels(self):
        graph = WeightGraph(4, [(0, 1, 1.0), (1, 2, 2.0), (2, 3, 3.0)])
        subgraph = graph.subgraph([1, 2, 3])
        self.assertEqual(subgraph.edges, [(0, 1, 2.0), (1, 2, 3.0)])


class TestObjective(TestCase):
    def test_fit_term_vanishes_at_data(self):
        problem = two_point_problem(gamma=2.0)
        self.assertAlmostEqual(objective_value(problem, problem.data.values), 2.0 * 4.0)

    def test_zero_gamma_at_data(self):
        problem = two_point_problem(gamma=0.0)
        self.assertEqual(objective_value(problem, problem.data.values), 0.0)

    def test_hand_evaluation(self):
        self.assertAlmostEqual(objective_value(two_point_problem(), np.array([[1.0, 3.0]])), 3.0)

    def test_shape_mismatch(self):
        with self.assertRaises(StructuralError):
            objective_value(two_point_problem(), np.zeros((2, 2)))

    def test_multiplicity_weights_fit(self):
        problem = ClusteringProblem(DataMatrix([[0.0, 4.0]]), WeightGraph(2, [(0, 1, 1.0)]), 0.0, [3.0, 1.0])
        self.assertAlmostEqual(objective_value(problem, np.array([[1.0, 4.0]])), 1.5)

    def test_masked_entries_ignored(self):
        data = DataMatrix([[0.0, 4.0], [1.0, 0.0]], mask=[[True, True], [True, False]])
        problem = ClusteringProblem(data, WeightGraph(2), 0.0)
        self.assertEqual(objective_value(problem, np.array([[0.0, 4.0], [1.0, 100.0]])), 0.0)

    def test_negative_gamma(self):
        with self.assertRaises(InvalidArgument):
            two_point_problem(gamma=-1.0)

    def test_strongly_convex(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            n, p = int(rng.integers(2, 9)), int(rng.integers(1, 4))
            data = DataMatrix(rng.standard_normal((p, n)))
            edges = [(i, j, 0.1 + float(rng.random())) for i in range(n) for j in range(i + 1, n)
                     if rng.random() < 0.5]
            problem = ClusteringProblem(data, WeightGraph(n, edges), float(rng.uniform(0.0, 2.0)))
            U, W = rng.standard_normal((p, n)), rng.standard_normal((p, n))
            t = rng.random()
            mixed = objective_value(problem, t * U + (1 - t) * W)
            bound = t * objective_value(problem, U) + (1 - t) * objective_value(problem, W) \
                - 0.5 * t * (1 - t) * np.sum((U - W) ** 2)
            self.assertLessEqual(mixed, bound + 1e-10 * max(1.0, abs(bound)))

    def test_separable_over_components(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            n, p = int(rng.integers(4, 12)), int(rng.integers(1, 4))
            side = rng.random(n) < 0.5
            edges = [(i, j, 0.1 + float(rng.random())) for i in range(n) for j in range(i + 1, n)
                     if side[i] == side[j] and rng.random() < 0.6]
            problem = ClusteringProblem(DataMatrix(rng.standard_normal((p, n))), WeightGraph(n, edges), 0.7)
            U = rng.standard_normal((p, n))
            pieces = [objective_value(restrict(problem, block), U[:, block])
                      for block in connected_components(problem.graph).blocks()]
            self.assertAlmostEqual(objective_value(problem, U), sum(pieces), places=10)


class TestProx(TestCase):
    def test_inside_threshold(self):
        np.testing.assert_array_equal(prox_group_norm([0.3, 0.4], 0.5), [0.0, 0.0])

    def test_zero_threshold(self):
        np.testing.assert_array_equal(prox_group_norm([3.0, 4.0], 0.0), [3.0, 4.0])

    def test_shrinks(self):
        np.testing.assert_allclose(prox_group_norm([3.0, 4.0], 2.5), [1.5, 2.0])

    def test_projection(self):
        np.testing.assert_array_equal(project_dual_ball([0.3, 0.4], 1.0), [0.3, 0.4])
        np.testing.assert_array_equal(project_dual_ball([0.0, 0.0], 1.0), [0.0, 0.0])
        np.testing.assert_allclose(project_dual_ball([3.0, 4.0], 1.0), [0.6, 0.8])

    def test_negative_threshold(self):
        with self.assertRaises(InvalidArgument):
            prox_group_norm([1.0], -1.0)
        with self.assertRaises(InvalidArgument):
            project_dual_ball([1.0], -1.0)

    def test_nonexpansive(self):
        rng = np.random.default_rng(10)
        for _ in range(500):
            size = int(rng.integers(1, 6))
            a, b = rng.standard_normal(size) * 2.0, rng.standard_normal(size) * 2.0
            threshold = float(rng.uniform(0.0, 3.0))
            distance = np.linalg.norm(a - b)
            self.assertLessEqual(np.linalg.norm(prox_group_norm(a, threshold) - prox_group_norm(b, threshold)),
                                 distance + 1e-12)
            self.assertLessEqual(np.linalg.norm(project_dual_ball(a, threshold) - project_dual_ball(b, threshold)),
                                 distance + 1e-12)

    def test_moreau_decomposition(self):
        v = np.array([1.0, -2.0, 2.0])
        np.testing.assert_allclose(prox_group_norm(v, 1.5) + project_dual_ball(v, 1.5), v)


class TestDuality(TestCase):
    def test_zero_everything(self):
        problem = two_point_problem(gamma=0.0)
        dual, gap = dual_objective_and_gap(problem, state_for(problem, problem.data.values, [[0.0]]))
        self.assertEqual(dual, 0.0)
        self.assertEqual(gap, 0.0)

    def test_two_point_optimum(self):
        # u = (1, 3) with the edge dual at its radius
        problem = two_point_problem()
        dual, gap = dual_objective_and_gap(problem, state_for(problem, np.array([[1.0, 3.0]]), [[-1.0]]))
        self.assertAlmostEqual(dual, 3.0, places=12)
        self.assertLessEqual(abs(gap), 1e-10)

    def test_weak_duality(self):
        rng = np.random.default_rng(3)
        data = DataMatrix(rng.standard_normal((2, 5)))
        graph = WeightGraph(5, [(i, j, 1.0) for i in range(5) for j in range(i + 1, 5)])
        problem = ClusteringProblem(data, graph, 0.5)
        for _ in range(10):
            Z = rng.standard_normal((2, graph.edge_count))
            Z *= 0.5 / np.maximum(np.linalg.norm(Z, axis=0), 0.5)
            U = rng.standard_normal((2, 5))
            _, gap = dual_objective_and_gap(problem, state_for(problem, U, Z))
            self.assertGreaterEqual(gap, 0.0)

    def test_infeasible_dual(self):
        problem = two_point_problem()
        with self.assertRaises(ProjectionViolation):
            dual_objective_and_gap(problem, state_for(problem, problem.data.values, [[2.0]]))

    def test_dual_shape(self):
        problem = two_point_problem()
        with self.assertRaises(StructuralError):
            dual_objective_and_gap(problem, state_for(problem, problem.data.values, [[0.0, 0.0]]))


class TestPartition(TestCase):
    def test_canonical_labels(self):
        np.testing.assert_array_equal(canonical_labels([5, 5, 2, 7, 2]), [0, 0, 1, 2, 1])

    def test_equality_up_to_relabelling(self):
        self.assertEqual(Partition([1, 1, 0]), Partition([0, 0, 3]))
        self.assertNotEqual(Partition([1, 1, 0]), Partition([0, 1, 1]))

    def test_refinement(self):
        self.assertTrue(Partition([0, 1, 2, 3]).is_refinement_of(Partition([0, 0, 1, 1])))
        self.assertFalse(Partition([0, 0, 1, 1]).is_refinement_of(Partition([0, 1, 1, 2])))

    def test_components_without_edges(self):
        self.assertEqual(connected_components(WeightGraph(4)).K, 4)

    def test_components_of_tree(self):
        self.assertEqual(connected_components(WeightGraph(3, [(0, 1, 1.0), (1, 2, 1.0)])).K, 1)

    def test_two_triangles(self):
        edges = [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0), (3, 4, 1.0), (4, 5, 1.0), (3, 5, 1.0)]
        partition = connected_components(WeightGraph(6, edges))
        self.assertEqual(partition.K, 2)
        np.testing.assert_array_equal(partition.sizes, [3, 3])


class TestHelpers(TestCase):
    def test_merge_duplicates(self):
        data = DataMatrix([[1.0, 2.0, 1.0, 3.0]])
        merged, counts, inverse = merge_duplicates(data)
        np.testing.assert_array_equal(merged.values, [[1.0, 2.0, 3.0]])
        np.testing.assert_array_equal(counts, [2.0, 1.0, 1.0])
        np.testing.assert_array_equal(inverse, [0, 1, 0, 2])

    def test_restrict(self):
        problem = ClusteringProblem(DataMatrix([[0.0, 1.0, 5.0]]), WeightGraph(3, [(0, 1, 1.0), (1, 2, 1.0)]), 1.0)
        restricted = restrict(problem, [1, 2])
        self.assertEqual(restricted.graph.edges, [(0, 1, 1.0)])
        np.testing.assert_array_equal(restricted.data.values, [[1.0, 5.0]])
