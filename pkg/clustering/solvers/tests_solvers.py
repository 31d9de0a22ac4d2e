import cvxpy as cp
import numpy as np
from django.test import TestCase, tag

from clustering.exceptions import InvalidArgument, SolverException, StructuralError
from clustering.graphs import GraphSpec, WeightKind, build_full, build_graph
from clustering.problem import ClusteringProblem, DataMatrix, WeightGraph, objective_value
from clustering.solvers.abstracts import SolverConfig
from clustering.solvers.admm import ADMMSolver, LinearSystem, admm_u_solve, default_rho, solve_admm
from clustering.solvers.ama import solve_ama
from clustering.solvers.diagnostics import kkt_report
from clustering.solvers.incidence import IncidenceOperator
from clustering.solvers.solver_factories import SolverFactory, solve
from clustering.theory import iteration_scaling

TIGHT = SolverConfig(gap_tolerance=1e-11, residual_tolerance=1e-10, max_iterations=100000)


def two_point_problem(gamma: float) -> ClusteringProblem:
    return ClusteringProblem(DataMatrix([[0.0, 4.0]]), WeightGraph(2, [(0, 1, 1.0)]), gamma)


def random_problem(seed: int, n: int = 10, p: int = 2, gamma: float = 0.3) -> ClusteringProblem:
    data = DataMatrix(np.random.default_rng(seed).standard_normal((p, n)))
    graph = build_graph(data, GraphSpec('mst_plus_knn', k=3, weights=WeightKind('gaussian')))
    return ClusteringProblem(data, graph, gamma)


def oracle_centroids(problem: ClusteringProblem) -> np.ndarray:
    """
    Reference minimiser from a generic conic solver
    """
    X = problem.data.values
    U = cp.Variable(X.shape)
    penalty = sum(w * cp.norm(U[:, i] - U[:, j], 2) for i, j, w in problem.graph.edges)
    fit = 0.5 * sum(m * cp.sum_squares(X[:, i] - U[:, i]) for i, m in enumerate(problem.multiplicity))
    cp.Problem(cp.Minimize(fit + problem.gamma * penalty)).solve()
    return np.asarray(U.value)


class TestTwoPoints(TestCase):
    def test_shrinks_toward_each_other(self):
        for method in ('ama', 'ama_accelerated', 'admm'):
            state = solve(two_point_problem(1.0), TIGHT.replace(method=method))
            self.assertTrue(state.converged)
            np.testing.assert_allclose(state.U, [[1.0, 3.0]], atol=1e-6)

    def test_fuses_above_threshold(self):
        for method in ('ama', 'ama_accelerated', 'admm'):
            state = solve(two_point_problem(3.0), TIGHT.replace(method=method))
            np.testing.assert_allclose(state.U, [[2.0, 2.0]], atol=1e-6)

    def test_closed_form_sweep(self):
        # d = 4, w = 1: shrink by gamma until fusion at gamma = 2
        for gamma in np.linspace(0.1, 4.0, 20):
            expected = [[min(gamma, 2.0), 4.0 - min(gamma, 2.0)]]
            np.testing.assert_allclose(solve_ama(two_point_problem(gamma), TIGHT).U, expected, atol=1e-8)
            for method in ('ama_accelerated', 'admm'):
                np.testing.assert_allclose(solve(two_point_problem(gamma), TIGHT.replace(method=method)).U,
                                           expected, atol=1e-6)

    def test_zero_gamma_returns_data(self):
        state = solve_ama(two_point_problem(0.0))
        np.testing.assert_allclose(state.U, [[0.0, 4.0]])
        self.assertEqual(state.duality_gap, 0.0)

    def test_fused_edge_has_exact_zero_split(self):
        state = solve_ama(two_point_problem(3.0), TIGHT)
        self.assertEqual(float(np.linalg.norm(state.V)), 0.0)


class TestAMA(TestCase):
    def test_dual_monotone_and_feasible(self):
        for seed in range(5):
            problem = random_problem(seed)
            for accelerated in (False, True):
                state = solve_ama(problem, TIGHT, accelerated=accelerated)
                history = np.asarray(state.dual_history)
                slack = 1e-12 * np.maximum(1.0, np.abs(history[:-1]))
                self.assertTrue(np.all(history[1:] >= history[:-1] - slack))
                self.assertLessEqual(state.max_infeasibility, 1e-9)

    def test_gap_reported(self):
        state = solve_ama(random_problem(1), TIGHT)
        self.assertTrue(state.converged)
        self.assertLessEqual(state.duality_gap, 1e-11)

    def test_warm_start_from_solution(self):
        problem = random_problem(2)
        state = solve_ama(problem, TIGHT)
        again = solve_ama(problem, TIGHT, warm_start=state)
        self.assertLessEqual(again.iterations, 10)
        np.testing.assert_allclose(again.U, state.U, atol=1e-6)

    def test_warm_start_shape_checked(self):
        with self.assertRaises(StructuralError):
            solve_ama(random_problem(2), warm_start=np.zeros((5, 5)))

    def test_fixed_step_needs_rho(self):
        with self.assertRaises(InvalidArgument):
            SolverConfig(step_rule='fixed', method='ama')

    def test_iteration_limit_logged(self):
        with self.assertLogs('clustering', level='WARNING'):
            state = solve_ama(random_problem(3, gamma=1.0), SolverConfig(max_iterations=1, gap_tolerance=1e-14))
        self.assertFalse(state.converged)
        self.assertEqual(state.iterations, 1)


class TestADMM(TestCase):
    def test_agrees_with_ama(self):
        for seed in range(3):
            problem = random_problem(seed, gamma=0.5)
            np.testing.assert_allclose(solve_admm(problem, TIGHT).U, solve_ama(problem, TIGHT).U, atol=1e-5)

    def test_fixed_rounds(self):
        problem = random_problem(4)
        state = ADMMSolver(problem, SolverConfig(method='admm')).solve(rounds=3)
        self.assertEqual(state.iterations, 3)
        self.assertFalse(state.converged)

    def test_default_rho_tracks_edge_lengths(self):
        graph = WeightGraph(3, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)])
        problem = ClusteringProblem(DataMatrix([[0.0, 1.0, 3.0]]), graph, 0.5)
        self.assertEqual(ADMMSolver(problem, SolverConfig(method='admm')).system.rho, 4.0)
        scaled = ClusteringProblem(DataMatrix([[0.0, 100.0, 300.0]]), graph, 0.5)
        self.assertEqual(ADMMSolver(scaled, SolverConfig(method='admm')).system.rho, 4.0e4)
        fixed = ADMMSolver(problem, SolverConfig(method='admm', rho=2.5))
        self.assertEqual(fixed.system.rho, 2.5)

    def test_default_rho_fallback(self):
        operator = IncidenceOperator(WeightGraph(2))
        self.assertEqual(default_rho(operator, np.array([[0.0, 1.0]])), 1.0)
        operator = IncidenceOperator(WeightGraph(2, [(0, 1, 1.0)]))
        self.assertEqual(default_rho(operator, np.array([[2.0, 2.0]])), 1.0)

    def test_linear_system_routes_agree(self):
        problem = random_problem(6, n=15)
        operator = IncidenceOperator(problem.graph)
        direct = LinearSystem(operator, 2.0)
        iterative = LinearSystem(operator, 2.0, cholesky_max_nodes=0, cg_tolerance=1e-12)
        self.assertTrue(direct.factorized)
        self.assertFalse(iterative.factorized)
        rhs = np.random.default_rng(6).standard_normal((2, 15))
        solution = admm_u_solve(direct, rhs)
        np.testing.assert_allclose(solution @ direct.matrix.toarray(), rhs, atol=1e-10)
        np.testing.assert_allclose(admm_u_solve(iterative, rhs), solution, atol=1e-8)


class TestOracle(TestCase):
    def test_matches_conic_solver(self):
        for seed in range(4):
            problem = random_problem(10 + seed, n=8, gamma=0.2 + 0.2 * seed)
            reference = oracle_centroids(problem)
            for method in ('ama', 'ama_accelerated', 'admm'):
                state = solve(problem, TIGHT.replace(method=method))
                np.testing.assert_allclose(state.U, reference, atol=1e-3)
                self.assertLessEqual(objective_value(problem, state.U), objective_value(problem, reference) + 1e-6)

    def test_random_complete_graphs(self):
        rng = np.random.default_rng(50)
        for _ in range(50):
            n, p = int(rng.integers(2, 9)), int(rng.integers(1, 4))
            data = DataMatrix(rng.standard_normal((p, n)))
            graph = build_full(data)
            for gamma in (0.05, 0.3, 1.5):
                problem = ClusteringProblem(data, graph, gamma)
                reference = objective_value(problem, oracle_centroids(problem))
                for method in ('ama', 'admm'):
                    state = solve(problem, TIGHT.replace(method=method))
                    self.assertLessEqual(abs(objective_value(problem, state.U) - reference),
                                         1e-6 * max(1.0, abs(reference)))
                    if method == 'ama':
                        history = np.asarray(state.dual_history)
                        slack = 1e-12 * np.maximum(1.0, np.abs(history[:-1]))
                        self.assertTrue(np.all(history[1:] >= history[:-1] - slack))
                        self.assertLessEqual(state.max_infeasibility, 1e-9)

    def test_separable_components(self):
        """
        Joint and separate solves agree to 1e-5, the accuracy a relative gap of
        1e-11 guarantees; the objective itself splits exactly.
        """
        rng = np.random.default_rng(21)
        left = rng.standard_normal((2, 6))
        right = rng.standard_normal((2, 5)) + 40.0
        edges = [(0, 1, 1.0), (1, 2, 0.5), (2, 3, 1.0), (3, 4, 2.0), (4, 5, 1.0), (0, 5, 1.0),
                 (6, 7, 1.0), (7, 8, 1.0), (8, 9, 0.5), (9, 10, 1.0)]
        joint = ClusteringProblem(DataMatrix(np.hstack([left, right])), WeightGraph(11, edges), 0.4)
        first = ClusteringProblem(DataMatrix(left), WeightGraph(6, edges[:6]), 0.4)
        second = ClusteringProblem(DataMatrix(right), WeightGraph(5, [(i - 6, j - 6, w) for i, j, w in edges[6:]]),
                                   0.4)
        U = solve_ama(joint, TIGHT).U
        np.testing.assert_allclose(U[:, :6], solve_ama(first, TIGHT).U, atol=1e-5)
        np.testing.assert_allclose(U[:, 6:], solve_ama(second, TIGHT).U, atol=1e-5)


class TestDiagnostics(TestCase):
    def test_solution_is_optimal(self):
        problem = random_problem(7)
        report = kkt_report(problem, solve_ama(problem, TIGHT), TIGHT)
        self.assertTrue(report['optimal'])
        self.assertLessEqual(report['gap'], 1e-10)

    def test_starting_point_is_not_optimal(self):
        problem = random_problem(3, gamma=1.0)
        state = solve_ama(problem, SolverConfig(max_iterations=1, gap_tolerance=1e-14))
        report = kkt_report(problem, state)
        self.assertFalse(report['optimal'])
        self.assertGreater(report['gap'], 0.0)

    def test_factory(self):
        self.assertEqual(SolverFactory(SolverConfig(method='admm')).obtain_solver().__name__, 'ADMMSolver')
        with self.assertRaises(SolverException):
            SolverFactory(SolverConfig(method='newton')).obtain_solver()

    def test_masked_data_rejected(self):
        data = DataMatrix([[0.0, 4.0], [1.0, 0.0]], mask=[[True, True], [True, False]])
        with self.assertRaises(StructuralError):
            solve(ClusteringProblem(data, WeightGraph(2, [(0, 1, 1.0)]), 1.0))


@tag('slow')
class TestIterationScaling(TestCase):
    def test_time_per_iteration_tracks_edges(self):
        rows = iteration_scaling(n=20000, p=4, edge_multipliers=(1, 2, 4), iterations=50)
        for row in rows[1:]:
            self.assertGreaterEqual(row['ratio'], 1.5)
            self.assertLessEqual(row['ratio'], 3.0)
