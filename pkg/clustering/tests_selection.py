import numpy as np
from django.test import TestCase, tag

from clustering.exceptions import InvalidArgument, StructuralError
from clustering.generators import GeneratorSpec, generate
from clustering.graphs import GraphSpec, WeightKind, build_graph, local_scales
from clustering.path import ClusterPath, GridSpec, Snapshot, compute_path
from clustering.problem import ClusteringProblem, DataMatrix, Partition, WeightGraph, objective_value
from clustering.selection import HoldoutPlan, _choose, _ebic, adjusted_rand_index, baseline_partitions, ebic_score, \
    ebic_select, folded_concave_objective, gaussian_integral, holdout_select, lla_reweight, log_delta, \
    make_holdout_plan, rss_floor, solve_missing
from clustering.solvers.abstracts import SolverConfig
from clustering.solvers.solver_factories import solve

TIGHT = SolverConfig(gap_tolerance=1e-12, max_iterations=200000)


def masked_instance(seed: int, p: int = 2, n: int = 8, missing: float = 0.25):
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((p, n))
    mask = rng.random((p, n)) > missing
    mask[rng.integers(0, p, size=n), np.arange(n)] = True
    data = DataMatrix(values, mask)
    filled = data.filled(data.feature_means()[:, None] * np.ones((p, n)))
    graph = build_graph(filled, GraphSpec('mst_plus_knn', k=3, weights=WeightKind('gaussian')))
    return data, graph


def path_of(data: DataMatrix, labels_by_gamma: dict) -> ClusterPath:
    snapshots = []
    for gamma, labels in sorted(labels_by_gamma.items()):
        partition = Partition(np.asarray(labels))
        means = np.stack([np.bincount(partition.labels, weights=row) for row in data.values]) / partition.sizes
        snapshots.append(Snapshot(gamma, partition, means, means[:, partition.labels], 0.0))
    return ClusterPath(data, WeightGraph(data.n), 'exact', snapshots)


def blobs(seed: int, centres, size: int, noise: float):
    centres = np.asarray(centres, dtype=float)
    labels = np.repeat(np.arange(centres.shape[1]), size)
    rng = np.random.default_rng(seed)
    values = centres[:, labels] + noise * rng.standard_normal((centres.shape[0], labels.size))
    return DataMatrix(values), labels


def within_blob_graph(labels) -> WeightGraph:
    n = len(labels)
    return WeightGraph(n, [(i, j, 1.0) for i in range(n) for j in range(i + 1, n) if labels[i] == labels[j]])


class TestMissingData(TestCase):
    def test_majorization_never_increases(self):
        for seed in range(20):
            data, graph = masked_instance(seed)
            state = solve_missing(data, graph, 0.1 + 0.1 * (seed % 5), TIGHT)
            history = np.asarray(state.mm_history)
            self.assertGreater(history.size, 1)
            slack = 1e-12 * np.maximum(1.0, np.abs(history[:-1]))
            self.assertTrue(np.all(history[1:] <= history[:-1] + slack))

    def test_zero_gamma_reproduces_observed_entries(self):
        data, graph = masked_instance(3)
        state = solve_missing(data, graph, 0.0)
        np.testing.assert_allclose(state.U[data.mask], data.values[data.mask])
        self.assertEqual(state.mm_history[-1], 0.0)

    def test_observed_entry_objective(self):
        data, graph = masked_instance(4)
        state = solve_missing(data, graph, 0.3, TIGHT)
        problem = ClusteringProblem(data, graph, 0.3)
        self.assertAlmostEqual(state.mm_history[-1], objective_value(problem, state.U), places=10)

    def test_complete_data_is_a_plain_solve(self):
        data = DataMatrix(np.random.default_rng(0).standard_normal((2, 6)))
        graph = build_graph(data, GraphSpec('mst', weights=WeightKind('uniform')))
        state = solve_missing(data, graph, 0.2, TIGHT)
        self.assertEqual(state.mm_history, [])
        np.testing.assert_allclose(state.U, solve(ClusteringProblem(data, graph, 0.2), TIGHT).U)


class TestHoldout(TestCase):
    def setUp(self):
        self.data = DataMatrix(np.random.default_rng(1).standard_normal((3, 20)))

    def test_plan_is_reproducible(self):
        first = make_holdout_plan(self.data, 0.2, seed=5)
        second = make_holdout_plan(self.data, 0.2, seed=5)
        np.testing.assert_array_equal(first.entries, second.entries)
        self.assertEqual(len(first.entries), 12)
        self.assertFalse(np.array_equal(first.entries, make_holdout_plan(self.data, 0.2, seed=6).entries))

    def test_columns_keep_an_observation(self):
        plan = make_holdout_plan(self.data, 0.6, seed=0)
        hidden = plan.apply(self.data)
        self.assertTrue(hidden.mask.any(axis=0).all())

    def test_fraction_checked(self):
        for fraction in (0.0, 1.0, 1.5):
            with self.assertRaises(InvalidArgument):
                make_holdout_plan(self.data, fraction)
        with self.assertRaises(InvalidArgument):
            make_holdout_plan(self.data, 0.001)
        with self.assertRaises(InvalidArgument):
            HoldoutPlan(0.1, 0, np.empty((0, 2)))

    def test_plan_respects_existing_mask(self):
        data, _ = masked_instance(2, p=3, n=20)
        plan = make_holdout_plan(data, 0.2)
        self.assertTrue(data.mask[plan.rows, plan.columns].all())
        foreign = HoldoutPlan(0.1, 0, np.argwhere(~data.mask)[:1])
        with self.assertRaises(StructuralError):
            foreign.apply(data)

    def test_select(self):
        data, labels = generate(GeneratorSpec('gaussian_mixture', sizes=(10, 10), seed=4))
        graph = build_graph(data, GraphSpec('mst_plus_knn', k=3, weights=WeightKind('gaussian')))
        report = holdout_select(data, graph, grid=[0.01, 0.1, 1.0], plan=make_holdout_plan(data, 0.1, seed=1))
        self.assertEqual(report.criterion, 'holdout')
        self.assertEqual(len(report.rows()), 3)
        self.assertTrue(np.all(np.isfinite(report.scores)))
        self.assertEqual(report.scores[report.chosen_index], report.scores.min())

    @tag('slow')
    def test_two_separated_blobs(self):
        found = []
        for seed in range(10):
            data, labels = blobs(seed, [[0.0, 10.0], [0.0, 10.0]], 15, 0.5)
            report = holdout_select(data, within_blob_graph(labels), grid=[1e-3, 1.0, 10.0],
                                    plan=make_holdout_plan(data, 0.1, seed=seed))
            found.append(report.chosen_K)
        self.assertGreater(found.count(2), len(found) // 2, found)

    def test_ties_go_to_larger_gamma(self):
        self.assertEqual(_choose(np.array([1.0, 0.5, 0.5]), np.ones(3, dtype=bool)), 2)
        self.assertEqual(_choose(np.array([1.0, 0.5, 0.5]), np.array([True, True, False])), 1)


class TestEbic(TestCase):
    def test_zeta_term(self):
        data = DataMatrix(np.random.default_rng(2).standard_normal((2, 10)))
        labels = np.repeat([0, 1], 5)
        difference = ebic_score(data, labels, zeta=1.0) - ebic_score(data, labels, zeta=0.0)
        self.assertAlmostEqual(difference, 2.0 * 2 * 2 * np.log(10))

    def test_zeta_range(self):
        data = DataMatrix(np.random.default_rng(2).standard_normal((2, 10)))
        with self.assertRaises(InvalidArgument):
            ebic_score(data, np.zeros(10), zeta=1.5)

    def test_separated_labels_preferred(self):
        data, labels = generate(GeneratorSpec('hierarchy_5x5', seed=1))
        merged = np.minimum(labels, 3)
        self.assertLess(ebic_score(data, labels), ebic_score(data, merged))

    def test_floor_flagged(self):
        data = DataMatrix([[0.0, 1.0, 5.0, 6.0]])
        path = path_of(data, {0.0: [0, 1, 2, 3], 1.0: [0, 0, 1, 1]})
        with self.assertLogs('clustering', level='WARNING'):
            report = ebic_select(path, max_clusters=4)
        self.assertEqual(report.flags['rss_floor'], [True, False])
        self.assertGreater(rss_floor(data), 0.0)

    def test_eligibility(self):
        data = DataMatrix([[0.0, 1.0, 5.0, 6.0]])
        path = path_of(data, {0.0: [0, 1, 2, 3], 1.0: [0, 0, 1, 1], 2.0: [0, 0, 0, 0]})
        report = ebic_select(path, max_clusters=2)
        self.assertEqual(report.eligible, [False, True, True])
        self.assertEqual(report.chosen_K, 2)
        self.assertEqual(report.chosen_gamma, 1.0)

    def test_empty_path(self):
        with self.assertRaises(InvalidArgument):
            ebic_select(ClusterPath(DataMatrix([[0.0]]), WeightGraph(1), 'exact', []))
        with self.assertRaises(InvalidArgument):
            ebic_select(path_of(DataMatrix([[0.0, 1.0]]), {0.0: [0, 1]}), max_clusters=0)

    def test_every_snapshot_eligible_by_default(self):
        angles = np.linspace(0.0, 2.0 * np.pi, 6, endpoint=False)
        data, labels = blobs(0, 10.0 * np.stack([np.cos(angles), np.sin(angles)]), 5, 0.1)
        halves = 2 * labels + (np.arange(labels.size) % 5 < 3)
        path = path_of(data, {0.5: halves, 1.0: labels, 2.0: np.minimum(labels, 3), 4.0: labels // 3,
                              8.0: np.zeros_like(labels)})
        report = ebic_select(path)
        self.assertTrue(all(report.eligible))
        self.assertEqual(report.chosen_K, 6)
        self.assertEqual(report.chosen_index, int(np.argmin(report.scores)))
        self.assertEqual(ebic_select(path, max_clusters=4).chosen_K, 4)

    def test_penalty_grows_with_clusters(self):
        for zeta in (0.0, 0.5, 1.0):
            scores = [_ebic(3.0, K, 2, 30, zeta, 1e-12)[0] for K in range(1, 31)]
            self.assertTrue(np.all(np.diff(scores) > 0))

    def test_star_shaped_selects_three(self):
        data, _ = generate(GeneratorSpec('star_shaped', seed=0))
        graph = build_graph(data, GraphSpec('mst_plus_knn', k=5, weights=WeightKind('convex_combo', alpha=0.9)))
        report = ebic_select(compute_path(data, graph, GridSpec(count=50)), max_clusters=4)
        self.assertEqual(report.chosen_K, 3)


class TestAdjustedRandIndex(TestCase):
    def test_relabelled_partition(self):
        self.assertEqual(adjusted_rand_index([0, 0, 1, 1, 2], [2, 2, 0, 0, 1]), 1.0)

    def test_symmetric(self):
        a, b = [0, 0, 1, 1, 1, 2], [0, 1, 1, 1, 2, 2]
        self.assertAlmostEqual(adjusted_rand_index(a, b), adjusted_rand_index(b, a))

    def test_crossed_halves(self):
        self.assertAlmostEqual(adjusted_rand_index([0, 0, 1, 1], [0, 1, 0, 1]), -0.5)

    def test_length_mismatch(self):
        with self.assertRaises(StructuralError):
            adjusted_rand_index([0, 1], [0, 1, 1])


class TestReweighting(TestCase):
    def test_log_derivative(self):
        graph = WeightGraph(2, [(0, 1, 1.0)])
        reweighted = lla_reweight(np.array([[0.0, 1.0]]), graph, log_delta(1e-3))
        self.assertAlmostEqual(float(reweighted.weights[0]), 1.0 / 1.001)
        self.assertEqual(reweighted.provenance, 'custom')

    def test_gaussian_derivative_matches_value(self):
        graph = WeightGraph(3, [(0, 1, 1.0), (1, 2, 1.0)])
        penalty = gaussian_integral([0.5, 1.0, 2.0])
        lengths = np.array([0.3, 1.7])
        step = 1e-6
        numeric = (penalty.value(lengths + step, graph) - penalty.value(lengths - step, graph)) / (2 * step)
        np.testing.assert_allclose(penalty.derivative(lengths, graph), numeric, rtol=1e-6)
        np.testing.assert_allclose(penalty.derivative(lengths, graph), np.exp(-lengths ** 2 / [0.5, 2.0]))

    def test_penalty_validation(self):
        with self.assertRaises(InvalidArgument):
            log_delta(0.0)
        with self.assertRaises(InvalidArgument):
            gaussian_integral([1.0, -1.0])

    def test_lla_steps_descend(self):
        data = DataMatrix(np.random.default_rng(9).standard_normal((2, 10)))
        graph = build_graph(data, GraphSpec('mst_plus_knn', k=3, weights=WeightKind('uniform')))
        for penalty in (log_delta(0.1), gaussian_integral(local_scales(data))):
            problem = ClusteringProblem(data, graph, 0.2)
            U = data.values
            previous = folded_concave_objective(problem, U, penalty)
            for _ in range(3):
                reweighted = problem.with_graph(lla_reweight(U, graph, penalty))
                U = solve(reweighted, TIGHT).U
                current = folded_concave_objective(problem, U, penalty)
                self.assertLessEqual(current, previous + 1e-9)
                previous = current


class TestBaselines(TestCase):
    def test_structure(self):
        data, _ = generate(GeneratorSpec('gaussian_mixture', sizes=(15, 15, 15), seed=2))
        results = baseline_partitions(data, k_values=(2, 3), seed=3)
        self.assertEqual(sorted(results), ['average', 'gmm', 'kmeans'])
        for method, result in results.items():
            self.assertEqual([run['k'] for run in result['runs']], [2, 3])
            self.assertIn(result['chosen_k'], (2, 3))
            for run in result['runs']:
                self.assertEqual(len(run['labels']), 45)
                self.assertEqual(len(set(run['labels'])), run['k'])
        self.assertEqual(results, baseline_partitions(data, k_values=(2, 3), seed=3))

    def test_invalid(self):
        data = DataMatrix(np.random.default_rng(0).standard_normal((2, 5)))
        with self.assertRaises(InvalidArgument):
            baseline_partitions(data, k_values=(6,))
        with self.assertRaises(InvalidArgument):
            baseline_partitions(data, methods=('spectral',))
