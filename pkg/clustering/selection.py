"""
Choosing gamma: missing-data solves by majorization-minimization, hold-out
prediction error, extended BIC on a path, adaptive reweighting and the
clustering-quality metrics used to score recoveries.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
from django.conf import settings
from joblib import Parallel, delayed
from scipy.special import erf
from sklearn.cluster import AgglomerativeClustering, KMeans
from sklearn.metrics import adjusted_rand_score
from sklearn.mixture import GaussianMixture

from clustering.exceptions import InvalidArgument, MMViolation, StructuralError
from clustering.graphs import gaussian_kernel
from clustering.path import ClusterPath, GridSpec, detect_fusions, gamma_max
from clustering.problem import ClusteringProblem, DataMatrix, Partition, SolverState, WeightGraph, \
    canonical_labels, median_pairwise_distance, objective_value
from clustering.solvers.abstracts import SolverConfig
from clustering.solvers.solver_factories import solve
from clustering.streams import named_stream, stream_seed

logger = logging.getLogger('clustering')

MM_SLACK = 1e-12
INNER_GAP = 5e-13
BASELINE_METHODS = ('kmeans', 'gmm', 'average')
PENALTIES = ('log_delta', 'gaussian_integral')


@dataclass(frozen=True, eq=False)
class HoldoutPlan:
    """
    Observed entries (row, column) hidden from the fit; every column keeps at
    least one observed entry
    """
    fraction: float
    seed: int
    entries: np.ndarray

    def __post_init__(self):
        if not 0 < self.fraction < 1:
            raise InvalidArgument('Hold-out fraction must lie in (0, 1), got %r' % self.fraction)
        entries = np.asarray(self.entries, dtype=int).reshape(-1, 2)
        if entries.shape[0] == 0:
            raise InvalidArgument('Hold-out plan holds out no entry')
        object.__setattr__(self, 'entries', entries)

    @property
    def rows(self) -> np.ndarray:
        return self.entries[:, 0]

    @property
    def columns(self) -> np.ndarray:
        return self.entries[:, 1]

    def apply(self, data: DataMatrix) -> DataMatrix:
        """
        Data with the held-out entries added to the unobserved set
        """
        mask = data.mask.copy() if data.has_missing else np.ones(data.values.shape, dtype=bool)
        if not mask[self.rows, self.columns].all():
            raise StructuralError('Hold-out entries overlap the missing entries of the data')
        mask[self.rows, self.columns] = False
        return DataMatrix(data.values, mask)


def make_holdout_plan(data: DataMatrix, fraction: float = None, seed: int = 0) -> HoldoutPlan:
    """
    Sample round(fraction * observed) observed entries uniformly, skipping any
    entry that would leave its column without an observation
    """
    fraction = settings.SONCLUSTER['HOLDOUT_FRACTION'] if fraction is None else fraction
    if not 0 < fraction < 1:
        raise InvalidArgument('Hold-out fraction must lie in (0, 1), got %r' % fraction)
    mask = data.mask if data.has_missing else np.ones(data.values.shape, dtype=bool)
    rows, columns = np.nonzero(mask)
    target = int(round(fraction * rows.size))
    if target == 0:
        raise InvalidArgument('Hold-out fraction %g selects no entry of %i observed' % (fraction, rows.size))
    remaining = mask.sum(axis=0)
    chosen = []
    for index in named_stream(seed, 'holdout').permutation(rows.size):
        if len(chosen) == target:
            break
        column = columns[index]
        if remaining[column] > 1:
            remaining[column] -= 1
            chosen.append((rows[index], column))
    if len(chosen) < target:
        logger.warning('Selection - column coverage limits the hold-out set to %i of %i entries'
                       % (len(chosen), target))
    return HoldoutPlan(fraction, seed, np.array(sorted(chosen), dtype=int))


@dataclass(frozen=True, eq=False)
class SelectionReport:
    criterion: str
    gammas: np.ndarray
    scores: np.ndarray
    cluster_counts: List[int]
    chosen_index: int
    eligible: List[bool] = field(default_factory=list)
    flags: Dict[str, list] = field(default_factory=dict)

    @property
    def chosen_gamma(self) -> float:
        return float(self.gammas[self.chosen_index])

    @property
    def chosen_K(self) -> int:
        return int(self.cluster_counts[self.chosen_index])

    def rows(self) -> List[dict]:
        return [{'gamma': float(gamma), 'score': float(score), 'K': int(K)}
                for gamma, score, K in zip(self.gammas, self.scores, self.cluster_counts)]


def _choose(scores: np.ndarray, eligible: np.ndarray) -> int:
    """
    Index of the minimum eligible score; ties go to the larger gamma
    """
    candidates = np.flatnonzero(eligible)
    best = scores[candidates].min()
    return int(candidates[scores[candidates] == best][-1])


def solve_missing(data: DataMatrix, graph: WeightGraph, gamma: float, config: SolverConfig = None,
                  warm_start=None) -> SolverState:
    """
    Sum-of-norms clustering with a fit term over observed entries only.

    Every outer step imputes the unobserved entries from the current
    centroids and solves the completed problem, which majorizes the
    observed-entry objective. The objective history is ``mm_history``.
    :param data: DataMatrix, possibly with a mask
    :param graph: WeightGraph
    :param gamma: regularization
    :param config: SolverConfig of the inner solves
    :param warm_start: duals for the first inner solve
    :return: SolverState of the last inner solve
    """
    config = config or SolverConfig()
    if not data.has_missing:
        return solve(ClusteringProblem(data, graph, gamma), config, warm_start)
    problem = ClusteringProblem(data, graph, gamma)
    max_iterations = settings.SONCLUSTER['MM_MAX_ITERATIONS']
    tolerance = settings.SONCLUSTER['MM_TOLERANCE']
    U = np.where(data.mask, data.values, data.feature_means()[:, None])
    objective = objective_value(problem, U)
    history = [objective]
    state = None
    converged = False
    for iteration in range(1, max_iterations + 1):
        inner = config.replace(gap_tolerance=min(config.gap_tolerance, INNER_GAP * max(1.0, abs(objective))))
        state = solve(ClusteringProblem(data.filled(U), graph, gamma), inner, warm_start)
        warm_start = state
        U = np.asarray(state.U)
        new_objective = objective_value(problem, U)
        history.append(new_objective)
        if new_objective > objective + MM_SLACK * max(1.0, abs(objective)):
            raise MMViolation('MM - objective rose from %.17g to %.17g at iteration %i, inner gap %.3e'
                              % (objective, new_objective, iteration, state.duality_gap))
        change = abs(objective - new_objective) / max(1.0, abs(objective))
        objective = new_objective
        if change <= tolerance:
            converged = True
            break
    if not converged:
        logger.warning('MM - relative change above %g after %i iterations (gamma=%g)'
                       % (tolerance, max_iterations, gamma))
    logger.debug('MM - gamma=%g outer iterations=%i objective=%.6g' % (gamma, len(history) - 1, objective))
    return replace(state, converged=state.converged and converged, mm_history=history)


def _holdout_score(data: DataMatrix, hidden: DataMatrix, graph: WeightGraph, gamma: float, plan: HoldoutPlan,
                   config: SolverConfig, scale: float):
    state = solve_missing(hidden, graph, gamma, config)
    predictions = np.asarray(state.U)[plan.rows, plan.columns]
    error = float(np.mean((predictions - data.values[plan.rows, plan.columns]) ** 2))
    return error, detect_fusions(state, graph, scale=scale).K


def holdout_select(data: DataMatrix, graph: WeightGraph, grid=None, plan: HoldoutPlan = None,
                   config: SolverConfig = None, n_jobs: int = None) -> SelectionReport:
    """
    :param data: DataMatrix
    :param graph: WeightGraph
    :param grid: GridSpec or gamma values, default geometric grid up to gamma_max
    :param plan: HoldoutPlan, default fraction from settings with seed 0
    :param config: SolverConfig
    :param n_jobs: parallel solves, settings default
    :return: SelectionReport scored by mean squared error on the held-out entries
    """
    config = config or SolverConfig()
    plan = plan or make_holdout_plan(data)
    n_jobs = n_jobs or settings.SONCLUSTER['N_JOBS']
    if not isinstance(grid, GridSpec):
        grid = GridSpec() if grid is None else GridSpec(gammas=grid)
    top = None
    if grid.gammas is None and grid.gamma_max is None:
        complete = data.filled(data.feature_means()[:, None] * np.ones(data.values.shape))
        top = gamma_max(complete, graph, config)
    gammas = grid.resolve(top)
    hidden = plan.apply(data)
    scale = median_pairwise_distance(data)
    results = Parallel(n_jobs=n_jobs)(
        delayed(_holdout_score)(data, hidden, graph, gamma, plan, config, scale) for gamma in gammas)
    scores = np.array([score for score, _ in results])
    counts = [K for _, K in results]
    chosen = _choose(scores, np.ones(scores.size, dtype=bool))
    logger.info('Selection - hold-out chose gamma=%g with K=%i' % (gammas[chosen], counts[chosen]))
    return SelectionReport('holdout', np.asarray(gammas), scores, counts, chosen, [True] * scores.size)


def rss_floor(data: DataMatrix) -> float:
    centred = data.values - data.values.mean(axis=1, keepdims=True)
    return float(np.finfo(float).eps * max(1.0, np.sum(centred ** 2)))


def _ebic(rss: float, K: int, p: int, n: int, zeta: float, floor: float):
    """
    :return: (score, whether the floor replaced the RSS)
    """
    N = n * p
    df = K * p
    floored = rss < floor
    rss = max(rss, floor)
    return N * np.log(rss / N) + df * np.log(N) + 2.0 * zeta * df * np.log(n), floored


def _check_zeta(zeta: Optional[float]) -> float:
    zeta = settings.SONCLUSTER['EBIC_ZETA'] if zeta is None else zeta
    if not 0 <= zeta <= 1:
        raise InvalidArgument('zeta must lie in [0, 1], got %r' % zeta)
    return float(zeta)


def ebic_score(data: DataMatrix, labels, zeta: float = None) -> float:
    """
    eBIC of a labelling with the group means as centroids
    """
    zeta = _check_zeta(zeta)
    partition = Partition(np.asarray(labels))
    if partition.n != data.n:
        raise StructuralError('Labelling covers %i points, data has %i' % (partition.n, data.n))
    X = data.values
    totals = np.stack([np.bincount(partition.labels, weights=row, minlength=partition.K) for row in X])
    means = totals / partition.sizes
    rss = float(np.sum((X - means[:, partition.labels]) ** 2))
    return float(_ebic(rss, partition.K, data.p, data.n, zeta, rss_floor(data))[0])


def ebic_select(path: ClusterPath, zeta: float = None, max_clusters: int = None) -> SelectionReport:
    """
    Extended BIC over the snapshots of a path. Each observation takes the
    value of its solved cluster centroid; df = K p.
    Every snapshot is eligible unless ``max_clusters`` caps K.
    """
    zeta = _check_zeta(zeta)
    if max_clusters is not None and max_clusters < 1:
        raise InvalidArgument('max_clusters must be positive, got %r' % max_clusters)
    if len(path) == 0:
        raise InvalidArgument('eBIC selection needs a path with at least one snapshot')
    data = path.data
    floor = rss_floor(data)
    scores, floored = [], []
    for snapshot in path:
        fitted = snapshot.centroids[:, snapshot.partition.labels]
        rss = float(np.sum((data.values - fitted) ** 2))
        score, hit = _ebic(rss, snapshot.K, data.p, data.n, zeta, floor)
        scores.append(score)
        floored.append(hit)
    if any(floored):
        logger.warning('Selection - RSS floor used for %i snapshots' % sum(floored))
    scores = np.array(scores)
    counts = path.cluster_counts
    eligible = np.array([max_clusters is None or K <= max_clusters for K in counts])
    if not eligible.any():
        logger.warning('Selection - no snapshot has at most %i clusters, all are eligible' % max_clusters)
        eligible[:] = True
    chosen = _choose(scores, eligible)
    logger.info('Selection - eBIC chose gamma=%g with K=%i' % (path.gammas[chosen], counts[chosen]))
    return SelectionReport('ebic', path.gammas, scores, counts, chosen, eligible.tolist(),
                           {'rss_floor': floored})


def adjusted_rand_index(labels_a, labels_b) -> float:
    labels_a, labels_b = np.asarray(labels_a).ravel(), np.asarray(labels_b).ravel()
    if labels_a.size != labels_b.size:
        raise StructuralError('Labellings have lengths %i and %i' % (labels_a.size, labels_b.size))
    return float(adjusted_rand_score(labels_a, labels_b))


@dataclass(frozen=True, eq=False)
class FoldedConcavePenalty:
    """
    ``log_delta``: phi(z) = log(z + delta) - log(delta).
    ``gaussian_integral``: phi(z) = integral of exp(-t^2 / (s_i s_j)) from 0 to z
    with per-node local scales s.
    """
    kind: str
    delta: float = 1e-3
    scales: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in PENALTIES:
            raise InvalidArgument('Unknown penalty %s' % self.kind)
        if self.kind == 'log_delta' and not self.delta > 0:
            raise InvalidArgument('delta must be positive')
        if self.kind == 'gaussian_integral':
            if self.scales is None or np.any(np.asarray(self.scales) <= 0):
                raise InvalidArgument('The Gaussian penalty needs positive local scales')
            object.__setattr__(self, 'scales', np.asarray(self.scales, dtype=float))

    def __products(self, graph: WeightGraph) -> np.ndarray:
        if self.scales.size != graph.n:
            raise StructuralError('%i local scales for %i nodes' % (self.scales.size, graph.n))
        return self.scales[graph.heads] * self.scales[graph.tails]

    def value(self, lengths: np.ndarray, graph: WeightGraph) -> np.ndarray:
        if self.kind == 'log_delta':
            return np.log(lengths + self.delta) - np.log(self.delta)
        root = np.sqrt(self.__products(graph))
        return 0.5 * np.sqrt(np.pi) * root * erf(lengths / root)

    def derivative(self, lengths: np.ndarray, graph: WeightGraph) -> np.ndarray:
        if self.kind == 'log_delta':
            return 1.0 / (lengths + self.delta)
        scales = np.sqrt(self.__products(graph))
        return gaussian_kernel(lengths, scales, scales)


def log_delta(delta: float = 1e-3) -> FoldedConcavePenalty:
    return FoldedConcavePenalty('log_delta', delta=delta)


def gaussian_integral(scales) -> FoldedConcavePenalty:
    return FoldedConcavePenalty('gaussian_integral', scales=scales)


def _edge_lengths(graph: WeightGraph, U: np.ndarray) -> np.ndarray:
    U = np.asarray(U, dtype=float)
    if U.shape[1] != graph.n:
        raise StructuralError('Centroids cover %i nodes, graph has %i' % (U.shape[1], graph.n))
    return np.linalg.norm(U[:, graph.heads] - U[:, graph.tails], axis=0)


def lla_reweight(U, graph: WeightGraph, penalty: FoldedConcavePenalty) -> WeightGraph:
    """
    One local linear approximation step: w_ij = phi'(||u_i - u_j||) on the same edges
    """
    weights = penalty.derivative(_edge_lengths(graph, U), graph)
    return graph.with_weights(weights, 'custom')


def folded_concave_objective(problem: ClusteringProblem, U, penalty: FoldedConcavePenalty) -> float:
    fit = objective_value(problem.with_gamma(0.0), U)
    return fit + problem.gamma * float(np.sum(penalty.value(_edge_lengths(problem.graph, U), problem.graph)))


def baseline_partitions(data: DataMatrix, k_values: Sequence[int] = (2, 3, 4),
                        methods: Sequence[str] = BASELINE_METHODS, seed: int = 0, zeta: float = None) -> dict:
    """
    k-means, Gaussian mixture and average-linkage clusterings, each scored by eBIC
    :return: {method: {'runs': [{'k', 'labels', 'ebic'}], 'chosen_k': k}}
    """
    X = data.values.T
    results = {}
    for method in methods:
        runs = []
        for k in k_values:
            if not 1 <= k <= data.n:
                raise InvalidArgument('Cannot form %i clusters from %i observations' % (k, data.n))
            random_state = stream_seed(seed, 'baseline:%s:%i' % (method, k))
            if method == 'kmeans':
                labels = KMeans(n_clusters=k, n_init=10, random_state=random_state).fit_predict(X)
            elif method == 'gmm':
                labels = GaussianMixture(n_components=k, random_state=random_state).fit(X).predict(X)
            elif method == 'average':
                labels = AgglomerativeClustering(n_clusters=k, linkage='average').fit_predict(X)
            else:
                raise InvalidArgument('Unknown baseline method %s' % method)
            labels = canonical_labels(labels)
            runs.append({'k': int(k), 'labels': labels.tolist(), 'ebic': ebic_score(data, labels, zeta)})
        best = min(runs, key=lambda run: run['ebic'])
        results[method] = {'runs': runs, 'chosen_k': best['k']}
    return results
