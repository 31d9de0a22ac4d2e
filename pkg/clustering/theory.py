"""
Closed-form perfect-recovery intervals and empirical harnesses for the
recovery, stability and per-iteration cost properties of the solvers.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, TypedDict

import numpy as np
from django.conf import settings
from joblib import Parallel, delayed

from clustering.exceptions import InvalidArgument, PreconditionViolation, StructuralError
from clustering.path import detect_fusions, gamma_max
from clustering.problem import ClusteringProblem, DataMatrix, Partition, WeightGraph, distance_matrix, \
    median_pairwise_distance
from clustering.solvers.abstracts import SolverConfig
from clustering.solvers.ama import AMASolver
from clustering.solvers.solver_factories import solve
from clustering.streams import named_stream

logger = logging.getLogger('clustering')

FAMILIES = ('panahi_uniform', 'sun_weighted', 'zhu_two_cubes')
BISECTION_STEPS = 12


@dataclass(frozen=True)
class PartitionGeometry:
    diameters: np.ndarray
    distances: np.ndarray
    means: np.ndarray
    sizes: np.ndarray

    @property
    def K(self) -> int:
        return int(self.sizes.size)


@dataclass(frozen=True)
class RecoveryInterval:
    """
    ``upper`` is None when the bound is unbounded
    """
    lower: float
    upper: Optional[float]
    family: str

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidArgument('Unknown interval family %s' % self.family)
        if self.lower < 0 or (self.upper is not None and self.upper < 0):
            raise InvalidArgument('Recovery bounds must be nonnegative')

    @property
    def feasible(self) -> bool:
        return bool(np.isfinite(self.lower) and (self.upper is None or self.lower < self.upper))

    @property
    def unbounded(self) -> bool:
        return self.upper is None

    def contains(self, gamma: float) -> bool:
        return self.lower <= gamma and (self.upper is None or gamma <= self.upper)

    def sample(self, count: int = 5) -> np.ndarray:
        """
        ``count`` gammas spread geometrically around the centre of the interval,
        all strictly inside it. An unbounded or zero end is replaced by a
        point 1e3 times beyond the other end.
        """
        if not self.feasible:
            raise InvalidArgument('Cannot sample an infeasible %s interval' % self.family)
        if self.lower == 0 and self.upper is None:
            raise InvalidArgument('Cannot sample an interval without a finite positive end')
        low = self.lower if self.lower > 0 else self.upper * 1e-3
        high = self.upper if self.upper is not None else low * 1e3
        high = min(high, low * 1e3)
        centre = np.sqrt(low * high)
        step = (high / low) ** (1.0 / (count + 1))
        offsets = np.arange(count) - (count - 1) / 2.0
        return centre * step ** offsets


class RecoveryReport(TypedDict):
    family: str
    lower: float
    upper: Optional[float]
    feasible: bool
    gammas: List[float]
    recovered: List[bool]
    pass_rate: float
    empirical_lower: Optional[float]
    empirical_upper: Optional[float]


class LipschitzReport(TypedDict):
    gamma: float
    trials: int
    ratios: List[float]
    max_ratio: float
    violations: int


def partition_geometry(data: DataMatrix, partition: Partition) -> PartitionGeometry:
    """
    Block diameters, minimum distances between blocks, block means and sizes
    """
    labels = np.asarray(partition.labels if isinstance(partition, Partition) else partition)
    if labels.size != data.n:
        raise StructuralError('Partition covers %i points, data has %i' % (labels.size, data.n))
    K = int(labels.max()) + 1 if labels.size else 0
    blocks = [np.flatnonzero(labels == k) for k in range(K)]
    if K == 0 or any(block.size == 0 for block in blocks):
        raise StructuralError('Partition has an empty block')
    distances = distance_matrix(data.values)
    diameters = np.array([distances[np.ix_(block, block)].max() for block in blocks])
    between = np.zeros((K, K))
    for k in range(K):
        for l in range(k + 1, K):
            between[k, l] = between[l, k] = distances[np.ix_(blocks[k], blocks[l])].min()
    means = np.stack([data.values[:, block].mean(axis=1) for block in blocks], axis=1)
    return PartitionGeometry(diameters, between, means, np.array([block.size for block in blocks]))


def _mean_distances(geometry: PartitionGeometry) -> np.ndarray:
    return distance_matrix(geometry.means)


def panahi_interval(geometry: PartitionGeometry, n: int) -> RecoveryInterval:
    """
    Uniform weights: lower = max_k D(P_k) / n_k, upper = min_{k != l} ||x_k - x_l|| / (2n)
    """
    if geometry.K < 2:
        raise PreconditionViolation('Recovery intervals need at least two clusters')
    lower = float(np.max(geometry.diameters / geometry.sizes))
    mean_distances = _mean_distances(geometry)
    upper = float(np.min(mean_distances[np.triu_indices(geometry.K, k=1)])) / (2.0 * n)
    return RecoveryInterval(lower, upper, 'panahi_uniform')


def _dense_weights(graph: WeightGraph) -> np.ndarray:
    weights = np.zeros((graph.n, graph.n))
    weights[graph.heads, graph.tails] = graph.weights
    weights[graph.tails, graph.heads] = graph.weights
    return weights


def sun_interval(geometry: PartitionGeometry, graph: WeightGraph, partition: Partition) -> RecoveryInterval:
    """
    Weighted recovery interval. The lower bound divides every block diameter
    by the smallest n_k w_ij - mu_ij over pairs i != j inside the block, with
    mu_ij = sum_{l != k} |sum_{q in I_l} (w_iq - w_jq)|. The upper bound is the
    minimum over block pairs of ||x_k - x_l|| / (W_k / n_k + W_l / n_l), W_k the
    total weight leaving block k.
    """
    if geometry.K < 2:
        raise PreconditionViolation('Recovery intervals need at least two clusters')
    labels = partition.labels
    weights = _dense_weights(graph)
    K = geometry.K
    indicator = np.zeros((graph.n, K))
    indicator[np.arange(graph.n), labels] = 1.0
    # block_sums[i, l] = sum of w_iq over q in block l
    block_sums = weights @ indicator
    lower = 0.0
    for k, block in enumerate(Partition(labels).blocks()):
        if block.size < 2:
            continue
        heads, tails = np.triu_indices(block.size, k=1)
        i, j = block[heads], block[tails]
        if np.any(weights[i, j] <= 0):
            raise PreconditionViolation('Block %i has a pair of points without a positive weight' % k)
        others = np.arange(K) != k
        mu = np.abs(block_sums[i][:, others] - block_sums[j][:, others]).sum(axis=1)
        denominator = float(np.min(geometry.sizes[k] * weights[i, j] - mu))
        if denominator <= 0:
            logger.warning('Theory - nonpositive lower-bound denominator in block %i, interval infeasible' % k)
            return RecoveryInterval(np.inf, None, 'sun_weighted')
        lower = max(lower, geometry.diameters[k] / denominator)

    totals = indicator.T @ weights @ indicator
    leaving = (totals.sum(axis=1) - np.diag(totals)) / geometry.sizes
    mean_distances = _mean_distances(geometry)
    upper = None
    for k in range(K):
        for l in range(k + 1, K):
            denominator = leaving[k] + leaving[l]
            if denominator <= 0:
                continue
            bound = mean_distances[k, l] / denominator
            upper = bound if upper is None else min(upper, bound)
    return RecoveryInterval(float(lower), None if upper is None else float(upper), 'sun_weighted')


def zhu_size_prefactors(n1: int, n2: int):
    return 2.0 * n2 * (n1 - 1) / n1 ** 2 + 1.0, 2.0 * n1 * (n2 - 1) / n2 ** 2 + 1.0


def zhu_two_cubes(size_params: Sequence, n1: int, n2: int, distance: float) -> RecoveryInterval:
    """
    Two-cubes model: 2/n size(X, P) <= gamma <= 2/n d(P1, P2)
    :param size_params: the two cube half-edge vectors s_1, s_2 (or their norms)
    :param n1: points in the first cube
    :param n2: points in the second cube
    :param distance: distance between the cubes
    """
    if n1 < 1 or n2 < 1:
        raise InvalidArgument('Both cubes need at least one point')
    if distance < 0:
        raise InvalidArgument('Cube distance must be nonnegative')
    s1, s2 = (float(np.linalg.norm(np.atleast_1d(np.asarray(s, dtype=float)))) for s in size_params)
    first, second = zhu_size_prefactors(n1, n2)
    size = max(first * s1, second * s2)
    n = n1 + n2
    return RecoveryInterval(2.0 * size / n, 2.0 * distance / n, 'zhu_two_cubes')


def _recovers(problem: ClusteringProblem, truth: Partition, config: SolverConfig, scale: float) -> bool:
    state = solve(problem, config)
    return detect_fusions(state, problem.graph, scale=scale) == truth


def _bisect(problem, truth, config, scale, inside: float, outside: float) -> float:
    """
    Geometric bisection for the recovery boundary between a recovering and a
    failing gamma; returns the recovering end
    """
    for _ in range(BISECTION_STEPS):
        middle = np.sqrt(inside * outside)
        if _recovers(problem.with_gamma(middle), truth, config, scale):
            inside = middle
        else:
            outside = middle
    return inside


def verify_recovery(data: DataMatrix, partition: Partition, graph: WeightGraph, interval: RecoveryInterval,
                    trials: int = 5, config: SolverConfig = None) -> RecoveryReport:
    """
    Solve at ``trials`` gammas inside the interval and compare the detected
    partition with the truth, then bisect outside the interval for the
    widest range that still recovers.
    """
    if not interval.feasible:
        raise InvalidArgument('verify_recovery needs a feasible interval')
    config = config or SolverConfig(method='ama_accelerated')
    truth = Partition(partition.labels)
    problem = ClusteringProblem(data, graph, 0.0)
    scale = median_pairwise_distance(data)
    gammas = interval.sample(trials)
    recovered = [_recovers(problem.with_gamma(gamma), truth, config, scale) for gamma in gammas]
    passing = [gamma for gamma, ok in zip(gammas, recovered) if ok]
    empirical_lower = empirical_upper = None
    if passing:
        smallest, largest = min(passing), max(passing)
        floor = smallest * 1e-3
        if _recovers(problem.with_gamma(floor), truth, config, scale):
            empirical_lower = floor
        else:
            empirical_lower = _bisect(problem, truth, config, scale, smallest, floor)
        ceiling = largest * 1e3 if interval.upper is None else max(largest, interval.upper) * 1e3
        top = gamma_max(data, graph, config)
        ceiling = min(ceiling, max(top, largest) * 2.0)
        if _recovers(problem.with_gamma(ceiling), truth, config, scale):
            empirical_upper = ceiling
        else:
            empirical_upper = _bisect(problem, truth, config, scale, largest, ceiling)
    pass_rate = float(np.mean(recovered)) if recovered else 0.0
    logger.info('Theory - %s interval [%g, %s] pass rate %.2f'
                % (interval.family, interval.lower, interval.upper, pass_rate))
    return RecoveryReport(family=interval.family, lower=interval.lower, upper=interval.upper,
                          feasible=interval.feasible, gammas=[float(gamma) for gamma in gammas],
                          recovered=recovered, pass_rate=pass_rate, empirical_lower=empirical_lower,
                          empirical_upper=empirical_upper)


def _perturbed_solution(problem: ClusteringProblem, delta: np.ndarray, config: SolverConfig) -> np.ndarray:
    perturbed = problem.with_data(DataMatrix(problem.data.values + delta))
    return np.asarray(solve(perturbed, config).U)


def lipschitz_harness(data: DataMatrix, graph: WeightGraph, gamma: float, trials: int = 100,
                      perturbation_scale: float = 0.1, seed: int = 0, config: SolverConfig = None,
                      n_jobs: int = None) -> LipschitzReport:
    """
    Checks ||u(x) - u(x + dx)|| <= ||dx|| for random perturbations dx with
    entries N(0, perturbation_scale^2)
    """
    if gamma < 0:
        raise InvalidArgument('gamma must be nonnegative')
    config = config or SolverConfig(method='ama_accelerated', gap_tolerance=1e-12, max_iterations=200000)
    n_jobs = n_jobs or settings.SONCLUSTER['N_JOBS']
    problem = ClusteringProblem(data, graph, gamma)
    base = np.asarray(solve(problem, config).U)
    stream = named_stream(seed, 'lipschitz')
    deltas = [perturbation_scale * stream.standard_normal(data.values.shape) for _ in range(trials)]
    solutions = Parallel(n_jobs=n_jobs)(delayed(_perturbed_solution)(problem, delta, config) for delta in deltas)
    ratios = []
    violations = 0
    for delta, solution in zip(deltas, solutions):
        size = float(np.linalg.norm(delta))
        change = float(np.linalg.norm(solution - base))
        ratios.append(change / size if size > 0 else 0.0)
        if change > size + 1e-8:
            violations += 1
    max_ratio = max(ratios) if ratios else 0.0
    if violations:
        logger.warning('Theory - %i of %i perturbations expanded the solution (max ratio %.12f)'
                       % (violations, trials, max_ratio))
    return LipschitzReport(gamma=gamma, trials=trials, ratios=ratios, max_ratio=max_ratio, violations=violations)


def random_graph(n: int, edges: int, rng: np.random.Generator) -> WeightGraph:
    """
    ``edges`` distinct uniformly random pairs with unit weights
    """
    if edges > n * (n - 1) // 2:
        raise InvalidArgument('A simple graph on %i nodes has at most %i edges' % (n, n * (n - 1) // 2))
    chosen = set()
    while len(chosen) < edges:
        heads = rng.integers(0, n, size=edges)
        tails = rng.integers(0, n, size=edges)
        for i, j in zip(heads.tolist(), tails.tolist()):
            if i != j and len(chosen) < edges:
                chosen.add((min(i, j), max(i, j)))
    pairs = sorted(chosen)
    return WeightGraph.from_arrays(n, [i for i, _ in pairs], [j for _, j in pairs], np.ones(edges), 'custom')


def iteration_scaling(n: int = 20000, p: int = 4, edge_multipliers: Sequence[int] = (1, 2, 4),
                      iterations: int = 50, seed: int = 0, repeats: int = 3) -> List[dict]:
    """
    Seconds per AMA iteration on random graphs with |E| = multiplier * n, and
    the ratio to the previous multiplier
    """
    rng = named_stream(seed, 'iteration_scaling')
    data = DataMatrix(rng.standard_normal((p, n)))
    results = []
    for multiplier in edge_multipliers:
        graph = random_graph(n, multiplier * n, rng)
        degree = np.bincount(np.concatenate([graph.heads, graph.tails]), minlength=n).max()
        # 2 * max degree bounds the largest Laplacian eigenvalue
        config = SolverConfig(method='ama', step_rule='fixed', rho=0.95 / (2.0 * degree),
                              max_iterations=iterations, gap_tolerance=np.finfo(float).tiny,
                              record_history=False)
        solver = AMASolver(ClusteringProblem(data, graph, 1e-3), config)
        seconds = min(solver.solve().elapsed for _ in range(repeats)) / iterations
        results.append({
            'edges': graph.edge_count,
            'seconds_per_iteration': seconds,
            'ratio': seconds / results[-1]['seconds_per_iteration'] if results else None,
        })
    return results
