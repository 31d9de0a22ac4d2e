"""
Solution paths over a gamma grid, fusion detection, compression of fused
blocks into weighted super-nodes and the clustering tree read off a path.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from django.conf import settings

from clustering.exceptions import ClusteringException, InvalidArgument, NonMonotoneFusion, NumericalFailure, \
    StructuralError
from clustering.problem import ClusteringProblem, DataMatrix, Partition, SolverState, WeightGraph, \
    connected_components, median_pairwise_distance, objective_value, restrict
from clustering.solvers.abstracts import SolverConfig
from clustering.solvers.admm import ADMMSolver
from clustering.solvers.incidence import IncidenceOperator
from clustering.solvers.solver_factories import SolverFactory

logger = logging.getLogger('clustering')

PATH_MODES = ('exact', 'carp')
DOUBLING_LIMIT = 64


def detect_fusions(state: SolverState, graph: WeightGraph, tolerance: float = None, scale: float = 1.0) -> Partition:
    """
    Clusters are the connected components of the edges whose centroids
    coincide. An edge counts as fused when ||u_i - u_j|| or its split
    variable ||v_l|| is at most tolerance * scale; the split variable comes
    out of a prox and is exactly zero on fused edges.
    :param state: solved state
    :param graph: graph the state was solved on
    :param tolerance: relative tolerance, settings default
    :param scale: data scale, usually the median pairwise distance
    :return: Partition
    """
    if tolerance is None:
        tolerance = settings.SONCLUSTER['FUSION_TOLERANCE']
    U = np.asarray(state.U)
    if graph.edge_count == 0:
        return Partition(np.arange(graph.n))
    threshold = tolerance * scale
    difference_norms = np.linalg.norm(U[:, graph.heads] - U[:, graph.tails], axis=0)
    split_norms = np.linalg.norm(state.V, axis=0) if state.V.shape[1] == graph.edge_count else difference_norms
    fused = (difference_norms <= threshold) | (split_norms <= threshold)
    fused_graph = WeightGraph.from_arrays(graph.n, graph.heads[fused], graph.tails[fused],
                                          np.ones(int(fused.sum())))
    return connected_components(fused_graph)


class CompressedProblem:
    """
    Weighted problem over the blocks of a partition: block k has
    multiplicity n_k, mean x_k and block pair (k, l) the total weight of
    the edges between them.
    """

    def __init__(self, problem: ClusteringProblem, partition: Partition):
        if partition.n != problem.data.n:
            raise StructuralError('Partition covers %i nodes, problem has %i' % (partition.n, problem.data.n))
        if problem.data.has_missing:
            raise StructuralError('Compression needs fully observed data')
        labels = partition.labels
        K = partition.K
        multiplicity = problem.multiplicity
        sizes = np.bincount(labels, weights=multiplicity, minlength=K)
        X = problem.data.values
        means = np.stack([np.bincount(labels, weights=multiplicity * row, minlength=K) for row in X]) / sizes
        graph = problem.graph
        block_heads, block_tails = labels[graph.heads], labels[graph.tails]
        crossing = block_heads != block_tails
        low = np.minimum(block_heads, block_tails)[crossing]
        high = np.maximum(block_heads, block_tails)[crossing]
        keys, inverse = np.unique(low * K + high, return_inverse=True)
        totals = np.bincount(inverse.ravel(), weights=graph.weights[crossing], minlength=keys.size)
        compressed_graph = WeightGraph.from_arrays(K, keys // K, keys % K, totals, graph.provenance)
        self.__partition = partition
        self.__problem = ClusteringProblem(DataMatrix(means), compressed_graph, problem.gamma, sizes)
        self.__constant = 0.5 * float(np.dot(multiplicity, ((X - means[:, labels]) ** 2).sum(axis=0)))

    @property
    def partition(self) -> Partition:
        return self.__partition

    @property
    def problem(self) -> ClusteringProblem:
        return self.__problem

    @property
    def K(self) -> int:
        return self.__partition.K

    @property
    def sizes(self) -> np.ndarray:
        return self.__problem.multiplicity

    @property
    def means(self) -> np.ndarray:
        return self.__problem.data.values

    @property
    def constant(self) -> float:
        """
        1/2 sum m_i ||x_i - x_k(i)||^2, the part of the objective lost to compression
        """
        return self.__constant

    def broadcast(self, U_blocks: np.ndarray) -> np.ndarray:
        return np.asarray(U_blocks)[:, self.__partition.labels]

    def with_gamma(self, gamma: float) -> 'CompressedProblem':
        compressed = CompressedProblem.__new__(CompressedProblem)
        compressed.__partition = self.__partition
        compressed.__problem = self.__problem.with_gamma(gamma)
        compressed.__constant = self.__constant
        return compressed


def compress(problem: ClusteringProblem, partition: Partition) -> CompressedProblem:
    return CompressedProblem(problem, partition)


@dataclass(frozen=True)
class GridSpec:
    """
    Explicit ``gammas`` or ``count`` geometric points from gamma_max * ratio to
    gamma_max; gamma_max is found by doubling when not given.
    """
    gammas: Optional[Sequence[float]] = None
    count: Optional[int] = None
    ratio: Optional[float] = None
    gamma_max: Optional[float] = None

    def __post_init__(self):
        if self.count is None:
            object.__setattr__(self, 'count', settings.SONCLUSTER['GRID_POINTS'])
        if self.ratio is None:
            object.__setattr__(self, 'ratio', settings.SONCLUSTER['GRID_RATIO'])
        if self.gammas is not None:
            gammas = np.unique(np.asarray(self.gammas, dtype=float))
            if gammas.size == 0 or gammas[0] < 0 or not np.all(np.isfinite(gammas)):
                raise InvalidArgument('Grid values must be nonnegative and finite')
            object.__setattr__(self, 'gammas', tuple(gammas.tolist()))
        if self.count < 1:
            raise InvalidArgument('Grid count must be at least 1')
        if not 0 < self.ratio < 1:
            raise InvalidArgument('Grid ratio must lie in (0, 1)')
        if self.gamma_max is not None and not self.gamma_max > 0:
            raise InvalidArgument('gamma_max must be positive')

    @classmethod
    def parse(cls, text: str) -> 'GridSpec':
        """
        ``0.5`` or ``0.1,0.2,0.4`` for explicit values, ``geom:50`` or
        ``geom:50:1e-4`` for a geometric grid ending at gamma_max
        """
        text = text.strip()
        try:
            if text.startswith('geom'):
                arguments = [part for part in text.split(':')[1:] if part]
                count = int(arguments[0]) if arguments else None
                ratio = float(arguments[1]) if len(arguments) > 1 else None
                return cls(count=count, ratio=ratio)
            return cls(gammas=[float(value) for value in text.split(',') if value.strip()])
        except ValueError:
            raise InvalidArgument('Cannot parse gamma specification %s' % text)

    def resolve(self, top: float = None) -> np.ndarray:
        if self.gammas is not None:
            return np.asarray(self.gammas)
        top = self.gamma_max if self.gamma_max is not None else top
        if top is None:
            raise InvalidArgument('A geometric grid needs gamma_max')
        if top == 0:
            return np.zeros(1)
        if self.count == 1:
            return np.array([top])
        return np.geomspace(top * self.ratio, top, self.count)

    def refined(self) -> 'GridSpec':
        """
        Grid with every log-spacing halved; the old points are kept
        """
        if self.gammas is not None:
            gammas = np.asarray(self.gammas)
            positive = gammas[gammas > 0]
            middles = np.sqrt(positive[1:] * positive[:-1])
            return GridSpec(gammas=np.concatenate([gammas, middles]))
        return GridSpec(count=2 * self.count - 1, ratio=self.ratio, gamma_max=self.gamma_max)


@dataclass(frozen=True, eq=False)
class Snapshot:
    gamma: float
    partition: Partition
    centroids: np.ndarray
    U: np.ndarray
    objective: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.partition.K


@dataclass(frozen=True, eq=False)
class ClusterPath:
    data: DataMatrix
    graph: WeightGraph
    mode: str
    snapshots: List[Snapshot]
    truncated: bool = False
    error: Optional[str] = None
    multiplicity: Optional[np.ndarray] = None

    def __post_init__(self):
        gammas = [snapshot.gamma for snapshot in self.snapshots]
        if any(later <= earlier for earlier, later in zip(gammas, gammas[1:])):
            raise StructuralError('Path gammas must be strictly increasing')

    @property
    def gammas(self) -> np.ndarray:
        return np.array([snapshot.gamma for snapshot in self.snapshots])

    @property
    def cluster_counts(self) -> List[int]:
        return [snapshot.K for snapshot in self.snapshots]

    def __len__(self):
        return len(self.snapshots)

    def __iter__(self):
        return iter(self.snapshots)


def _block_centroids(U_blocks: np.ndarray, weights: np.ndarray, fused: Partition) -> np.ndarray:
    totals = np.bincount(fused.labels, weights=weights, minlength=fused.K)
    return np.stack([np.bincount(fused.labels, weights=weights * row, minlength=fused.K) for row in U_blocks]) / totals


def _diagnostics(state: SolverState) -> dict:
    return {
        'method': state.method,
        'iterations': state.iterations,
        'converged': state.converged,
        'duality_gap': state.duality_gap,
        'primal_residual': state.primal_residual,
        'dual_residual': state.dual_residual,
    }


class _SolverCache:
    """
    Keeps the incidence operator and, for ADMM, the factorized system of the
    graph currently being solved
    """

    def __init__(self, config: SolverConfig):
        self.__config = config
        self.__solver_class = SolverFactory(config).obtain_solver()
        self.__graph = None
        self.__operator = None
        self.__system = None

    def solve(self, problem: ClusteringProblem, warm_start=None) -> SolverState:
        if self.__graph is not problem.graph:
            self.__graph = problem.graph
            self.__operator = IncidenceOperator(problem.graph, problem.multiplicity)
            self.__system = None
        if self.__solver_class is ADMMSolver:
            solver = ADMMSolver(problem, self.__config, self.__operator, self.__system)
            self.__system = solver.system
        else:
            solver = self.__solver_class(problem, self.__config, self.__operator)
        return solver.solve(warm_start)


def _exact_path(problem: ClusteringProblem, gammas, config: SolverConfig, strict: bool, scale: float,
                snapshots: list):
    cache = _SolverCache(config)
    partition = Partition(np.arange(problem.data.n))
    compressed = compress(problem, partition)
    warm = None
    for gamma in gammas:
        if strict:
            full = problem.with_gamma(gamma)
            state = cache.solve(full, warm)
            warm = state
            fused = detect_fusions(state, full.graph, scale=scale)
            U = np.asarray(state.U)
            snapshots.append(Snapshot(gamma, fused, _block_centroids(U, full.multiplicity, fused), U,
                                      objective_value(full, U), _diagnostics(state)))
            continue
        compressed = compressed.with_gamma(gamma)
        state = cache.solve(compressed.problem, warm)
        block_fusions = detect_fusions(state, compressed.problem.graph, scale=scale)
        U = compressed.broadcast(state.U)
        merged = Partition(block_fusions.labels[partition.labels])
        centroids = _block_centroids(np.asarray(state.U), compressed.sizes, block_fusions)
        snapshots.append(Snapshot(gamma, merged, centroids, U, objective_value(problem.with_gamma(gamma), U),
                                  _diagnostics(state)))
        if merged.K < partition.K:
            # fused blocks stay fused: continue on the coarser problem
            partition = merged
            compressed = compress(problem.with_gamma(gamma), partition)
            warm = None
        else:
            warm = state


def _carp_path(problem: ClusteringProblem, gammas, config: SolverConfig, scale: float, snapshots: list):
    config = config.replace(method='admm')
    operator = IncidenceOperator(problem.graph, problem.multiplicity)
    system = None
    warm = None
    for gamma in gammas:
        full = problem.with_gamma(gamma)
        solver = ADMMSolver(full, config, operator, system)
        system = solver.system
        state = solver.solve(warm, rounds=1)
        warm = state
        fused = detect_fusions(state, full.graph, scale=scale)
        U = np.asarray(state.U)
        snapshots.append(Snapshot(gamma, fused, _block_centroids(U, full.multiplicity, fused), U,
                                  objective_value(full, U), _diagnostics(state)))


def compute_path(data: DataMatrix, graph: WeightGraph, grid_spec: GridSpec = None, mode: str = 'exact',
                 config: SolverConfig = None, strict: bool = False, multiplicity=None) -> ClusterPath:
    """
    :param data: fully observed DataMatrix
    :param graph: WeightGraph over the observations
    :param grid_spec: GridSpec, default geometric grid up to gamma_max
    :param mode: exact (warm-started solves, fusions enforced by compression) or
        carp (one ADMM round per grid point)
    :param config: SolverConfig for exact mode
    :param strict: exact mode without compression, fusions may split
    :param multiplicity: node multiplicities, ones by default
    :return: ClusterPath
    """
    if mode not in PATH_MODES:
        raise InvalidArgument('Unknown path mode %s' % mode)
    grid_spec = grid_spec or GridSpec()
    config = config or SolverConfig()
    if not graph.is_connected:
        logger.warning('Path - graph is disconnected, the path ends with one cluster per component')
    top = None
    if grid_spec.gammas is None and grid_spec.gamma_max is None:
        top = gamma_max(data, graph, config, multiplicity)
    gammas = grid_spec.resolve(top)
    logger.info('Path - %s path over %i grid points up to gamma=%g' % (mode, gammas.size, gammas[-1]))
    problem = ClusteringProblem(data, graph, 0.0, multiplicity)
    scale = median_pairwise_distance(data)
    snapshots = []
    try:
        if mode == 'exact':
            _exact_path(problem, gammas, config, strict, scale, snapshots)
        else:
            _carp_path(problem, gammas, config, scale, snapshots)
    except ClusteringException as e:
        logger.error('Path - solver failure, path truncated - %s' % str(e))
        return ClusterPath(data, graph, mode, snapshots, truncated=True, error=str(e), multiplicity=multiplicity)
    return ClusterPath(data, graph, mode, snapshots, multiplicity=multiplicity)


def _component_gamma_max(problem: ClusteringProblem, config: SolverConfig, scale: float) -> float:
    n = problem.data.n
    if n < 2:
        return 0.0
    X = problem.data.values
    weights = problem.multiplicity
    centre = X @ weights / weights.sum()
    spread = float(np.max(np.linalg.norm(X - centre[:, None], axis=0)))
    if spread == 0:
        return 0.0
    mean_degree = 2.0 * problem.graph.weights.sum() / n
    cache = _SolverCache(config)

    def fused_at(gamma, warm=None):
        state = cache.solve(problem.with_gamma(gamma), warm)
        return detect_fusions(state, problem.graph, scale=scale).K == 1, state

    gamma = spread / (1.5 * mean_degree)
    fused, state = fused_at(gamma)
    steps = 0
    if fused:
        while fused and steps < DOUBLING_LIMIT:
            steps += 1
            fused, state = fused_at(gamma / 2.0)
            if fused:
                gamma /= 2.0
        return gamma
    while not fused:
        steps += 1
        if steps > DOUBLING_LIMIT:
            raise NumericalFailure('Path - no full fusion after %i doublings' % DOUBLING_LIMIT)
        gamma *= 2.0
        fused, state = fused_at(gamma, state)
    return gamma


def component_gamma_max(data: DataMatrix, graph: WeightGraph, config: SolverConfig = None,
                        multiplicity=None) -> List[float]:
    """
    gamma* of every connected component, ordered by component label
    """
    config = config or SolverConfig()
    problem = ClusteringProblem(data, graph, 0.0, multiplicity)
    scale = median_pairwise_distance(data)
    components = connected_components(graph)
    return [_component_gamma_max(restrict(problem, block), config, scale) for block in components.blocks()]


def gamma_max(data: DataMatrix, graph: WeightGraph, config: SolverConfig = None, multiplicity=None) -> float:
    """
    Smallest gamma, within a factor 2, at which every component is fused to
    one cluster. Found by doubling or halving from a scale-based guess.
    """
    values = component_gamma_max(data, graph, config, multiplicity)
    if len(values) > 1:
        logger.warning('Path - disconnected graph, gamma_max is the largest of %i component values' % len(values))
    value = max(values) if values else 0.0
    logger.info('Path - gamma_max=%g' % value)
    return value


def path_deviation(path_a: ClusterPath, path_b: ClusterPath) -> float:
    """
    max over shared grid points of ||U_a - U_b||_F / (1 + ||X||_F)
    """
    scale = 1.0 + float(np.linalg.norm(path_a.data.values))
    by_gamma = {snapshot.gamma: snapshot for snapshot in path_b}
    deviations = []
    for snapshot in path_a:
        match = by_gamma.get(snapshot.gamma)
        if match is None:
            candidates = [gamma for gamma in by_gamma if np.isclose(gamma, snapshot.gamma, rtol=1e-12, atol=0)]
            match = by_gamma[candidates[0]] if candidates else None
        if match is not None:
            deviations.append(float(np.linalg.norm(snapshot.U - match.U)) / scale)
    if not deviations:
        raise InvalidArgument('Paths share no grid point')
    return max(deviations)


def expand_path(path: ClusterPath, inverse, data: DataMatrix) -> ClusterPath:
    """
    Path over the original observations of a path solved on merged duplicates
    :param path: path over merged nodes
    :param inverse: merged node of every original observation
    :param data: original data
    """
    inverse = np.asarray(inverse, dtype=int)
    snapshots = [Snapshot(snapshot.gamma, Partition(snapshot.partition.labels[inverse]), snapshot.centroids,
                          np.asarray(snapshot.U)[:, inverse], snapshot.objective, snapshot.diagnostics)
                 for snapshot in path]
    return ClusterPath(data, path.graph, path.mode, snapshots, path.truncated, path.error)


@dataclass(frozen=True)
class Merge:
    height: float
    left: int
    right: int
    node: int
    size: int


class Dendrogram:
    """
    Binary merge tree over the observations. Leaves are 0..n-1, merge number t
    creates node n + t. Several clusters fusing at one grid point become
    equal-height merges ordered by smallest member.
    """

    def __init__(self, n: int, merges: List[Merge], gammas: List[float]):
        self.__n = n
        self.__merges = list(merges)
        self.__gammas = list(gammas)
        children = {}
        for merge in self.__merges:
            children[merge.node] = (merge.left, merge.right)
        self.__children = children
        merged = {child for pair in children.values() for child in pair}
        self.__roots = [node for node in range(n + len(self.__merges)) if node not in merged]

    @property
    def n(self) -> int:
        return self.__n

    @property
    def merges(self) -> List[Merge]:
        return self.__merges

    @property
    def fusion_gammas(self) -> List[float]:
        """
        gamma of every merge, whatever the display height is
        """
        return self.__gammas

    @property
    def roots(self) -> List[int]:
        return self.__roots

    @property
    def heights(self) -> List[float]:
        return [merge.height for merge in self.__merges]

    def height(self, node: int) -> float:
        if node < self.__n:
            return 0.0
        return self.__merges[node - self.__n].height

    def children(self, node: int):
        return self.__children.get(node, ())

    def leaves(self, node: int) -> List[int]:
        if node < self.__n:
            return [node]
        left, right = self.__children[node]
        return sorted(self.leaves(left) + self.leaves(right))

    def tree(self, node: int) -> dict:
        return {
            'node': node,
            'height': self.height(node),
            'children': [self.tree(child) for child in self.children(node)],
        }

    def to_json(self):
        """
        One {node, height, children} tree per root, as a list when the path
        ends with several clusters
        """
        trees = [self.tree(root) for root in self.__roots]
        return trees[0] if len(trees) == 1 else trees

    def newick(self, float_format: str = None) -> str:
        float_format = float_format or settings.SONCLUSTER['FLOAT_FORMAT']

        def render(node, parent_height):
            length = float_format % (parent_height - self.height(node))
            if node < self.__n:
                return '%i:%s' % (node, length)
            left, right = self.__children[node]
            return '(%s,%s):%s' % (render(left, self.height(node)), render(right, self.height(node)), length)

        trees = []
        for root in self.__roots:
            if root < self.__n:
                trees.append('%i;' % root)
            else:
                left, right = self.__children[root]
                trees.append('(%s,%s);' % (render(left, self.height(root)), render(right, self.height(root))))
        return '\n'.join(trees)

    def linkage_matrix(self) -> np.ndarray:
        """
        SciPy linkage matrix, only defined for a single tree
        """
        if len(self.__roots) != 1:
            raise InvalidArgument('Linkage matrix needs a single tree, the dendrogram has %i' % len(self.__roots))
        return np.array([[merge.left, merge.right, merge.height, merge.size] for merge in self.__merges],
                        dtype=float).reshape(-1, 4)


def extract_dendrogram(path: ClusterPath, kind: str = 'gamma') -> Dendrogram:
    """
    :param path: ClusterPath with monotone fusions
    :param kind: heights are fusion gammas (gamma) or the fusion order (rank)
    :return: Dendrogram
    """
    if kind not in ('gamma', 'rank'):
        raise InvalidArgument('Unknown dendrogram height %s' % kind)
    n = path.data.n
    previous = Partition(np.arange(n))
    previous_gamma = 0.0
    # canonical labels: a smaller cluster label means a smaller first member
    node_of_cluster = list(range(n))
    sizes = [1] * n
    merges = []
    gammas = []
    rank = 0
    for snapshot in path:
        current = snapshot.partition
        if not previous.is_refinement_of(current):
            raise NonMonotoneFusion('Path - clusters split between gamma=%g and gamma=%g'
                                    % (previous_gamma, snapshot.gamma), (previous_gamma, snapshot.gamma))
        if current.K < previous.K:
            rank += 1
            height = snapshot.gamma if kind == 'gamma' else float(rank)
            new_nodes, new_sizes = [], []
            for block in current.blocks():
                parts = np.unique(previous.labels[block]).tolist()
                node, size = node_of_cluster[parts[0]], sizes[parts[0]]
                for part in parts[1:]:
                    size += sizes[part]
                    merges.append(Merge(height, node, node_of_cluster[part], n + len(merges), size))
                    gammas.append(snapshot.gamma)
                    node = n + len(merges) - 1
                new_nodes.append(node)
                new_sizes.append(size)
            node_of_cluster, sizes = new_nodes, new_sizes
        previous, previous_gamma = current, snapshot.gamma
    return Dendrogram(n, merges, gammas)
