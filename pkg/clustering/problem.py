"""
Problem definition for sum-of-norms convex clustering.

Columns are observations: ``values[:, i]`` is x_i. Per-edge quantities are
stored edge-major (column ``l`` belongs to edge ``l``) so every sweep over the
graph is a linear pass over contiguous arrays.
"""
import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Tuple

import numpy as np
from django.conf import settings
from scipy import sparse
from scipy.sparse.csgraph import connected_components as _csgraph_components
from scipy.spatial.distance import pdist, squareform

from clustering.exceptions import StructuralError, InvariantViolation, InvalidArgument, ProjectionViolation

logger = logging.getLogger('clustering')

PROVENANCES = ('mst', 'knn', 'mst+knn', 'dmsts', 'full', 'custom')


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


class DataMatrix:
    def __init__(self, values, mask=None):
        values = np.array(values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(1, -1)
        if values.ndim != 2:
            raise StructuralError('Data must be a p x n matrix, got %i dimensions' % values.ndim)
        p, n = values.shape
        if p < 1 or n < 1:
            raise StructuralError('Data must have at least one feature and one observation')
        if mask is not None:
            mask = np.array(mask, dtype=bool)
            if mask.shape != values.shape:
                raise StructuralError('Mask shape %s does not match data shape %s' % (mask.shape, values.shape))
            if mask.all():
                mask = None
            elif not mask.any(axis=0).all():
                missing_column = int(np.flatnonzero(~mask.any(axis=0))[0])
                raise InvariantViolation('Observation %i has no observed entry' % missing_column)
        observed = values if mask is None else values[mask]
        if not np.all(np.isfinite(observed)):
            raise InvariantViolation('Observed data entries must be finite')
        if mask is not None:
            # unobserved entries carry no information, keep them at zero
            values[~mask] = 0.0
        self.__values = _frozen(values)
        self.__mask = _frozen(mask) if mask is not None else None

    @property
    def values(self) -> np.ndarray:
        return self.__values

    @property
    def mask(self) -> Optional[np.ndarray]:
        return self.__mask

    @property
    def p(self) -> int:
        return self.__values.shape[0]

    @property
    def n(self) -> int:
        return self.__values.shape[1]

    @property
    def has_missing(self) -> bool:
        return self.__mask is not None

    @property
    def entry_weights(self) -> np.ndarray:
        """
        0/1 weights of the fit term, all ones for fully observed data
        """
        if self.__mask is None:
            return np.ones_like(self.__values)
        return self.__mask.astype(float)

    def feature_means(self) -> np.ndarray:
        weights = self.entry_weights
        return (self.__values * weights).sum(axis=1) / np.maximum(weights.sum(axis=1), 1.0)

    def filled(self, fill: np.ndarray) -> 'DataMatrix':
        """
        Fully observed copy with unobserved entries taken from ``fill``
        :param fill: p x n matrix
        :return: DataMatrix without mask
        """
        if self.__mask is None:
            return self
        values = np.where(self.__mask, self.__values, fill)
        return DataMatrix(values)

    def standardized(self) -> 'DataMatrix':
        """
        Centre every feature and scale it to unit variance over its observed
        entries. Constant features are only centred.
        """
        weights = self.entry_weights
        counts = np.maximum(weights.sum(axis=1), 1.0)
        means = (self.__values * weights).sum(axis=1) / counts
        centred = (self.__values - means[:, None]) * weights
        scale = np.sqrt((centred ** 2).sum(axis=1) / counts)
        scale[scale == 0.0] = 1.0
        return DataMatrix(centred / scale[:, None], self.__mask)

    def columns(self, nodes) -> 'DataMatrix':
        nodes = np.asarray(nodes, dtype=int)
        mask = self.__mask[:, nodes] if self.__mask is not None else None
        return DataMatrix(self.__values[:, nodes], mask)

    def __eq__(self, other):
        if not isinstance(other, DataMatrix):
            return NotImplemented
        same_mask = (self.mask is None and other.mask is None) or (
                self.mask is not None and other.mask is not None and np.array_equal(self.mask, other.mask))
        return same_mask and np.array_equal(self.values, other.values)

    __hash__ = None

    def __repr__(self):
        return 'DataMatrix(p=%i, n=%i, missing=%s)' % (self.p, self.n, self.has_missing)


class WeightGraph:
    def __init__(self, n: int, edges: Iterable = (), provenance: str = 'custom'):
        edges = list(edges)
        if edges:
            heads, tails, weights = (np.asarray(column) for column in zip(*edges))
        else:
            heads, tails, weights = np.empty(0, dtype=int), np.empty(0, dtype=int), np.empty(0)
        self.__init_arrays(n, heads, tails, weights, provenance)

    @classmethod
    def from_arrays(cls, n: int, heads, tails, weights, provenance: str = 'custom') -> 'WeightGraph':
        graph = cls.__new__(cls)
        graph.__init_arrays(n, np.asarray(heads), np.asarray(tails), np.asarray(weights), provenance)
        return graph

    def __init_arrays(self, n, heads, tails, weights, provenance):
        if int(n) < 0:
            raise StructuralError('Node count must be nonnegative')
        if provenance not in PROVENANCES:
            raise InvalidArgument('Unknown graph provenance %s' % provenance)
        n = int(n)
        heads = np.asarray(heads, dtype=np.int64).ravel()
        tails = np.asarray(tails, dtype=np.int64).ravel()
        weights = np.asarray(weights, dtype=float).ravel()
        if not (heads.size == tails.size == weights.size):
            raise StructuralError('Edge arrays must have equal length')
        low, high = np.minimum(heads, tails), np.maximum(heads, tails)
        if np.any(low == high):
            raise InvariantViolation('Self loops are not allowed')
        if low.size and (low.min() < 0 or high.max() >= n):
            raise InvariantViolation('Edge endpoint out of range for %i nodes' % n)
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
            raise InvariantViolation('Edge weights must be positive and finite')
        keys = low * max(n, 1) + high
        order = np.argsort(keys, kind='stable')
        keys = keys[order]
        if keys.size > 1 and np.any(keys[1:] == keys[:-1]):
            raise InvariantViolation('Duplicate edge in graph')
        self.__n = n
        self.__heads = _frozen(low[order])
        self.__tails = _frozen(high[order])
        self.__weights = _frozen(weights[order])
        self.__provenance = provenance

    @property
    def n(self) -> int:
        return self.__n

    @property
    def heads(self) -> np.ndarray:
        return self.__heads

    @property
    def tails(self) -> np.ndarray:
        return self.__tails

    @property
    def weights(self) -> np.ndarray:
        return self.__weights

    @property
    def provenance(self) -> str:
        return self.__provenance

    @property
    def edge_count(self) -> int:
        return int(self.__weights.size)

    @property
    def edges(self) -> List[Tuple[int, int, float]]:
        return [(int(i), int(j), float(w)) for i, j, w in zip(self.__heads, self.__tails, self.__weights)]

    @property
    def pairs(self) -> set:
        return set(zip(self.__heads.tolist(), self.__tails.tolist()))

    @property
    def is_connected(self) -> bool:
        return self.__n <= 1 or connected_components(self).K == 1

    def adjacency(self) -> sparse.csr_matrix:
        return sparse.coo_matrix((self.__weights, (self.__heads, self.__tails)), shape=(self.__n, self.__n)).tocsr()

    def with_weights(self, weights, provenance: str = None) -> 'WeightGraph':
        return WeightGraph.from_arrays(self.__n, self.__heads, self.__tails, weights,
                                       provenance or self.__provenance)

    def subgraph(self, nodes) -> 'WeightGraph':
        """
        Graph induced by ``nodes``, relabelled to 0..len(nodes)-1 in the given order
        """
        nodes = np.asarray(nodes, dtype=int)
        position = np.full(self.__n, -1, dtype=np.int64)
        position[nodes] = np.arange(nodes.size)
        keep = (position[self.__heads] >= 0) & (position[self.__tails] >= 0)
        return WeightGraph.from_arrays(nodes.size, position[self.__heads[keep]], position[self.__tails[keep]],
                                       self.__weights[keep], self.__provenance)

    def __eq__(self, other):
        if not isinstance(other, WeightGraph):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.heads, other.heads) and \
            np.array_equal(self.tails, other.tails) and np.array_equal(self.weights, other.weights)

    __hash__ = None

    def __repr__(self):
        return 'WeightGraph(n=%i, edges=%i, provenance=%s)' % (self.n, self.edge_count, self.provenance)


class ClusteringProblem:
    def __init__(self, data: DataMatrix, graph: WeightGraph, gamma: float, multiplicity=None):
        if graph.n != data.n:
            raise StructuralError('Graph has %i nodes but data has %i observations' % (graph.n, data.n))
        gamma = float(gamma)
        if not np.isfinite(gamma) or gamma < 0:
            raise InvalidArgument('gamma must be a nonnegative finite number, got %r' % gamma)
        if multiplicity is None:
            multiplicity = np.ones(data.n)
        multiplicity = np.array(multiplicity, dtype=float).ravel()
        if multiplicity.size != data.n or np.any(multiplicity <= 0) or not np.all(np.isfinite(multiplicity)):
            raise StructuralError('Multiplicities must be %i positive numbers' % data.n)
        self.__data = data
        self.__graph = graph
        self.__gamma = gamma
        self.__multiplicity = _frozen(multiplicity)

    @property
    def data(self) -> DataMatrix:
        return self.__data

    @property
    def graph(self) -> WeightGraph:
        return self.__graph

    @property
    def gamma(self) -> float:
        return self.__gamma

    @property
    def multiplicity(self) -> np.ndarray:
        return self.__multiplicity

    @property
    def radii(self) -> np.ndarray:
        """
        Dual ball radius gamma * w_l for every edge
        """
        return self.__gamma * self.__graph.weights

    def with_gamma(self, gamma: float) -> 'ClusteringProblem':
        return ClusteringProblem(self.__data, self.__graph, gamma, self.__multiplicity)

    def with_data(self, data: DataMatrix) -> 'ClusteringProblem':
        return ClusteringProblem(data, self.__graph, self.__gamma, self.__multiplicity)

    def with_graph(self, graph: WeightGraph) -> 'ClusteringProblem':
        return ClusteringProblem(self.__data, graph, self.__gamma, self.__multiplicity)

    def __repr__(self):
        return 'ClusteringProblem(p=%i, n=%i, edges=%i, gamma=%g)' % (
            self.__data.p, self.__data.n, self.__graph.edge_count, self.__gamma)


@dataclass(frozen=True)
class SolverState:
    U: np.ndarray
    V: np.ndarray
    Z: np.ndarray
    iterations: int
    primal_residual: float
    dual_residual: float
    duality_gap: float
    converged: bool
    method: str
    gamma: float
    dual_history: List[float] = field(default_factory=list)
    max_infeasibility: float = 0.0
    elapsed: float = 0.0
    mm_history: List[float] = field(default_factory=list)

    def __post_init__(self):
        for name in ('U', 'V', 'Z'):
            array = np.array(getattr(self, name), dtype=float)
            object.__setattr__(self, name, _frozen(array))
        if self.V.shape != self.Z.shape or self.V.shape[0] != self.U.shape[0]:
            raise StructuralError('Inconsistent state shapes U%s V%s Z%s' % (self.U.shape, self.V.shape, self.Z.shape))


def canonical_labels(labels) -> np.ndarray:
    """
    Relabel so that clusters are numbered in order of first appearance
    """
    labels = np.asarray(labels).ravel()
    if labels.size == 0:
        return np.empty(0, dtype=np.int64)
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return rank[inverse.ravel()].astype(np.int64)


@dataclass(frozen=True, eq=False)
class Partition:
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise StructuralError('Partition labels must be a vector')
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise StructuralError('Partition labels must be integers')
        object.__setattr__(self, 'labels', _frozen(canonical_labels(labels)))

    @property
    def n(self) -> int:
        return int(self.labels.size)

    @property
    def K(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.K)

    def blocks(self) -> List[np.ndarray]:
        return [np.flatnonzero(self.labels == k) for k in range(self.K)]

    def indicator(self) -> sparse.csr_matrix:
        """
        n x K membership matrix
        """
        return sparse.csr_matrix((np.ones(self.n), (np.arange(self.n), self.labels)), shape=(self.n, self.K))

    def is_refinement_of(self, other: 'Partition') -> bool:
        """
        True when every block of this partition lies inside one block of ``other``
        """
        pairs = np.unique(np.stack([self.labels, other.labels]), axis=1)
        return pairs.shape[1] == self.K

    def __eq__(self, other):
        if not isinstance(other, Partition):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)

    __hash__ = None

    def __repr__(self):
        return 'Partition(n=%i, K=%i)' % (self.n, self.K)


def _check_centroids(problem: ClusteringProblem, U) -> np.ndarray:
    U = np.asarray(U, dtype=float)
    if U.shape != problem.data.values.shape:
        raise StructuralError('Centroid matrix %s does not match data %s' % (U.shape, problem.data.values.shape))
    return U


def edge_differences(graph: WeightGraph, U: np.ndarray) -> np.ndarray:
    """
    p x |E| matrix whose column l is u_i - u_j for edge l = (i, j)
    """
    return U[:, graph.heads] - U[:, graph.tails]


def fusion_penalty(graph: WeightGraph, U: np.ndarray) -> float:
    if graph.edge_count == 0:
        return 0.0
    return float(np.dot(graph.weights, np.linalg.norm(edge_differences(graph, U), axis=0)))


def objective_value(problem: ClusteringProblem, U) -> float:
    """
    Sum-of-norms objective. With a mask the fit term only runs over observed entries.
    :param problem: ClusteringProblem
    :param U: p x n centroid matrix
    :return: objective value
    """
    U = _check_centroids(problem, U)
    residual = (problem.data.values - U) * problem.data.entry_weights
    fit = 0.5 * float(np.dot(problem.multiplicity, (residual ** 2).sum(axis=0)))
    return fit + problem.gamma * fusion_penalty(problem.graph, U)


def prox_group_norm(v, threshold: float) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if threshold < 0:
        raise InvalidArgument('Threshold must be nonnegative')
    norm = np.linalg.norm(v)
    if norm <= threshold:
        return np.zeros_like(v)
    return (1.0 - threshold / norm) * v


def project_dual_ball(z, radius: float) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if radius < 0:
        raise InvalidArgument('Radius must be nonnegative')
    norm = np.linalg.norm(z)
    if norm <= radius:
        return z.copy()
    return radius * z / norm


def prox_group_norm_columns(V: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """
    Group soft-thresholding applied to every column of V with its own threshold
    """
    norms = np.linalg.norm(V, axis=0)
    scale = np.zeros_like(norms)
    active = norms > thresholds
    scale[active] = 1.0 - thresholds[active] / norms[active]
    return V * scale


def project_dual_columns(Z: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """
    Projection of every column of Z onto the ball of its radius
    """
    norms = np.linalg.norm(Z, axis=0)
    scale = np.ones_like(norms)
    outside = norms > radii
    scale[outside] = radii[outside] / norms[outside]
    return Z * scale


def dual_infeasibility(problem: ClusteringProblem, Z) -> float:
    """
    Largest excess of ||z_l|| over its radius, 0 when feasible
    """
    Z = np.asarray(Z, dtype=float)
    if Z.shape[1] == 0:
        return 0.0
    return float(max(0.0, np.max(np.linalg.norm(Z, axis=0) - problem.radii)))


def incidence_matrix(graph: WeightGraph) -> sparse.csr_matrix:
    """
    |E| x n matrix with row l equal to e_i - e_j
    """
    rows = np.repeat(np.arange(graph.edge_count), 2)
    cols = np.column_stack([graph.heads, graph.tails]).ravel()
    vals = np.tile([1.0, -1.0], graph.edge_count)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(graph.edge_count, graph.n))


def dual_value(problem: ClusteringProblem, Z) -> float:
    """
    Lagrangian dual <ZA, X> - 1/2 sum ||(ZA)_i||^2 / m_i
    """
    if problem.data.has_missing:
        raise StructuralError('Dual evaluation requires fully observed data')
    ZA = np.asarray(Z, dtype=float) @ incidence_matrix(problem.graph)
    X = problem.data.values
    return float(np.sum(ZA * X) - 0.5 * np.dot((ZA ** 2).sum(axis=0), 1.0 / problem.multiplicity))


def dual_objective_and_gap(problem: ClusteringProblem, state: SolverState) -> Tuple[float, float]:
    """
    :param problem: ClusteringProblem
    :param state: solved or intermediate state
    :return: (dual value at state.Z, primal value at state.U minus dual value)
    """
    _check_centroids(problem, state.U)
    if state.Z.shape != (problem.data.p, problem.graph.edge_count):
        raise StructuralError('Dual matrix %s does not match %i edges' % (state.Z.shape, problem.graph.edge_count))
    slack = settings.SONCLUSTER['FEASIBILITY_SLACK']
    excess = dual_infeasibility(problem, state.Z)
    if excess > slack * max(1.0, float(problem.radii.max(initial=0.0))):
        raise ProjectionViolation('Dual iterate exceeds its ball by %.3e' % excess)
    dual = dual_value(problem, state.Z)
    return dual, objective_value(problem, state.U) - dual


def connected_components(graph: WeightGraph) -> Partition:
    if graph.n == 0:
        return Partition(np.empty(0, dtype=int))
    _, labels = _csgraph_components(graph.adjacency(), directed=False)
    return Partition(labels)


def restrict(problem: ClusteringProblem, nodes) -> ClusteringProblem:
    """
    Subproblem on ``nodes`` keeping only edges inside the node set
    """
    nodes = np.asarray(nodes, dtype=int)
    return ClusteringProblem(problem.data.columns(nodes), problem.graph.subgraph(nodes), problem.gamma,
                             problem.multiplicity[nodes])


def distance_matrix(values: np.ndarray) -> np.ndarray:
    """
    n x n Euclidean distances between the columns of ``values``
    """
    if values.shape[1] < 2:
        return np.zeros((values.shape[1], values.shape[1]))
    return squareform(pdist(values.T))


def median_pairwise_distance(data: DataMatrix) -> float:
    """
    Scale used for fusion tolerances, 1 when the data has no spread
    """
    if data.n < 2:
        return 1.0
    median = float(np.median(pdist(data.values.T)))
    return median if median > 0 else 1.0


def merge_duplicates(data: DataMatrix) -> Tuple[DataMatrix, np.ndarray, np.ndarray]:
    """
    Collapse identical observations into one node.
    :param data: DataMatrix
    :return: (merged data, multiplicities, index of the merged node of every observation)
    """
    if data.has_missing:
        logger.info('Problem - duplicates are not merged for partially observed data')
        return data, np.ones(data.n), np.arange(data.n)
    _, first, inverse, counts = np.unique(data.values.T, axis=0, return_index=True, return_inverse=True,
                                          return_counts=True)
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    if order.size < data.n:
        logger.info('Problem - merged %i duplicate observations into %i nodes' % (data.n, order.size))
    return DataMatrix(data.values[:, first[order]]), counts[order].astype(float), rank[inverse.ravel()]
