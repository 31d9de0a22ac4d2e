"""
Sparse weight graphs over the observations: minimum spanning trees, k-nearest
neighbour graphs, their union, disjoint MSTs and the complete graph, plus the
weighting schemes applied on top of a topology.

Graphs built here carry unit weights until ``assign_weights`` runs.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from django.conf import settings
from scipy.cluster.hierarchy import DisjointSet

from clustering.exceptions import InvalidArgument, InvariantViolation, ParseError
from clustering.problem import DataMatrix, WeightGraph, distance_matrix

logger = logging.getLogger('clustering')

GRAPH_METHODS = ('mst', 'knn', 'mst_plus_knn', 'dmsts', 'full')
WEIGHT_KINDS = ('uniform', 'inverse_euclidean', 'gaussian', 'convex_combo')


@dataclass(frozen=True)
class WeightKind:
    kind: str = 'gaussian'
    # None uses max(3, n // 10) capped at n - 1
    local_scale_neighbors: Optional[int] = None
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in WEIGHT_KINDS:
            raise InvalidArgument('Unknown weight kind %s' % self.kind)
        if self.local_scale_neighbors is not None and self.local_scale_neighbors < 1:
            raise InvalidArgument('local_scale_neighbors must be at least 1')
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidArgument('alpha must lie in [0, 1], got %r' % self.alpha)

    @classmethod
    def parse(cls, text: str) -> 'WeightKind':
        """
        Accepts ``uniform``, ``inverse_euclidean``, ``gaussian[:m]`` and
        ``convex_combo:alpha[:m]``
        """
        kind, _, rest = text.strip().partition(':')
        arguments = [part for part in rest.split(':') if part]
        try:
            if kind == 'gaussian':
                return cls('gaussian', int(arguments[0]) if arguments else None)
            if kind in ('convex_combo', 'convex'):
                neighbors = int(arguments[1]) if len(arguments) > 1 else None
                return cls('convex_combo', neighbors, float(arguments[0]))
        except (IndexError, ValueError):
            raise InvalidArgument('Cannot parse weight specification %s' % text)
        if arguments:
            raise InvalidArgument('Weight kind %s takes no parameters' % kind)
        return cls(kind)

    def describe(self) -> str:
        if self.kind == 'convex_combo':
            return 'convex_combo:%r' % self.alpha
        if self.kind == 'gaussian' and self.local_scale_neighbors:
            return 'gaussian:%i' % self.local_scale_neighbors
        return self.kind


@dataclass(frozen=True)
class GraphSpec:
    method: str = 'mst_plus_knn'
    k: int = 3
    M: int = 1
    weights: WeightKind = field(default_factory=WeightKind)

    def __post_init__(self):
        if self.method not in GRAPH_METHODS:
            raise InvalidArgument('Unknown graph method %s' % self.method)
        if self.k < 1:
            raise InvalidArgument('k must be at least 1')
        if self.M < 1:
            raise InvalidArgument('M must be at least 1')

    @classmethod
    def parse(cls, text: str, weights: WeightKind = None) -> 'GraphSpec':
        """
        Accepts ``mst``, ``full``, ``knn:k``, ``mst+knn:k`` and ``dmsts:M``
        """
        method, _, argument = text.strip().partition(':')
        method = {'mst+knn': 'mst_plus_knn'}.get(method, method)
        weights = weights or WeightKind()
        try:
            if method in ('knn', 'mst_plus_knn'):
                return cls(method, k=int(argument) if argument else 3, weights=weights)
            if method == 'dmsts':
                return cls(method, M=int(argument) if argument else 1, weights=weights)
        except ValueError:
            raise InvalidArgument('Cannot parse graph specification %s' % text)
        if argument:
            raise InvalidArgument('Graph method %s takes no parameters' % method)
        return cls(method, weights=weights)

    def describe(self) -> str:
        if self.method in ('knn', 'mst_plus_knn'):
            return '%s:%i' % ({'mst_plus_knn': 'mst+knn'}.get(self.method, self.method), self.k)
        if self.method == 'dmsts':
            return 'dmsts:%i' % self.M
        return self.method


def _sorted_pairs(distances: np.ndarray):
    """
    All pairs i < j ordered by (distance, i, j)
    """
    heads, tails = np.triu_indices(distances.shape[0], k=1)
    lengths = distances[heads, tails]
    order = np.lexsort((tails, heads, lengths))
    return heads[order], tails[order]


def _kruskal(n: int, heads, tails, excluded: set) -> list:
    forest = DisjointSet(range(n))
    chosen = []
    for i, j in zip(heads, tails):
        if (i, j) in excluded:
            continue
        if forest.merge(i, j):
            chosen.append((i, j))
            if len(chosen) == n - 1:
                break
    return chosen


def _unit_graph(n: int, pairs, provenance: str) -> WeightGraph:
    pairs = sorted(pairs)
    heads = [i for i, _ in pairs]
    tails = [j for _, j in pairs]
    return WeightGraph.from_arrays(n, heads, tails, np.ones(len(pairs)), provenance)


def build_mst(data: DataMatrix) -> WeightGraph:
    """
    Euclidean minimum spanning tree by Kruskal, ties broken by index pair
    :param data: DataMatrix without duplicate observations
    :return: WeightGraph with n - 1 unit-weight edges
    """
    if data.n < 2:
        logger.warning('Graph - minimum spanning tree of %i node(s) has no edges' % data.n)
        return WeightGraph(data.n, provenance='mst')
    heads, tails = _sorted_pairs(distance_matrix(data.values))
    return _unit_graph(data.n, _kruskal(data.n, heads.tolist(), tails.tolist(), set()), 'mst')


def _knn_pairs(distances: np.ndarray, k: int) -> set:
    n = distances.shape[0]
    masked = distances.copy()
    np.fill_diagonal(masked, np.inf)
    # stable sort keeps the smaller index first among equal distances
    neighbors = np.argsort(masked, axis=1, kind='stable')[:, :k]
    pairs = set()
    for i in range(n):
        for j in neighbors[i].tolist():
            pairs.add((min(i, j), max(i, j)))
    return pairs


def build_knn(data: DataMatrix, k: int) -> WeightGraph:
    if k < 1 or k > data.n - 1:
        raise InvalidArgument('k must lie in [1, n - 1] = [1, %i], got %i' % (data.n - 1, k))
    return _unit_graph(data.n, _knn_pairs(distance_matrix(data.values), k), 'knn')


def build_mst_plus_knn(data: DataMatrix, k: int) -> WeightGraph:
    if k < 1 or k > data.n - 1:
        raise InvalidArgument('k must lie in [1, n - 1] = [1, %i], got %i' % (data.n - 1, k))
    distances = distance_matrix(data.values)
    heads, tails = _sorted_pairs(distances)
    pairs = set(_kruskal(data.n, heads.tolist(), tails.tolist(), set())) | _knn_pairs(distances, k)
    return _unit_graph(data.n, pairs, 'mst+knn')


def dmst_trees(data: DataMatrix, M: int) -> list:
    """
    Up to M edge-disjoint spanning trees, each the MST of the edges unused by
    the previous ones
    :return: list of trees, each a list of (i, j) pairs
    """
    if M < 1:
        raise InvalidArgument('M must be at least 1')
    if data.n < 2:
        logger.warning('Graph - disjoint spanning trees of %i node(s) have no edges' % data.n)
        return []
    heads, tails = _sorted_pairs(distance_matrix(data.values))
    heads, tails = heads.tolist(), tails.tolist()
    used = set()
    trees = []
    for tree_index in range(M):
        tree = _kruskal(data.n, heads, tails, used)
        if len(tree) < data.n - 1:
            logger.warning('Graph - only %i of %i edge-disjoint spanning trees exist' % (tree_index, M))
            break
        trees.append(tree)
        used.update(tree)
    return trees


def build_dmsts(data: DataMatrix, M: int) -> WeightGraph:
    pairs = [pair for tree in dmst_trees(data, M) for pair in tree]
    return _unit_graph(data.n, pairs, 'dmsts')


def build_full(data: DataMatrix) -> WeightGraph:
    heads, tails = np.triu_indices(data.n, k=1)
    return WeightGraph.from_arrays(data.n, heads, tails, np.ones(heads.size), 'full')


def local_scale_count(n: int, neighbors: Optional[int] = None) -> int:
    if neighbors is None:
        neighbors = max(3, n // 10)
    return max(1, min(neighbors, n - 1))


def local_scales(data: DataMatrix, neighbors: Optional[int] = None) -> np.ndarray:
    """
    sigma_i = median distance from x_i to its m nearest neighbours, self excluded
    """
    if data.n < 2:
        return np.ones(data.n)
    distances = distance_matrix(data.values)
    np.fill_diagonal(distances, np.inf)
    m = local_scale_count(data.n, neighbors)
    nearest = np.sort(distances, axis=1)[:, :m]
    return np.median(nearest, axis=1)


def gaussian_kernel(lengths: np.ndarray, scales_i: np.ndarray, scales_j: np.ndarray) -> np.ndarray:
    weights = np.exp(-lengths ** 2 / (scales_i * scales_j))
    return np.maximum(weights, np.finfo(float).tiny)


def edge_lengths(graph: WeightGraph, data: DataMatrix) -> np.ndarray:
    values = data.values
    return np.linalg.norm(values[:, graph.heads] - values[:, graph.tails], axis=0)


def assign_weights(graph: WeightGraph, data: DataMatrix, weight_kind: WeightKind) -> WeightGraph:
    """
    Weights on the edges of ``graph``; topology and provenance are kept
    :param graph: WeightGraph whose weights are ignored
    :param data: DataMatrix
    :param weight_kind: WeightKind
    :return: WeightGraph
    """
    lengths = edge_lengths(graph, data)
    if np.any(lengths == 0):
        raise InvariantViolation('Zero-length edge, duplicate observations were not merged')
    if weight_kind.kind == 'uniform':
        return graph.with_weights(np.ones(graph.edge_count))
    if weight_kind.kind == 'inverse_euclidean':
        return graph.with_weights(1.0 / lengths)
    scales = local_scales(data, weight_kind.local_scale_neighbors)
    gaussian = gaussian_kernel(lengths, scales[graph.heads], scales[graph.tails])
    if weight_kind.kind == 'gaussian':
        return graph.with_weights(gaussian)
    return graph.with_weights((1.0 - weight_kind.alpha) + weight_kind.alpha * gaussian)


def hierarchy_weights(labels, meta_labels, levels: Sequence[float] = (10.0, 1.0, 0.1)) -> WeightGraph:
    """
    Complete graph weighted by level: levels[0] inside a cluster, levels[1]
    inside a super-cluster, levels[2] everywhere else
    """
    labels = np.asarray(labels)
    meta_labels = np.asarray(meta_labels)
    if labels.shape != meta_labels.shape:
        raise InvalidArgument('labels and meta labels differ in length')
    if len(levels) != 3 or min(levels) <= 0:
        raise InvalidArgument('Three positive level weights are required')
    heads, tails = np.triu_indices(labels.size, k=1)
    weights = np.where(labels[heads] == labels[tails], levels[0],
                       np.where(meta_labels[heads] == meta_labels[tails], levels[1], levels[2]))
    return WeightGraph.from_arrays(labels.size, heads, tails, weights, 'custom')


def build_graph(data: DataMatrix, spec: GraphSpec) -> WeightGraph:
    builders = {
        'mst': lambda: build_mst(data),
        'knn': lambda: build_knn(data, spec.k),
        'mst_plus_knn': lambda: build_mst_plus_knn(data, spec.k),
        'dmsts': lambda: build_dmsts(data, spec.M),
        'full': lambda: build_full(data),
    }
    graph = assign_weights(builders[spec.method](), data, spec.weights)
    if not graph.is_connected:
        logger.warning('Graph - %s graph on %i nodes is disconnected' % (spec.describe(), graph.n))
    logger.debug('Graph - built %s with %i edges' % (spec.describe(), graph.edge_count))
    return graph


def write_edges(graph: WeightGraph, path) -> None:
    frame = pd.DataFrame({'i': graph.heads, 'j': graph.tails, 'w': graph.weights})
    frame.to_csv(path, index=False, float_format=settings.SONCLUSTER['FLOAT_FORMAT'])


def read_edges(path, n: Optional[int] = None) -> WeightGraph:
    try:
        frame = pd.read_csv(path, dtype={'i': np.int64, 'j': np.int64, 'w': float})
    except (ValueError, pd.errors.ParserError) as e:
        raise ParseError('Edge list %s cannot be parsed - %s' % (path, str(e)))
    if list(frame.columns) != ['i', 'j', 'w']:
        raise ParseError('Edge list header must be i,j,w', line=1)
    if n is None:
        n = int(max(frame['i'].max(), frame['j'].max())) + 1 if len(frame) else 0
    return WeightGraph.from_arrays(n, frame['i'].to_numpy(), frame['j'].to_numpy(), frame['w'].to_numpy(), 'custom')
