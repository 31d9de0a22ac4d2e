"""
Run orchestration behind the soncluster management command: load or
generate data, build the graph and write the artifacts of one mode.
"""
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from django.conf import settings

from clustering.exceptions import ClusteringException, InvalidArgument, NonMonotoneFusion
from clustering.exports import write_dendrogram, write_json, write_labels_csv, write_manifest, write_path_csv, \
    write_selection
from clustering.generators import GeneratorSpec, cube_half_edges, generate
from clustering.graphs import GraphSpec, WeightKind, build_graph
from clustering.path import ClusterPath, GridSpec, Snapshot, compute_path, detect_fusions, expand_path, \
    extract_dendrogram, gamma_max
from clustering.problem import ClusteringProblem, DataMatrix, Partition, median_pairwise_distance, \
    merge_duplicates, objective_value
from clustering.readers import load_csv, load_labels
from clustering.selection import adjusted_rand_index, baseline_partitions, ebic_select, holdout_select, \
    make_holdout_plan, solve_missing
from clustering.serializers import LipschitzReportSerializer, RecoveryIntervalSerializer, \
    RecoveryReportSerializer, ScalingSerializer
from clustering.solvers.abstracts import SolverConfig
from clustering.solvers.diagnostics import kkt_report
from clustering.solvers.solver_factories import solve
from clustering.theory import iteration_scaling, lipschitz_harness, panahi_interval, partition_geometry, \
    sun_interval, verify_recovery, zhu_two_cubes

logger = logging.getLogger('clustering')

RUN_STATUS_OK = 0
RUN_STATUS_TRUNCATED = 1
STABILITY_FRACTIONS = (0.01, 0.1, 1.0)
SCALING_NODES = 2000


@dataclass(frozen=True)
class RunConfig:
    mode: str
    out: str
    input: Optional[str] = None
    generate: Optional[str] = None
    graph: str = 'mst+knn:3'
    weights: str = 'gaussian'
    gamma: Optional[str] = None
    seed: int = 0
    method: Optional[str] = None
    path_mode: str = 'exact'
    strict: bool = False
    columns_are_observations: bool = False
    standardize: bool = False
    labels: Optional[str] = None
    criterion: str = 'ebic'
    zeta: Optional[float] = None
    max_clusters: Optional[int] = None
    holdout_fraction: Optional[float] = None
    trials: int = 5

    def echo(self) -> dict:
        return asdict(self)


@dataclass
class RunResult:
    status: int
    artifacts: List[Path]


def load_data(config: RunConfig) -> Tuple[DataMatrix, Optional[np.ndarray], Optional[GeneratorSpec]]:
    """
    :return: (data, ground-truth labels or None, generator spec or None)
    """
    spec = None
    if config.generate is not None:
        spec = GeneratorSpec.parse(config.generate, config.seed)
        data, labels = generate(spec)
    else:
        data = load_csv(config.input, config.columns_are_observations)
        labels = load_labels(config.labels) if config.labels else None
    if labels is not None and labels.size != data.n:
        raise InvalidArgument('%i labels for %i observations' % (labels.size, data.n))
    if config.standardize:
        data = data.standardized()
    logger.info('Task - loaded %r' % data)
    return data, labels, spec


def graph_spec(config: RunConfig) -> GraphSpec:
    return GraphSpec.parse(config.graph, WeightKind.parse(config.weights))


def grid_spec(config: RunConfig) -> GridSpec:
    return GridSpec.parse(config.gamma) if config.gamma else GridSpec()


def _mean_filled(data: DataMatrix) -> DataMatrix:
    return data.filled(np.repeat(data.feature_means()[:, None], data.n, axis=1))


def _require_complete(data: DataMatrix, mode: str) -> None:
    if data.has_missing:
        raise InvalidArgument('Mode %s needs fully observed data, use select with the holdout criterion' % mode)


def _write_path_artifacts(path: ClusterPath, out: Path, artifacts: list, dendrogram: bool = True) -> None:
    artifacts.append(write_path_csv(path, out / 'path.csv'))
    artifacts.append(write_labels_csv(path, out / 'labels.csv'))
    if not dendrogram or len(path) == 0:
        return
    try:
        artifacts.extend(write_dendrogram(extract_dendrogram(path), out / 'dendrogram.json', out / 'dendrogram.nwk'))
    except NonMonotoneFusion as e:
        logger.warning('Task - no dendrogram, %s' % str(e))


def _merged_path(config: RunConfig, data: DataMatrix, solver: SolverConfig) -> ClusterPath:
    merged, counts, inverse = merge_duplicates(data)
    graph = build_graph(merged, graph_spec(config))
    path = compute_path(merged, graph, grid_spec(config), config.path_mode, solver, config.strict, counts)
    return expand_path(path, inverse, data)


def run_fit(config: RunConfig, data: DataMatrix, solver: SolverConfig, out: Path) -> RunResult:
    """
    Separate solves at every grid gamma with optimality diagnostics; data
    with missing entries goes through the MM solver
    """
    if data.has_missing:
        graph = build_graph(_mean_filled(data), graph_spec(config))
        merged, counts, inverse = data, np.ones(data.n), np.arange(data.n)
    else:
        merged, counts, inverse = merge_duplicates(data)
        graph = build_graph(merged, graph_spec(config))
    grid = grid_spec(config)
    top = None
    if grid.gammas is None and grid.gamma_max is None:
        top = gamma_max(_mean_filled(merged), graph, solver, counts)
    scale = median_pairwise_distance(merged)
    snapshots, diagnostics = [], []
    for gamma in grid.resolve(top):
        problem = ClusteringProblem(merged, graph, gamma, counts)
        if merged.has_missing:
            state = solve_missing(merged, graph, gamma, solver)
            diagnostics.append({'gamma': gamma, 'converged': state.converged, 'mm_history': state.mm_history})
        else:
            state = solve(problem, solver)
            diagnostics.append(dict(kkt_report(problem, state, solver), gamma=gamma, converged=state.converged,
                                    iterations=state.iterations))
        fused = detect_fusions(state, graph, scale=scale)
        U = np.asarray(state.U)
        centroids = np.stack([U[:, block].mean(axis=1) for block in fused.blocks()], axis=1)
        snapshots.append(Snapshot(float(gamma), fused, centroids, U, objective_value(problem, U)))
    path = expand_path(ClusterPath(merged, graph, 'fit', snapshots), inverse, data)
    artifacts = []
    _write_path_artifacts(path, out, artifacts, dendrogram=False)
    artifacts.append(write_json(diagnostics, out / 'diagnostics.json'))
    return RunResult(RUN_STATUS_OK, artifacts)


def run_path(config: RunConfig, data: DataMatrix, solver: SolverConfig, out: Path) -> RunResult:
    _require_complete(data, 'path')
    path = _merged_path(config, data, solver)
    artifacts = []
    _write_path_artifacts(path, out, artifacts)
    if path.truncated:
        logger.error('Task - path truncated after %i grid points - %s' % (len(path), path.error))
        return RunResult(RUN_STATUS_TRUNCATED, artifacts)
    return RunResult(RUN_STATUS_OK, artifacts)


def run_select(config: RunConfig, data: DataMatrix, labels, solver: SolverConfig, out: Path) -> RunResult:
    artifacts = []
    if config.criterion == 'holdout':
        graph = build_graph(_mean_filled(data), graph_spec(config))
        plan = make_holdout_plan(data, config.holdout_fraction, config.seed)
        report = holdout_select(data, graph, grid_spec(config), plan, solver)
        summary = {'criterion': 'holdout', 'chosen_gamma': report.chosen_gamma, 'chosen_K': report.chosen_K}
    else:
        _require_complete(data, 'select with eBIC')
        path = _merged_path(config, data, solver)
        report = ebic_select(path, config.zeta, config.max_clusters)
        _write_path_artifacts(path, out, artifacts)
        chosen = path.snapshots[report.chosen_index]
        summary = {'criterion': 'ebic', 'chosen_gamma': report.chosen_gamma, 'chosen_K': report.chosen_K}
        k_values = [k for k in range(2, settings.SONCLUSTER['BASELINE_MAX_CLUSTERS'] + 1) if k <= data.n]
        if k_values:
            summary['baselines'] = baseline_partitions(data, k_values, seed=config.seed, zeta=config.zeta)
        if labels is not None:
            summary['adjusted_rand_index'] = adjusted_rand_index(chosen.partition.labels, labels)
    artifacts.extend(write_selection(report, out / 'selection.csv', out / 'selection.json'))
    artifacts.append(write_json(summary, out / 'summary.json'))
    return RunResult(RUN_STATUS_OK, artifacts)


def _uniform_complete(data: DataMatrix):
    return build_graph(data, GraphSpec('full', weights=WeightKind('uniform')))


def run_theory(config: RunConfig, data: DataMatrix, labels, spec: Optional[GeneratorSpec],
               solver: SolverConfig, out: Path) -> RunResult:
    """
    Recovery intervals of the ground-truth partition on complete graphs and
    their empirical verification
    """
    _require_complete(data, 'theory')
    if labels is None:
        raise InvalidArgument('Theory mode needs ground-truth labels')
    partition = Partition(labels)
    geometry = partition_geometry(data, partition)
    uniform = _uniform_complete(data)
    weighted = build_graph(data, GraphSpec('full', weights=WeightKind.parse(config.weights)))
    candidates = [(panahi_interval(geometry, data.n), uniform), (sun_interval(geometry, weighted, partition), weighted)]
    if spec is not None and spec.kind == 'two_cubes':
        n1, n2 = spec.sizes
        candidates.append((zhu_two_cubes(cube_half_edges(spec), n1, n2, spec.params['distance']), uniform))
    intervals, verifications = [], []
    for interval, graph in candidates:
        intervals.append(RecoveryIntervalSerializer(interval).data)
        if not interval.feasible:
            logger.info('Task - %s interval infeasible, not verified' % interval.family)
            continue
        verifications.append(RecoveryReportSerializer(
            verify_recovery(data, partition, graph, interval, config.trials, solver)).data)
    artifacts = [write_json({'intervals': intervals, 'verification': verifications}, out / 'theory.json')]
    return RunResult(RUN_STATUS_OK, artifacts)


def run_stability(config: RunConfig, data: DataMatrix, solver: SolverConfig, out: Path) -> RunResult:
    _require_complete(data, 'stability')
    merged, _, _ = merge_duplicates(data)
    graph = build_graph(merged, graph_spec(config))
    if config.gamma:
        gammas = grid_spec(config).resolve()
    else:
        top = gamma_max(merged, graph, solver)
        gammas = [top * fraction for fraction in STABILITY_FRACTIONS]
    scale = 0.1 * median_pairwise_distance(merged)
    lipschitz = [LipschitzReportSerializer(lipschitz_harness(merged, graph, gamma, config.trials, scale,
                                                             config.seed)).data for gamma in gammas]
    scaling = ScalingSerializer(iteration_scaling(SCALING_NODES, merged.p, seed=config.seed), many=True).data
    artifacts = [write_json({'lipschitz': lipschitz, 'iteration_scaling': scaling}, out / 'stability.json')]
    return RunResult(RUN_STATUS_OK, artifacts)


def run(config: RunConfig) -> RunResult:
    """
    :param config: validated RunConfig
    :return: RunResult with the exit status and every file written, manifest last
    """
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    data, labels, spec = load_data(config)
    solver = SolverConfig(method=config.method)
    logger.info('Task - %s run into %s with seed %i' % (config.mode, out, config.seed))
    if config.mode == 'fit':
        result = run_fit(config, data, solver, out)
    elif config.mode == 'path':
        result = run_path(config, data, solver, out)
    elif config.mode == 'select':
        result = run_select(config, data, labels, solver, out)
    elif config.mode == 'theory':
        result = run_theory(config, data, labels, spec, solver, out)
    elif config.mode == 'stability':
        result = run_stability(config, data, solver, out)
    else:
        raise InvalidArgument('Unknown mode %s' % config.mode)
    manifest = write_manifest(config.echo(), result.artifacts, out / 'manifest.json')
    result.artifacts.append(manifest)
    return result


def error_message(error: ClusteringException) -> dict:
    message = {'error': type(error).__name__, 'message': str(error)}
    for attribute in ('line', 'iteration', 'gammas'):
        if getattr(error, attribute, None) is not None:
            message[attribute] = getattr(error, attribute)
    return message
