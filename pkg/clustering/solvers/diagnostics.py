import numpy as np
from django.conf import settings

from clustering.problem import ClusteringProblem, SolverState, objective_value, dual_value, dual_infeasibility, \
    median_pairwise_distance
from clustering.solvers.abstracts import KKTReport, SolverConfig
from clustering.solvers.incidence import IncidenceOperator


def kkt_report(problem: ClusteringProblem, state: SolverState, config: SolverConfig = None) -> KKTReport:
    """
    Optimality residuals of a state.

    Stationarity is max_i ||m_i (u_i - x_i) + (Z A)_i|| after replacing the
    dual of every unfused edge (v_l != 0) by gamma w_l d_l / ||d_l||, the only
    subgradient the penalty allows there.
    :param problem: ClusteringProblem
    :param state: SolverState
    :param config: tolerances, defaults from settings
    :return: KKTReport
    """
    config = config or SolverConfig()
    operator = IncidenceOperator(problem.graph, problem.multiplicity)
    U = np.asarray(state.U)
    X = problem.data.values
    differences = operator.differences(U)
    Z = np.array(state.Z, dtype=float)
    if problem.graph.edge_count:
        split_norms = np.linalg.norm(state.V, axis=0)
        difference_norms = np.linalg.norm(differences, axis=0)
        fused_below = settings.SONCLUSTER['FUSION_TOLERANCE'] * median_pairwise_distance(problem.data)
        active = (split_norms > fused_below) & (difference_norms > 0)
        Z[:, active] = problem.radii[active] * differences[:, active] / difference_norms[active]
        primal_residual = float(np.max(np.linalg.norm(differences - state.V, axis=0)))
    else:
        primal_residual = 0.0
    stationarity_matrix = (U - X) * problem.multiplicity + operator.adjoint(Z)
    stationarity = float(np.max(np.linalg.norm(stationarity_matrix, axis=0)))

    primal = objective_value(problem, U)
    dual = dual_value(problem, state.Z)
    gap = primal - dual
    infeasibility = dual_infeasibility(problem, state.Z)
    slack = settings.SONCLUSTER['FEASIBILITY_SLACK']
    # stationarity of a point with gap g is of order sqrt(g)
    optimal = bool(gap <= config.gap_tolerance and infeasibility <= slack
                   and primal_residual <= max(config.residual_tolerance, np.sqrt(config.gap_tolerance))
                   and stationarity <= max(config.residual_tolerance, np.sqrt(config.gap_tolerance)))
    return KKTReport(gap=float(gap), dual_value=dual, primal_value=primal, max_infeasibility=infeasibility,
                     stationarity=stationarity, primal_residual=primal_residual, optimal=optimal)
