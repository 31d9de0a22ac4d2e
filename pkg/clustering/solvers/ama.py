"""
Alternating minimization (proximal gradient ascent on the dual).

For duals Z the centroids are U = X - Z A M^-1 and the dual value is
<ZA, X> - 1/2 sum ||(ZA)_i||^2 / m_i. One step moves Z along its gradient
U A^T and projects every column onto its ball ||z_l|| <= gamma w_l.
"""
import logging
import time

import numpy as np

from clustering.exceptions import NumericalFailure
from clustering.problem import SolverState, project_dual_columns
from clustering.solvers.abstracts import AbstractSolver, SolverConfig, WarmStart

logger = logging.getLogger('clustering')

MONOTONE_SLACK = 1e-12


class AMASolver(AbstractSolver):
    accelerated = False

    def step_size(self) -> float:
        if self.config.step_rule == 'fixed':
            return self.config.rho
        lipschitz = self.operator.lambda_max(self.config.power_iterations)
        if lipschitz <= 0:
            return 1.0
        return self.config.step_safety / lipschitz

    def centroids(self, ZA: np.ndarray) -> np.ndarray:
        return self.problem.data.values - ZA / self.operator.multiplicity

    def dual(self, ZA: np.ndarray) -> float:
        X = self.problem.data.values
        return float(np.sum(ZA * X) - 0.5 * np.dot((ZA ** 2).sum(axis=0), 1.0 / self.operator.multiplicity))

    @staticmethod
    def gap(differences: np.ndarray, Z: np.ndarray, radii: np.ndarray) -> float:
        """
        Primal minus dual for U = X - ZA/m, summed edge by edge so the
        quadratic terms cancel exactly
        """
        if differences.shape[1] == 0:
            return 0.0
        return float(np.dot(radii, np.linalg.norm(differences, axis=0)) - np.sum(Z * differences))

    def ascent(self, Z: np.ndarray, differences: np.ndarray, rho: float, radii: np.ndarray):
        """
        One projected gradient step from Z, with the split variable it implies
        :return: (new duals, V)
        """
        Y = Z + rho * differences
        Z_new = project_dual_columns(Y, radii)
        # the removed part is the prox of the scaled group norm, exact zeros on fused edges
        return Z_new, (Y - Z_new) / rho

    def solve(self, warm_start: WarmStart = None) -> SolverState:
        started = time.perf_counter()
        problem, config, operator = self.problem, self.config, self.operator
        p, edges = problem.data.p, problem.graph.edge_count
        radii = problem.radii
        _, Z = self.warm_duals(warm_start)
        if Z is None:
            Z = np.zeros((p, edges))
        rho = self.step_size()

        ZA = operator.adjoint(Z)
        U = self.centroids(ZA)
        differences = operator.differences(U)
        dual = self.dual(ZA)
        history = [dual] if config.record_history else []
        V = V_old = np.zeros((p, edges))
        gap = self.gap(differences, Z, radii)
        extrapolated, momentum = Z, 1.0
        iteration = 0
        converged = False
        while iteration < config.max_iterations:
            iteration += 1
            V_old = V
            if self.accelerated and extrapolated is not Z:
                point_differences = operator.differences(self.centroids(operator.adjoint(extrapolated)))
                Z_new, V = self.ascent(extrapolated, point_differences, rho, radii)
                ZA_new = operator.adjoint(Z_new)
                dual_new = self.dual(ZA_new)
                if dual_new < dual - MONOTONE_SLACK * max(1.0, abs(dual)):
                    # momentum overshot: restart from a plain step
                    momentum = 1.0
                    Z_new, V = self.ascent(Z, differences, rho, radii)
                    ZA_new = operator.adjoint(Z_new)
                    dual_new = self.dual(ZA_new)
            else:
                Z_new, V = self.ascent(Z, differences, rho, radii)
                ZA_new = operator.adjoint(Z_new)
                dual_new = self.dual(ZA_new)

            if not np.isfinite(dual_new) or not np.all(np.isfinite(Z_new)):
                raise NumericalFailure('AMA - non-finite iterate at iteration %i' % iteration, iteration)

            if self.accelerated:
                next_momentum = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * momentum ** 2))
                extrapolated = Z_new + ((momentum - 1.0) / next_momentum) * (Z_new - Z)
                momentum = next_momentum
            Z, ZA, dual = Z_new, ZA_new, dual_new
            U = self.centroids(ZA)
            differences = operator.differences(U)
            if config.record_history:
                history.append(dual)
            gap = self.gap(differences, Z, radii)
            if gap <= config.gap_tolerance:
                converged = True
                break

        if not converged:
            logger.warning('AMA - gap %.3e above tolerance after %i iterations (gamma=%g)'
                           % (gap, iteration, problem.gamma))
        primal_residual = float(np.max(np.linalg.norm(differences - V, axis=0))) if edges else 0.0
        dual_residual = rho * float(np.linalg.norm(operator.adjoint(V - V_old)))
        infeasibility = float(max(0.0, np.max(np.linalg.norm(Z, axis=0) - radii))) if edges else 0.0
        logger.debug('AMA - gamma=%g iterations=%i gap=%.3e' % (problem.gamma, iteration, gap))
        return SolverState(U=U, V=V, Z=Z, iterations=iteration, primal_residual=primal_residual,
                           dual_residual=dual_residual, duality_gap=max(gap, 0.0), converged=converged,
                           method=str(self), gamma=problem.gamma, dual_history=history,
                           max_infeasibility=infeasibility, elapsed=time.perf_counter() - started)


class AcceleratedAMASolver(AMASolver):
    accelerated = True


def solve_ama(problem, config: SolverConfig = None, warm_start: WarmStart = None, accelerated: bool = False):
    """
    :param problem: ClusteringProblem with fully observed data
    :param config: SolverConfig, defaults from settings
    :param warm_start: duals Z from a previous solve
    :param accelerated: use momentum with restart
    :return: SolverState
    """
    config = (config or SolverConfig()).replace(method='ama_accelerated' if accelerated else 'ama')
    solver_class = AcceleratedAMASolver if accelerated else AMASolver
    return solver_class(problem, config).solve(warm_start)
