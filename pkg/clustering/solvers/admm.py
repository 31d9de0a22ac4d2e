"""
ADMM on the split problem v_l = u_i - u_j.

With M = diag(multiplicity) and L = A^T A every U-update solves
U (M + rho L) = X M - Z A + rho V A, a sparse symmetric positive definite
system that depends on the graph and rho only.
"""
import logging
import time

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu, cg, LinearOperator

from clustering.exceptions import NumericalFailure
from clustering.problem import SolverState, prox_group_norm_columns, objective_value, dual_value
from clustering.solvers.abstracts import AbstractSolver, SolverConfig, WarmStart
from clustering.solvers.incidence import IncidenceOperator

logger = logging.getLogger('clustering')

DEFAULT_RHO = 1.0


def _conjugate_gradient(matrix, rhs, x0, tolerance, preconditioner):
    # scipy renamed tol to rtol
    try:
        return cg(matrix, rhs, x0=x0, rtol=tolerance, atol=0.0, M=preconditioner, maxiter=10 * rhs.size)
    except TypeError:
        return cg(matrix, rhs, x0=x0, tol=tolerance, atol=0.0, M=preconditioner, maxiter=10 * rhs.size)


class LinearSystem:
    """
    The n x n matrix M + rho L of the U-update, factorized once.
    Up to ``cholesky_max_nodes`` nodes a sparse LU factor is cached, above it
    every solve runs Jacobi-preconditioned conjugate gradients.
    """

    def __init__(self, operator: IncidenceOperator, rho: float, cholesky_max_nodes: int = 10000,
                 cg_tolerance: float = 1e-10):
        self.__rho = rho
        self.__matrix = (sparse.diags(operator.multiplicity) + rho * operator.laplacian()).tocsc()
        self.__cg_tolerance = cg_tolerance
        self.__factor = None
        self.__preconditioner = None
        if self.__matrix.shape[0] <= cholesky_max_nodes:
            self.__factor = splu(self.__matrix, permc_spec='MMD_AT_PLUS_A')
        else:
            inverse_diagonal = 1.0 / self.__matrix.diagonal()
            n = self.__matrix.shape[0]
            self.__preconditioner = LinearOperator((n, n), matvec=lambda x: inverse_diagonal * x)

    @property
    def rho(self) -> float:
        return self.__rho

    @property
    def matrix(self) -> sparse.csc_matrix:
        return self.__matrix

    @property
    def factorized(self) -> bool:
        return self.__factor is not None

    def solve(self, rhs: np.ndarray, initial: np.ndarray = None) -> np.ndarray:
        """
        :param rhs: p x n right hand sides
        :param initial: starting point for the iterative route
        :return: U with U (M + rho L) = rhs
        """
        if self.__factor is not None:
            return np.ascontiguousarray(self.__factor.solve(np.asfortranarray(rhs.T)).T)
        solution = np.empty_like(rhs)
        for row in range(rhs.shape[0]):
            x0 = None if initial is None else initial[row]
            solution[row], info = _conjugate_gradient(self.__matrix, rhs[row], x0, self.__cg_tolerance,
                                                      self.__preconditioner)
            if info < 0:
                raise NumericalFailure('ADMM - conjugate gradients broke down (info=%i)' % info)
            if info > 0:
                logger.warning('ADMM - conjugate gradients stopped before tolerance on row %i' % row)
        return solution


def admm_u_solve(system: LinearSystem, rhs, initial=None) -> np.ndarray:
    rhs = np.atleast_2d(np.asarray(rhs, dtype=float))
    return system.solve(rhs, initial)


def default_rho(operator: IncidenceOperator, X: np.ndarray) -> float:
    """
    DEFAULT_RHO scaled by the median squared edge length of the data, 1.0 on
    graphs without edges or with coincident endpoints.
    """
    if operator.graph.edge_count == 0:
        return 1.0
    scale = float(np.median(np.sum(np.square(operator.differences(X)), axis=0)))
    return DEFAULT_RHO * scale if scale > 0 else 1.0


class ADMMSolver(AbstractSolver):
    def __init__(self, problem, config: SolverConfig, operator: IncidenceOperator = None,
                 system: LinearSystem = None):
        super().__init__(problem, config, operator)
        rho = config.rho if config.rho is not None else default_rho(self.operator, problem.data.values)
        if system is None or system.rho != rho:
            system = LinearSystem(self.operator, rho, config.cholesky_max_nodes, config.cg_tolerance)
        self.__system = system

    @property
    def system(self) -> LinearSystem:
        return self.__system

    def solve(self, warm_start: WarmStart = None, rounds: int = None) -> SolverState:
        """
        :param warm_start: (V, Z) or a previous SolverState
        :param rounds: run exactly this many rounds without a convergence test
        :return: SolverState
        """
        started = time.perf_counter()
        problem, config, operator = self.problem, self.config, self.operator
        rho = self.__system.rho
        X = problem.data.values
        XM = X * operator.multiplicity
        p, edges = problem.data.p, problem.graph.edge_count
        thresholds = problem.radii / rho
        V, Z = self.warm_duals(warm_start)
        if Z is None:
            Z = np.zeros((p, edges))
        if V is None:
            V = operator.differences(X)

        limit = rounds if rounds is not None else config.max_iterations
        U = X
        primal_residual = dual_residual = np.inf
        iteration = 0
        converged = False
        while iteration < limit:
            iteration += 1
            U = self.__system.solve(XM - operator.adjoint(Z) + rho * operator.adjoint(V), U)
            differences = operator.differences(U)
            V_old = V
            V = prox_group_norm_columns(differences + Z / rho, thresholds)
            Z = Z + rho * (differences - V)
            if not np.all(np.isfinite(U)) or not np.all(np.isfinite(Z)):
                raise NumericalFailure('ADMM - non-finite iterate at iteration %i' % iteration, iteration)
            primal_residual = float(np.max(np.linalg.norm(differences - V, axis=0))) if edges else 0.0
            dual_residual = rho * float(np.linalg.norm(operator.adjoint(V - V_old)))
            if rounds is None and primal_residual <= config.residual_tolerance \
                    and dual_residual <= config.residual_tolerance:
                converged = True
                break

        if rounds is None and not converged:
            logger.warning('ADMM - residuals %.3e/%.3e above tolerance after %i iterations (gamma=%g)'
                           % (primal_residual, dual_residual, iteration, problem.gamma))
        gap = objective_value(problem, U) - dual_value(problem, Z)
        infeasibility = float(max(0.0, np.max(np.linalg.norm(Z, axis=0) - problem.radii))) if edges else 0.0
        logger.debug('ADMM - gamma=%g iterations=%i residuals=%.3e/%.3e'
                     % (problem.gamma, iteration, primal_residual, dual_residual))
        return SolverState(U=U, V=V, Z=Z, iterations=iteration, primal_residual=primal_residual,
                           dual_residual=dual_residual, duality_gap=max(gap, 0.0), converged=converged,
                           method=str(self), gamma=problem.gamma, max_infeasibility=infeasibility,
                           elapsed=time.perf_counter() - started)


def solve_admm(problem, config: SolverConfig = None, warm_start: WarmStart = None,
               system: LinearSystem = None) -> SolverState:
    config = (config or SolverConfig()).replace(method='admm')
    return ADMMSolver(problem, config, system=system).solve(warm_start)
