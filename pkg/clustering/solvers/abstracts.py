from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from typing import Optional, Tuple, TypedDict, Union

import numpy as np
from django.conf import settings

from clustering.exceptions import InvalidArgument, StructuralError
from clustering.problem import ClusteringProblem, SolverState, project_dual_columns
from clustering.solvers.incidence import IncidenceOperator

METHODS = ('ama', 'ama_accelerated', 'admm')
STEP_RULES = ('fixed', 'auto_spectral')

WarmStart = Union[None, np.ndarray, Tuple[np.ndarray, np.ndarray], SolverState]


@dataclass(frozen=True)
class SolverConfig:
    """
    Fields left as None are read from settings.SONCLUSTER['SOLVER'].
    ``rho`` is the ADMM penalty, or the AMA step when ``step_rule`` is fixed.
    """
    method: Optional[str] = None
    rho: Optional[float] = None
    max_iterations: Optional[int] = None
    gap_tolerance: Optional[float] = None
    residual_tolerance: Optional[float] = None
    step_rule: Optional[str] = None
    step_safety: Optional[float] = None
    cholesky_max_nodes: Optional[int] = None
    cg_tolerance: Optional[float] = None
    power_iterations: Optional[int] = None
    record_history: bool = True

    def __post_init__(self):
        defaults = settings.SONCLUSTER['SOLVER']
        for name in ('method', 'rho', 'max_iterations', 'gap_tolerance', 'residual_tolerance', 'step_rule',
                     'step_safety', 'cholesky_max_nodes', 'cg_tolerance', 'power_iterations'):
            if getattr(self, name) is None:
                object.__setattr__(self, name, defaults[name.upper()])
        if self.step_rule not in STEP_RULES:
            raise InvalidArgument('Unknown step rule %s' % self.step_rule)
        if self.rho is not None and not self.rho > 0:
            raise InvalidArgument('rho must be positive')
        if self.step_rule == 'fixed' and self.rho is None and self.method != 'admm':
            raise InvalidArgument('A fixed step rule needs rho')
        if not (self.gap_tolerance > 0 and self.residual_tolerance > 0 and self.cg_tolerance > 0):
            raise InvalidArgument('Tolerances must be positive')
        if self.max_iterations < 1:
            raise InvalidArgument('max_iterations must be at least 1')
        if not 0 < self.step_safety <= 1:
            raise InvalidArgument('step_safety must lie in (0, 1]')

    def replace(self, **changes) -> 'SolverConfig':
        return replace(self, **changes)


class KKTReport(TypedDict):
    gap: float
    dual_value: float
    primal_value: float
    max_infeasibility: float
    stationarity: float
    primal_residual: float
    optimal: bool


class AbstractSolver(ABC):
    def __init__(self, problem: ClusteringProblem, config: SolverConfig, operator: IncidenceOperator = None):
        if problem.data.has_missing:
            raise StructuralError('Solvers need fully observed data, use solve_missing for masked data')
        self.__problem = problem
        self.__config = config
        self.__operator = operator or IncidenceOperator(problem.graph, problem.multiplicity)

    @property
    def problem(self) -> ClusteringProblem:
        return self.__problem

    @property
    def config(self) -> SolverConfig:
        return self.__config

    @property
    def operator(self) -> IncidenceOperator:
        return self.__operator

    @abstractmethod
    def solve(self, warm_start: WarmStart = None) -> SolverState:
        pass

    def warm_duals(self, warm_start: WarmStart):
        """
        Normalise a warm start into (V or None, Z or None); Z is projected
        onto the dual balls of the current gamma
        """
        if warm_start is None:
            return None, None
        if isinstance(warm_start, SolverState):
            V, Z = warm_start.V, warm_start.Z
        elif isinstance(warm_start, tuple):
            V, Z = warm_start
        else:
            V, Z = None, warm_start
        shape = (self.__problem.data.p, self.__problem.graph.edge_count)
        if Z is not None:
            Z = np.asarray(Z, dtype=float)
            if Z.shape != shape:
                raise StructuralError('Warm start duals %s do not match %s' % (Z.shape, shape))
            Z = project_dual_columns(Z, self.__problem.radii)
        if V is not None:
            V = np.array(V, dtype=float)
            if V.shape != shape:
                raise StructuralError('Warm start splits %s do not match %s' % (V.shape, shape))
        return V, Z

    def __str__(self):
        return self.__config.method
