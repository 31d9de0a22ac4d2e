from clustering.exceptions import SolverException
from clustering.problem import ClusteringProblem, SolverState
from clustering.solvers.abstracts import SolverConfig, WarmStart
from clustering.solvers.admm import ADMMSolver
from clustering.solvers.ama import AMASolver, AcceleratedAMASolver


class SolverFactory:
    def __init__(self, config: SolverConfig):
        self.__config = config

    @property
    def config(self) -> SolverConfig:
        return self.__config

    def obtain_solver(self):
        solvers = {
            'ama': AMASolver,
            'ama_accelerated': AcceleratedAMASolver,
            'admm': ADMMSolver,
        }
        try:
            return solvers[self.__config.method]
        except KeyError:
            raise SolverException('Solver %s not found in SolverFactory' % self.__config.method)

    def __repr__(self):
        return 'SolverFactory(%s)' % self.__config.method


def solve(problem: ClusteringProblem, config: SolverConfig = None, warm_start: WarmStart = None) -> SolverState:
    config = config or SolverConfig()
    solver_class = SolverFactory(config).obtain_solver()
    return solver_class(problem, config).solve(warm_start)
