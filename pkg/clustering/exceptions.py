class ClusteringException(Exception):
    pass


class StructuralError(ClusteringException):
    pass


class InvalidArgument(ClusteringException):
    pass


class InvariantViolation(ClusteringException):
    pass


class PreconditionViolation(ClusteringException):
    pass


class ProjectionViolation(ClusteringException):
    pass


class NumericalFailure(ClusteringException):
    def __init__(self, message: str, iteration: int = None):
        super().__init__(message)
        self.iteration = iteration


class MMViolation(ClusteringException):
    pass


class NonMonotoneFusion(ClusteringException):
    def __init__(self, message: str, gammas: tuple = None):
        super().__init__(message)
        self.gammas = gammas


class ParseError(ClusteringException):
    def __init__(self, message: str, line: int = None):
        super().__init__(message)
        self.line = line


class SolverException(ClusteringException):
    pass
