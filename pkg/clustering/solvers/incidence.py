import numpy as np
from scipy import sparse

from clustering.problem import WeightGraph, incidence_matrix


class IncidenceOperator:
    """
    Edge-incidence matrix A (row l = e_i - e_j) acting on p x n centroid
    matrices from the right. Both directions cost O(p|E|).
    """

    def __init__(self, graph: WeightGraph, multiplicity: np.ndarray = None):
        self.__graph = graph
        self.__matrix = incidence_matrix(graph)
        self.__transpose = self.__matrix.T.tocsr()
        if multiplicity is None:
            multiplicity = np.ones(graph.n)
        self.__multiplicity = np.asarray(multiplicity, dtype=float)

    @property
    def graph(self) -> WeightGraph:
        return self.__graph

    @property
    def matrix(self) -> sparse.csr_matrix:
        return self.__matrix

    @property
    def multiplicity(self) -> np.ndarray:
        return self.__multiplicity

    def differences(self, U: np.ndarray) -> np.ndarray:
        """
        U A^T, column l holds u_i - u_j
        """
        return np.ascontiguousarray((self.__matrix @ U.T).T)

    def adjoint(self, Z: np.ndarray) -> np.ndarray:
        """
        Z A, column i holds the signed sum of the duals of the edges at node i
        """
        return np.ascontiguousarray((self.__transpose @ Z.T).T)

    def laplacian(self) -> sparse.csr_matrix:
        return (self.__transpose @ self.__matrix).tocsr()

    def lambda_max(self, iterations: int = 500, tolerance: float = 1e-10) -> float:
        """
        Largest eigenvalue of M^-1/2 A^T A M^-1/2 by power iteration, M = diag(multiplicity).
        This is the Lipschitz constant of the dual gradient.
        """
        n = self.__graph.n
        if self.__graph.edge_count == 0 or n < 2:
            return 0.0
        scale = 1.0 / np.sqrt(self.__multiplicity)
        # fixed start vector keeps the step, and therefore every iterate, reproducible
        vector = np.random.default_rng(0).standard_normal(n)
        vector /= np.linalg.norm(vector)
        estimate = 0.0
        for _ in range(iterations):
            image = scale * (self.__transpose @ (self.__matrix @ (scale * vector)))
            previous, estimate = estimate, float(np.dot(vector, image))
            norm = np.linalg.norm(image)
            if norm == 0:
                break
            vector = image / norm
            if abs(estimate - previous) <= tolerance * estimate:
                break
        return estimate
