"""Dense eigendecomposition oracle and the potential functions it makes
computable. Used by tests and by synthetic-instance ground truth; the
solvers themselves never call into this module."""

import numpy as np

from .errors import OrthogonalStartError, ShiftError
from .linalg import RowMatrix


class SpectrumOracle:
    """Eigenpairs of a symmetric PSD matrix, sorted so eigenvalues descend."""

    def __init__(self, sigma):
        if isinstance(sigma, RowMatrix):
            if sigma.d > 500:
                raise ValueError("dense oracle is limited to d <= 500")
            sigma = sigma.gram()
        sigma = np.asarray(sigma, dtype=np.float64)
        w, v = np.linalg.eigh(0.5 * (sigma + sigma.T))
        order = np.argsort(w)[::-1]
        self.sigma = sigma
        self.eigenvalues = w[order]
        self.eigenvectors = v[:, order]

    @classmethod
    def from_eigenpairs(cls, eigenvalues, eigenvectors):
        """Oracle for a matrix whose decomposition is already known."""
        vals = np.asarray(eigenvalues, dtype=np.float64)
        vecs = np.asarray(eigenvectors, dtype=np.float64)
        order = np.argsort(vals, kind="stable")[::-1]
        obj = cls.__new__(cls)
        obj.eigenvalues = vals[order]
        obj.eigenvectors = vecs[:, order]
        obj.sigma = (obj.eigenvectors * obj.eigenvalues) @ obj.eigenvectors.T
        return obj

    @property
    def d(self):
        return self.eigenvalues.size

    @property
    def lam1(self):
        return float(self.eigenvalues[0])

    @property
    def v1(self):
        return self.eigenvectors[:, 0]

    @property
    def gap(self):
        """Relative eigengap (lambda_1 - lambda_2) / lambda_1."""
        if self.d < 2 or self.lam1 <= 0:
            return 1.0
        return float((self.eigenvalues[0] - self.eigenvalues[1]) / self.eigenvalues[0])

    def coefficients(self, x):
        return self.eigenvectors.T @ np.asarray(x, dtype=np.float64)

    def inverse_eigenvalues(self, lam):
        """Eigenvalues of (lam*I - Sigma)^{-1} in descending order."""
        gaps = lam - self.eigenvalues
        if np.any(gaps <= 0):
            raise ShiftError(f"shift {lam} does not exceed lambda_1 = {self.lam1}")
        return 1.0 / gaps

    def solve(self, lam, rhs):
        """(lam*I - Sigma)^{-1} rhs through the eigenbasis."""
        inv = self.inverse_eigenvalues(lam)
        rhs = np.asarray(rhs, dtype=np.float64)
        coef = self.eigenvectors.T @ rhs
        if coef.ndim == 1:
            return self.eigenvectors @ (inv * coef)
        return self.eigenvectors @ (inv[:, None] * coef)


def _orthogonal(alpha):
    """True when the top coefficient is zero up to rounding of the basis change."""
    scale = np.linalg.norm(alpha)
    return scale == 0.0 or abs(alpha[0]) <= 64 * np.finfo(np.float64).eps * scale


def potential_g(b, oracle, x):
    """G(x) = |P_perp x|_B / |P_1 x|_B evaluated in the eigenbasis of A^T A."""
    alpha = oracle.coefficients(x)
    weights = b.shift - oracle.eigenvalues
    if weights[0] <= 0:
        raise ShiftError(f"shift {b.shift} does not exceed lambda_1 = {oracle.lam1}")
    if _orthogonal(alpha):
        raise OrthogonalStartError("x is orthogonal to the top eigenvector")
    top = alpha[0] ** 2 * weights[0]
    rest = float(np.sum(alpha[1:] ** 2 * weights[1:]))
    return float(np.sqrt(max(rest, 0.0) / top))


def potential_g_bar(b, oracle, x, epsilon):
    """Gap-free potential: only eigen-directions with lambda_i below
    (1 - epsilon/2) lambda_1 count in the numerator."""
    alpha = oracle.coefficients(x)
    weights = b.shift - oracle.eigenvalues
    if weights[0] <= 0:
        raise ShiftError(f"shift {b.shift} does not exceed lambda_1 = {oracle.lam1}")
    if _orthogonal(alpha):
        raise OrthogonalStartError("x is orthogonal to the top eigenvector")
    top = alpha[0] ** 2 * weights[0]
    low = oracle.eigenvalues < (1.0 - epsilon / 2.0) * oracle.lam1
    rest = float(np.sum(alpha[low] ** 2 * weights[low]))
    return float(np.sqrt(rest / top))


def exact_power_step(b, oracle, x):
    """One exact shifted-and-inverted power step, normalized."""
    x = np.asarray(x, dtype=np.float64)
    if _orthogonal(oracle.coefficients(x)):
        raise OrthogonalStartError("x is orthogonal to the top eigenvector")
    y = oracle.solve(b.shift, x)
    return y / np.linalg.norm(y)
