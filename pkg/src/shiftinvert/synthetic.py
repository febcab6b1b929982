"""Matrices with known spectra for tests and the command-line harness."""

from dataclasses import dataclass

import numpy as np

from .linalg import RowMatrix
from .oracle import SpectrumOracle


@dataclass
class PlantedInstance:
    matrix: RowMatrix
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def lam1(self):
        return float(self.eigenvalues[0])

    @property
    def gap(self):
        return float((self.eigenvalues[0] - self.eigenvalues[1]) / self.eigenvalues[0])

    def oracle(self):
        return SpectrumOracle.from_eigenpairs(self.eigenvalues, self.eigenvectors)


def planted_eigenvalues(d, gap, decay=0.5, lam1=1.0):
    """lam1 * (1, 1-gap, (1-gap) r, (1-gap) r^2, ...)."""
    vals = np.empty(d)
    vals[0] = 1.0
    if d > 1:
        vals[1:] = (1.0 - gap) * decay ** np.arange(d - 1)
    return lam1 * vals


def random_orthogonal(d, rng):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def planted_spectrum(d, gap, rng, n=None, decay=0.5, lam1=1.0, eigenvalues=None):
    """A with A^T A = Q diag(eigenvalues) Q^T exactly (up to rounding).

    For n >= d the rows are U diag(sqrt(eigenvalues)) Q^T with U an n x d
    matrix with orthonormal columns, so the number of rows can vary without
    disturbing the spectrum.
    """
    n = d if n is None else n
    vals = planted_eigenvalues(d, gap, decay, lam1) if eigenvalues is None else np.asarray(eigenvalues, float)
    q = random_orthogonal(d, rng)
    if n == d:
        a = np.sqrt(vals)[:, None] * q.T
    elif n > d:
        u, r = np.linalg.qr(rng.standard_normal((n, d)))
        u = u * np.sign(np.diag(r))
        a = u @ (np.sqrt(vals)[:, None] * q.T)
    else:
        vals = vals.copy()
        vals[n:] = 0.0
        a = np.sqrt(vals[:n])[:, None] * q[:, :n].T
    return PlantedInstance(RowMatrix.from_dense(a), vals, q)


def diag_spectrum(values):
    """A = diag(sqrt(values)), so A^T A = diag(values) in the standard basis."""
    vals = np.asarray(values, dtype=np.float64)
    order = np.argsort(vals)[::-1]
    vecs = np.eye(vals.size)[:, order]
    return PlantedInstance(RowMatrix.from_dense(np.diag(np.sqrt(vals))), vals[order], vecs)


def random_sparse(n, d, density, gap, rng, decay=0.5):
    """Planted spectrum with entries randomly zeroed to reach ``density``.

    Sparsification perturbs the spectrum, so the eigenpairs are recomputed
    densely afterwards.
    """
    inst = planted_spectrum(d, gap, rng, n=n, decay=decay)
    if density >= 1.0:
        return inst
    a = inst.matrix.to_dense()
    a = a * (rng.random(a.shape) < density)
    m = RowMatrix.from_dense(a)
    o = SpectrumOracle(m)
    return PlantedInstance(m, o.eigenvalues, o.eigenvectors)
