"""Row-oriented matrix storage, the shifted operator lambda*I - A^T A, and
the handful of products every other module builds on."""

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, ShiftError


class RowMatrix:
    """Immutable n x d matrix stored as compressed sparse rows.

    Indices inside each row are sorted and explicit zeros are dropped.
    Squared row norms and the squared Frobenius norm are cached because
    the sampling distribution and every step-size formula need them.
    """

    def __init__(self, csr):
        csr = sp.csr_matrix(csr, dtype=np.float64, copy=True)
        csr.sum_duplicates()
        csr.eliminate_zeros()
        csr.sort_indices()
        if not np.all(np.isfinite(csr.data)):
            raise ValueError("matrix contains NaN or Inf entries")
        for arr in (csr.data, csr.indices, csr.indptr):
            arr.setflags(write=False)
        self._csr = csr
        self.n, self.d = csr.shape
        row_ids = np.repeat(np.arange(self.n), np.diff(csr.indptr))
        norms = np.bincount(row_ids, weights=csr.data**2, minlength=self.n)
        norms.setflags(write=False)
        self.row_norms_sq = norms
        # np.sum reduces contiguous arrays pairwise.
        self.frob_sq = float(np.sum(norms))
        self.zero_rows = np.flatnonzero(norms == 0.0)

    @classmethod
    def from_dense(cls, a):
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2:
            raise DimensionError(f"expected a 2-D array, got shape {a.shape}")
        return cls(sp.csr_matrix(a))

    @classmethod
    def from_rows(cls, rows, d):
        """Build from a list of ``(indices, values)`` pairs."""
        indptr = [0]
        indices = []
        data = []
        for idx, val in rows:
            idx = np.asarray(idx, dtype=np.int64)
            val = np.asarray(val, dtype=np.float64)
            if idx.shape != val.shape:
                raise DimensionError("row indices and values differ in length")
            if idx.size and (idx.min() < 0 or idx.max() >= d):
                raise DimensionError(f"row index outside [0, {d})")
            if idx.size > 1 and np.any(np.diff(idx) <= 0):
                raise ValueError("row indices must be strictly increasing")
            indices.append(idx)
            data.append(val)
            indptr.append(indptr[-1] + idx.size)
        indices = np.concatenate(indices) if indices else np.zeros(0, np.int64)
        data = np.concatenate(data) if data else np.zeros(0)
        return cls(sp.csr_matrix((data, indices, indptr), shape=(len(rows), d)))

    @property
    def indptr(self):
        return self._csr.indptr

    @property
    def indices(self):
        return self._csr.indices

    @property
    def data(self):
        return self._csr.data

    @property
    def nnz(self):
        return int(self._csr.nnz)

    @property
    def shape(self):
        return (self.n, self.d)

    @property
    def csr(self):
        return self._csr

    @property
    def is_full(self):
        """True when every row stores all d entries (a dense matrix)."""
        return self.nnz == self.n * self.d

    def full_rows(self):
        """Row-major n x d view of the stored values; requires ``is_full``."""
        if not self.is_full:
            raise ValueError("matrix has missing entries")
        return self._csr.data.reshape(self.n, self.d)

    def row(self, i):
        lo, hi = self._csr.indptr[i], self._csr.indptr[i + 1]
        return self._csr.indices[lo:hi], self._csr.data[lo:hi]

    def dense_row(self, i):
        out = np.zeros(self.d)
        idx, val = self.row(i)
        out[idx] = val
        return out

    def matvec(self, x):
        return self._csr @ x

    def rmatvec(self, y):
        return self._csr.T @ y

    def to_dense(self):
        return self._csr.toarray()

    def gram(self):
        """Dense A^T A. Only sensible for moderate d."""
        g = (self._csr.T @ self._csr).toarray()
        return 0.5 * (g + g.T)

    def scaled(self, c):
        return RowMatrix(self._csr * float(c))


class ShiftedOperator:
    """B = shift*I - A^T A together with row sampling p_i = |a_i|^2 / |A|_F^2."""

    def __init__(self, matrix, shift):
        if not isinstance(matrix, RowMatrix):
            matrix = RowMatrix.from_dense(matrix)
        shift = float(shift)
        if not np.isfinite(shift):
            raise ShiftError("shift must be finite")
        self.matrix = matrix
        self.shift = shift
        if matrix.frob_sq > 0:
            self.probabilities = matrix.row_norms_sq / matrix.frob_sq
        else:
            self.probabilities = np.zeros(matrix.n)
        self.probabilities.setflags(write=False)
        cum = np.cumsum(matrix.row_norms_sq)
        cum.setflags(write=False)
        self.cumulative = cum
        self._guide = None

    @property
    def d(self):
        return self.matrix.d

    @property
    def n(self):
        return self.matrix.n

    @property
    def guide(self):
        """Bucket table over ``cumulative`` for constant-time row lookups."""
        if self._guide is None:
            from ._kernels import build_guide

            self._guide = build_guide(self.cumulative, max(1, self.n))
            self._guide.setflags(write=False)
        return self._guide

    def with_shift(self, shift):
        return ShiftedOperator(self.matrix, shift)

    def sample_rows(self, rng, size):
        """Row indices drawn i.i.d. from p by binary search on the cumulative norms."""
        if self.matrix.frob_sq <= 0:
            raise ValueError("cannot sample rows of an all-zero matrix")
        u = rng.random(size) * self.cumulative[-1]
        idx = np.searchsorted(self.cumulative, u, side="right")
        return np.minimum(idx, self.n - 1)

    def apply(self, x):
        return apply_shifted(self, x)


def _check_dim(d, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0:1] != (d,) or x.ndim not in (1, 2):
        raise DimensionError(f"expected leading dimension {d}, got shape {x.shape}")
    return x


def apply_sigma(m, x):
    """A^T A x computed as A^T (A x). Accepts a vector or a d x k block."""
    x = _check_dim(m.d, x)
    return m.rmatvec(m.matvec(x))


def apply_shifted(b, x):
    x = _check_dim(b.d, x)
    return b.shift * x - apply_sigma(b.matrix, x)


def rayleigh_quotient(m, x):
    """|Ax|^2 / |x|^2."""
    x = _check_dim(m.d, x)
    if x.ndim != 1:
        raise DimensionError("rayleigh_quotient expects a vector")
    xx = float(x @ x)
    if xx == 0.0:
        raise ValueError("Rayleigh quotient of the zero vector is undefined")
    ax = m.matvec(x)
    return float(ax @ ax) / xx


def b_norm(b, x):
    """sqrt(x^T B x), with a diagnostic when B is visibly indefinite along x."""
    x = _check_dim(b.d, x)
    xx = float(x @ x)
    ax = b.matrix.matvec(x)
    val = b.shift * xx - float(ax @ ax)
    if val < 0.0:
        if val < -1e-10 * abs(b.shift) * xx:
            raise ShiftError(
                f"x^T B x = {val:.3e} < 0: shift {b.shift:.6g} is not above the "
                f"top eigenvalue (quotient along x is {float(ax @ ax) / xx:.6g})"
            )
        val = 0.0
    return float(np.sqrt(val))
