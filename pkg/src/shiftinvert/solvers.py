"""Uniform solver interface used by the eigenvector drivers.

A solver is called as ``solver(b, rhs, x0, target_ratio, rng)`` and returns
a :class:`~shiftinvert.svrg.SolveOutcome` whose expected squared B-norm
error is at most ``target_ratio`` times that of ``x0``.
"""

import numpy as np
import scipy.linalg

from .errors import ShiftError
from .linalg import ShiftedOperator, apply_shifted
from .svrg import AcceleratedConfig, SolveOutcome, SvrgConfig, accelerated_solve, solve_to_accuracy

SOLVER_NAMES = ("svrg", "accelerated", "exact-dense")


class SvrgSolver:
    """Chained halving epochs with step size and epoch length from lam1_hat."""

    def __init__(self, lam1_hat):
        self.lam1_hat = float(lam1_hat)
        self._cfg = {}

    def config(self, b):
        key = (id(b.matrix), b.shift)
        if key not in self._cfg:
            self._cfg[key] = SvrgConfig.from_theory(b, self.lam1_hat)
        return self._cfg[key]

    def __call__(self, b, rhs, x0, target_ratio, rng):
        return solve_to_accuracy(b, rhs, x0, target_ratio, self.config(b), rng)


class AcceleratedSolver:
    def __init__(self, lam1_hat, max_grad_evals=None):
        self.cfg = AcceleratedConfig(lam1_hat=float(lam1_hat), max_grad_evals=max_grad_evals)

    def __call__(self, b, rhs, x0, target_ratio, rng):
        return accelerated_solve(b, rhs, target_ratio, self.cfg, rng, x0=x0)


class DenseSolver:
    """Exact solves through a Cholesky factorization of B (formed densely)."""

    def __init__(self):
        self._key = None
        self._factor = None

    def factor(self, b):
        key = (id(b.matrix), b.shift)
        if key != self._key:
            mat = b.shift * np.eye(b.d) - b.matrix.gram()
            try:
                self._factor = scipy.linalg.cho_factor(mat, lower=True, check_finite=False)
            except np.linalg.LinAlgError:
                raise ShiftError(f"shift {b.shift} does not make B positive definite") from None
            self._key = key
        return self._factor

    def __call__(self, b, rhs, x0, target_ratio, rng):
        x = scipy.linalg.cho_solve(self.factor(b), np.asarray(rhs, dtype=np.float64), check_finite=False)
        return SolveOutcome(solution=x, epochs_run=0, grad_evals=0)


def make_solver(name, lam1_hat, max_grad_evals=None):
    if name == "svrg":
        return SvrgSolver(lam1_hat)
    if name == "accelerated":
        return AcceleratedSolver(lam1_hat, max_grad_evals=max_grad_evals)
    if name == "exact-dense":
        return DenseSolver()
    raise ValueError(f"unknown solver {name!r}; choose from {SOLVER_NAMES}")


def warm_start_point(b, x):
    """x / (x^T B x), the scaled-identity guess for B^{-1} x."""
    xbx = float(x @ apply_shifted(b, x))
    if not xbx > 0:
        raise ShiftError(f"x^T B x = {xbx:.3e} is not positive; the shift is invalid")
    return x / xbx


class InverseBlockFactory:
    """Builds block operators Y -> approximately (lam I - A^T A)^{-1} Y.

    Each column is solved separately from its scaled-identity warm start to
    relative accuracy ``target_ratio``. Counts gradient evaluations.
    """

    def __init__(self, solver_name="svrg", target_ratio=None, gap_floor=1e-4, max_grad_evals=None):
        self.solver_name = solver_name
        self.target_ratio = target_ratio
        self.gap_floor = gap_floor
        self.max_grad_evals = max_grad_evals
        self.grad_evals = 0

    def __call__(self, m, lam, lam1_upper, rng):
        b = ShiftedOperator(m, lam)
        solver = make_solver(self.solver_name, lam1_upper, self.max_grad_evals)
        ratio = self.target_ratio if self.target_ratio is not None else min(0.5, (self.gap_floor / max(m.d, 2)) ** 6)

        if isinstance(solver, DenseSolver):
            fac = solver.factor(b)

            def apply(y):
                return scipy.linalg.cho_solve(fac, y, check_finite=False)

            return apply

        def apply(y):
            out = np.empty_like(y)
            for j in range(y.shape[1]):
                col = y[:, j]
                res = solver(b, col, warm_start_point(b, col), ratio, rng)
                self.grad_evals += res.grad_evals
                out[:, j] = res.solution
            return out

        return apply
