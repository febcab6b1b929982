"""Shared fixtures-by-function for the test modules."""

import contextlib
import signal
import time

import numpy as np

from shiftinvert._random import make_rng
from shiftinvert.linalg import RowMatrix, ShiftedOperator
from shiftinvert.synthetic import planted_spectrum


class BudgetElapsed(Exception):
    """Raised inside a ``time_budget`` block when its wall-clock allowance runs out."""


@contextlib.contextmanager
def time_budget(seconds):
    """Interrupt the enclosed block with BudgetElapsed after ``seconds``.

    Uses an interval timer, so long numba loops must return to the
    interpreter now and then (the solvers chunk their step loops for this).
    """

    def fire(signum, frame):
        raise BudgetElapsed()

    old = signal.signal(signal.SIGALRM, fire)
    signal.setitimer(signal.ITIMER_REAL, seconds)
    try:
        yield
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0)
        signal.signal(signal.SIGALRM, old)


class Stopwatch:
    def __init__(self):
        self.start = time.perf_counter()

    @property
    def elapsed(self):
        return time.perf_counter() - self.start


def random_matrix(n, d, seed):
    return RowMatrix.from_dense(make_rng(seed).standard_normal((n, d)))


def planted(d, gap, seed, n=None):
    return planted_spectrum(d, gap, make_rng(seed), n=n)


def shifted(inst, factor):
    """B for the planted instance with shift factor * lambda_1."""
    return ShiftedOperator(inst.matrix, factor * inst.lam1)


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def report_line(number, title, passed, detail):
    status = "PASS" if passed else "FAIL"
    line = f"criterion {number:>2} [{status}] {title}: {detail}"
    print(line)
    return line
