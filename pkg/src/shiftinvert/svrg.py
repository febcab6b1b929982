"""Stochastic variance-reduced solvers for B x = c with B = lambda*I - A^T A.

The objective f(x) = 1/2 x^T B x - c^T x is split into n components

    psi_i(x) = 1/2 x^T (lambda p_i I - a_i a_i^T) x - c^T x / n,
    p_i = |a_i|^2 / |A|_F^2,

which are individually non-convex while their sum is strongly convex with
parameter mu = lambda - lambda_1. Rows are sampled with probability p_i.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import BudgetExceededError, DivergedError, ShiftError
from .linalg import ShiftedOperator, apply_shifted

_CHUNK = 1 << 18


@dataclass(frozen=True)
class SvrgConfig:
    """Step size, epoch-length bound and the constants they were derived from.

    ``eta`` is the actual step applied to the importance-weighted gradient
    estimate. ``final_iterate`` runs exactly ``m_max`` steps instead of a
    uniformly random number (experimental).
    """

    eta: float
    m_max: int
    s_bar: float
    mu: float
    epoch_count: int = 1
    final_iterate: bool = False

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not 2.0 * self.eta * self.s_bar < 1.0:
            raise ValueError("step too large: need 2 * eta * s_bar < 1")
        if self.m_max < 1:
            raise ValueError("m_max must be at least 1")
        if not self.mu > 0:
            raise ValueError("mu must be positive")

    @classmethod
    def from_theory(cls, b, lam1_hat, epoch_count=1):
        """eta = 1/(8 S), m_max = ceil(64 S / mu) with S = 2 lam1 |A|_F^2 / mu."""
        mu = b.shift - lam1_hat
        if not mu > 0:
            raise ShiftError(f"shift {b.shift} must exceed the eigenvalue estimate {lam1_hat}")
        s_bar = 2.0 * lam1_hat * b.matrix.frob_sq / mu
        if s_bar <= 0:
            s_bar = b.shift
        return cls(
            eta=1.0 / (8.0 * s_bar),
            m_max=max(1, math.ceil(64.0 * s_bar / mu)),
            s_bar=s_bar,
            mu=mu,
            epoch_count=epoch_count,
        )

    @classmethod
    def regularized_from_theory(cls, b, lam1_hat, gamma):
        """Parameters for the gamma-regularized problem: strong convexity
        mu + gamma and S = (gamma^2 + 12 lam1 |A|_F^2) / (mu + gamma)."""
        mu = b.shift - lam1_hat
        if not mu > 0:
            raise ShiftError(f"shift {b.shift} must exceed the eigenvalue estimate {lam1_hat}")
        mu_g = mu + gamma
        s_bar = (gamma**2 + 12.0 * lam1_hat * b.matrix.frob_sq) / mu_g
        return cls(
            eta=1.0 / (8.0 * s_bar),
            m_max=max(1, math.ceil(64.0 * s_bar / mu_g)),
            s_bar=s_bar,
            mu=mu_g,
        )


@dataclass(frozen=True)
class RegularizedProblem:
    """f(x) + gamma/2 |x - anchor|^2 for the quadratic f above."""

    base: ShiftedOperator
    gamma: float
    anchor: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")


@dataclass
class SolveOutcome:
    solution: np.ndarray
    epochs_run: int
    grad_evals: int
    est_error_b: float | None = None


@dataclass(frozen=True)
class AcceleratedConfig:
    """Settings for the accelerated proximal-point wrapper.

    ``gamma`` defaults to sqrt(d lam1 |A|_F^2 / nnz(A)), clamped below by
    2 mu. ``max_grad_evals`` bounds total work.
    """

    lam1_hat: float
    gamma: float | None = None
    max_grad_evals: int | None = None
    check_regime: bool = True


def _inverse_probabilities(b):
    norms = b.matrix.row_norms_sq
    out = np.zeros_like(norms)
    nz = norms > 0
    out[nz] = b.matrix.frob_sq / norms[nz]
    return out


def component_gradient(b, i, x, rhs):
    """Gradient of psi_i at x."""
    if not 0 <= i < b.n:
        raise IndexError(f"row {i} outside [0, {b.n})")
    x = np.asarray(x, dtype=np.float64)
    idx, val = b.matrix.row(i)
    p_i = b.probabilities[i]
    g = b.shift * p_i * x - np.asarray(rhs, dtype=np.float64) / b.n
    g[idx] -= val * float(val @ x[idx])
    return g


def objective(b, x, rhs):
    """f(x) = 1/2 x^T B x - rhs^T x."""
    return 0.5 * float(x @ apply_shifted(b, x)) - float(rhs @ x)


def _guard(y, x_start, bound):
    x = x_start + y
    if not np.all(np.isfinite(x)) or np.linalg.norm(x) > bound:
        raise DivergedError("iterate is non-finite or exploding; the shift estimate is likely too low", x_start.copy())
    return x


def _run_epoch(b, lam_eff, eta, m, x_start, g0, rng, bound):
    """m corrected steps from x_start with anchor gradient g0."""
    mat = b.matrix
    inv_p = _inverse_probabilities(b)
    d = b.d
    rho = 1.0 - eta * lam_eff
    last_good = x_start.copy()
    if rho > 0:
        a_g0 = mat.matvec(g0)
        z = np.zeros(d)
        scale, offset = 1.0, 0.0
        done = 0
        while done < m:
            step = min(_CHUNK, m - done)
            u = rng.random(step)
            if mat.is_full:
                scale, offset = _kernels.svrg_steps_lazy_full(
                    mat.full_rows(), b.cumulative, b.guide, inv_p, a_g0, z, scale, offset, eta, lam_eff, u
                )
            else:
                scale, offset = _kernels.svrg_steps_lazy(
                    mat.indptr, mat.indices, mat.data, b.cumulative, b.guide, inv_p, a_g0, z, scale, offset, eta, lam_eff, u
                )
            done += step
            try:
                last_good = _guard(scale * z + offset * g0, x_start, bound)
            except DivergedError as err:
                err.last_iterate = last_good
                raise
        return last_good
    y = np.zeros(d)
    done = 0
    while done < m:
        step = min(_CHUNK, m - done)
        u = rng.random(step)
        _kernels.svrg_steps_dense(mat.indptr, mat.indices, mat.data, b.cumulative, b.guide, inv_p, g0, y, eta, lam_eff, u)
        done += step
        try:
            last_good = _guard(y, x_start, bound)
        except DivergedError as err:
            err.last_iterate = last_good
            raise
    return last_good


def _divergence_bound(x0, rhs, mu):
    return 1e12 * (np.linalg.norm(x0) + np.linalg.norm(rhs) / mu)


def _epoch(b, cfg, x0, rhs, rng, gamma=0.0, center=None, bound=None):
    x0 = np.asarray(x0, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    g0 = apply_shifted(b, x0) - rhs
    if gamma:
        g0 = g0 + gamma * (x0 - center)
    m = cfg.m_max if cfg.final_iterate else int(rng.integers(1, cfg.m_max + 1))
    if b.matrix.frob_sq == 0:
        # Every component is linear; the step reduces to plain gradient descent.
        y = np.zeros_like(x0)
        for _ in range(m):
            y = y - cfg.eta * ((b.shift + gamma) * y + g0)
        return x0 + y, m
    if bound is None:
        bound = _divergence_bound(x0, rhs, cfg.mu)
        if gamma and center is not None:
            bound += 1e12 * np.linalg.norm(center)
    x = _run_epoch(b, b.shift + gamma, cfg.eta, m, x0, g0, rng, bound)
    return x, m


def svrg_epoch(b, cfg, x0, rhs, rng):
    """One epoch: full gradient at x0, then a uniformly random number of
    importance-sampled corrected steps. Returns the last iterate."""
    return _epoch(b, cfg, x0, rhs, rng)[0]


def solve_constant_progress(b, rhs, x0, cfg, rng):
    x, m = _epoch(b, cfg, x0, rhs, rng)
    return SolveOutcome(solution=x, epochs_run=1, grad_evals=b.n + m)


def epochs_for_ratio(target_ratio):
    """Halving epochs needed to shrink the expected squared error by target_ratio."""
    if not 0 < target_ratio <= 1:
        raise ValueError("target_ratio must lie in (0, 1]")
    return max(0, math.ceil(math.log2(1.0 / target_ratio) - 1e-12))


def solve_to_accuracy(b, rhs, x0, target_ratio, cfg, rng):
    """Chain halving epochs until the expected error ratio reaches target_ratio."""
    x = np.array(x0, dtype=np.float64)
    evals = 0
    epochs = epochs_for_ratio(target_ratio)
    # Measured against the starting point so slow per-epoch growth is caught.
    bound = _divergence_bound(x, np.asarray(rhs, dtype=np.float64), cfg.mu)
    for _ in range(epochs):
        x, m = _epoch(b, cfg, x, rhs, rng, bound=bound)
        evals += b.n + m
    return SolveOutcome(solution=x, epochs_run=epochs, grad_evals=evals)


def regularized_svrg_epoch(p, cfg, rng, x_start=None):
    """One epoch on f + gamma/2 |x - anchor|^2, starting from x_start (default: the anchor)."""
    start = p.anchor if x_start is None else x_start
    return _epoch(p.base, cfg, start, p.rhs, rng, gamma=p.gamma, center=np.asarray(p.anchor, dtype=np.float64))[0]


def regularized_component_gradient(p, i, x):
    g = component_gradient(p.base, i, x, p.rhs)
    return g + p.gamma * p.base.probabilities[i] * (np.asarray(x) - p.anchor)


def default_gamma(b, lam1_hat):
    mu = b.shift - lam1_hat
    mat = b.matrix
    gamma = math.sqrt(mat.d * lam1_hat * mat.frob_sq / max(mat.nnz, 1))
    return max(gamma, 2.0 * mu)


def in_accelerated_regime(b, lam1_hat):
    """nnz(A) <= d * |A|_F^2 * lam1 / mu^2, the regime where acceleration pays."""
    mu = b.shift - lam1_hat
    mat = b.matrix
    return mat.nnz <= mat.d * mat.frob_sq * lam1_hat / mu**2


def accelerated_solve(b, rhs, target_ratio, cfg, rng, x0=None):
    """Accelerated proximal point over gamma-regularized SVRG sub-solves.

    Each outer step approximately minimizes f(x) + gamma/2 |x - y|^2 to
    relative accuracy 1/(4((2 gamma + mu)/mu)^{3/2}), warm-started at the
    previous outer iterate, then extrapolates y with the constant momentum
    (1 - sqrt q)/(1 + sqrt q), q = mu/(mu + gamma).
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    x = np.zeros(b.d) if x0 is None else np.array(x0, dtype=np.float64)
    lam1_hat = cfg.lam1_hat
    mu = b.shift - lam1_hat
    if not mu > 0:
        raise ShiftError(f"shift {b.shift} must exceed the eigenvalue estimate {lam1_hat}")
    if cfg.check_regime and not in_accelerated_regime(b, lam1_hat):
        plain = SvrgConfig.from_theory(b, lam1_hat)
        return solve_to_accuracy(b, rhs, x, target_ratio, plain, rng)
    gamma = default_gamma(b, lam1_hat) if cfg.gamma is None else max(cfg.gamma, 2.0 * mu)
    sub_cfg = SvrgConfig.regularized_from_theory(b, lam1_hat, gamma)
    sub_ratio = 1.0 / (4.0 * ((2.0 * gamma + mu) / mu) ** 1.5)
    sub_epochs = epochs_for_ratio(sub_ratio)
    q = mu / (mu + gamma)
    sq = math.sqrt(q)
    momentum = (1.0 - sq) / (1.0 + sq)
    outer = outer_iterations(q, target_ratio)
    evals = 0
    epochs = 0
    y = x.copy()
    bound = _divergence_bound(x, rhs, mu)
    for _ in range(outer):
        x_prev = x
        for _ in range(sub_epochs):
            x, m = _epoch(b, sub_cfg, x, rhs, rng, gamma=gamma, center=y, bound=bound)
            evals += b.n + m
            epochs += 1
        if cfg.max_grad_evals is not None and evals > cfg.max_grad_evals:
            raise BudgetExceededError(
                f"accelerated solve used {evals} gradient evaluations (cap {cfg.max_grad_evals})",
                used=evals,
                cap=cfg.max_grad_evals,
                partial=x,
            )
        y = x + momentum * (x - x_prev)
    return SolveOutcome(solution=x, epochs_run=epochs, grad_evals=evals)


def outer_iterations(q, target_ratio):
    """Outer steps for a (1 - sqrt q) contraction to beat target_ratio, with
    the initial-gap constant 4/q of the accelerated scheme."""
    if target_ratio >= 1:
        return 0
    return max(1, math.ceil(math.log(4.0 / (q * target_ratio)) / math.sqrt(q)))
