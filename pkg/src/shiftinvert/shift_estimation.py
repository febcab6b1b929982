"""Locating a shift slightly above lambda_1 without knowing the eigengap.

Two-column block power iteration estimates the top two eigenvalues of an
operator. Run on (lam_bar I - A^T A)^{-1}, the estimates tell how far
lam_bar sits above lambda_1 compared with the gap to lambda_2; lam_bar is
halved toward lambda_1 until it is within a constant multiple of the gap.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EstimationFailedError
from .linalg import apply_sigma
from .solvers import InverseBlockFactory

EXIT_RULES = ("proof", "printed")


@dataclass
class EigEstimatePair:
    tilde_lambda1: float
    tilde_lambda2: float
    vectors: np.ndarray


@dataclass
class ShiftEstimate:
    """Result of the shift search.

    ``lambda1_upper`` is an upper bound on lambda_1 derived from the accuracy
    of the final eigenvalue estimate; drivers use it to size solver steps.
    """

    lambda_bar: float
    lam1_tilde: float
    lam2_tilde: float
    iterations: int
    alpha: float
    lambda1_upper: float
    history: list = field(default_factory=list)


def _orthonormalize(y):
    """Thin QR of a one- or two-column block by Gram-Schmidt with one
    reorthogonalization pass; the diagonal of R is non-negative."""
    k = y.shape[1]
    q = np.empty_like(y)
    r = np.zeros((k, k))
    r[0, 0] = np.linalg.norm(y[:, 0])
    if r[0, 0] == 0:
        raise ValueError("operator annihilated the iterated block")
    q[:, 0] = y[:, 0] / r[0, 0]
    if k == 2:
        w = y[:, 1].copy()
        for _ in range(2):
            c = q[:, 0] @ w
            w -= c * q[:, 0]
            r[0, 1] += c
        r[1, 1] = np.linalg.norm(w)
        if r[1, 1] == 0:
            # Rank-deficient block: complete the basis with any orthogonal direction.
            w = np.zeros(y.shape[0])
            w[np.argmin(np.abs(q[:, 0]))] = 1.0
            w -= (q[:, 0] @ w) * q[:, 0]
            q[:, 1] = w / np.linalg.norm(w)
        else:
            q[:, 1] = w / r[1, 1]
    return q, r


def power_steps(alpha, d):
    return max(1, math.ceil(alpha * math.log(d))) if d > 1 else 1


def eig_estimate(apply_m, d, t, rng, on_block=None):
    """Rayleigh quotients of the two top left singular vectors of M^t W.

    W is d x 2 standard normal. The block is re-orthonormalized after every
    application; the triangular factors are accumulated so the singular
    vectors are those of the unnormalized product.
    """
    if t < 1:
        raise ValueError("t must be at least 1")
    k = min(2, d)
    y = rng.standard_normal((d, k))
    r_acc = np.eye(k)
    for _ in range(t):
        q, r = _orthonormalize(apply_m(y))
        r_acc = r @ r_acc
        scale = np.max(np.abs(r_acc))
        if scale > 0:
            r_acc = r_acc / scale
        y = q
        if on_block is not None:
            on_block(y)
    u, _, _ = np.linalg.svd(r_acc)
    vecs = y @ u
    mv = apply_m(vecs)
    quots = np.einsum("ij,ij->j", vecs, mv) / np.einsum("ij,ij->j", vecs, vecs)
    order = np.argsort(quots)[::-1]
    quots = quots[order]
    vecs = vecs[:, order]
    second = float(quots[1]) if k > 1 else 0.0
    return EigEstimatePair(float(quots[0]), second, vecs)


def _exit(rule, lam_bar, l1, l2):
    if rule == "proof":
        return lam_bar - l1 < 0.1 * (lam_bar - l2)
    return lam_bar - l1 >= 0.1 * (lam_bar - l2)


def iteration_guard(gap_floor):
    return 4 * math.ceil(math.log2(10.0 / gap_floor))


def estimate_shift(m, alpha=150.0, solver_factory=None, rng=None, gap_floor=1e-4, exit_rule="proof", t=None):
    """Search for lam_bar with (1 + gap/120) lambda_1 <= lam_bar <= (1 + gap/8) lambda_1.

    ``solver_factory(m, lam, lam1_upper, rng)`` returns a block operator
    applying (lam I - A^T A)^{-1}; by default SVRG solves are used.
    ``exit_rule="proof"`` stops once lam_bar - l1 < (lam_bar - l2)/10;
    ``"printed"`` uses the opposite inequality.
    """
    if not alpha > 100:
        raise ValueError("alpha must exceed 100")
    if exit_rule not in EXIT_RULES:
        raise ValueError(f"exit_rule must be one of {EXIT_RULES}")
    if rng is None:
        raise ValueError("an explicit random generator is required")
    if solver_factory is None:
        solver_factory = InverseBlockFactory("svrg", gap_floor=gap_floor)
    d = m.d
    t = power_steps(alpha, d) if t is None else t

    try:
        first = eig_estimate(lambda y: apply_sigma(m, y), d, t, rng)
    except ValueError:
        raise EstimationFailedError("A^T A appears to be zero", []) from None
    lam_bar = 1.5 * first.tilde_lambda1
    lam1_upper = first.tilde_lambda1 / (1.0 - 1.0 / alpha)
    history = [(lam_bar, first.tilde_lambda1, first.tilde_lambda2)]
    if lam_bar <= 0:
        raise EstimationFailedError("A^T A appears to be zero", history)

    for i in range(1, iteration_guard(gap_floor) + 1):
        apply_inv = solver_factory(m, lam_bar, lam1_upper, rng)
        pair = eig_estimate(apply_inv, d, t, rng)
        l1 = lam_bar - 1.0 / pair.tilde_lambda1
        l2 = lam_bar - 1.0 / pair.tilde_lambda2 if pair.tilde_lambda2 > 0 else -np.inf
        new_bar = 0.5 * (l1 + lam_bar)
        lam1_upper = min(lam1_upper, l1 + (lam_bar - l1) / (alpha - 1.0))
        history.append((new_bar, l1, l2))
        lam_bar = new_bar
        if _exit(exit_rule, lam_bar, l1, l2):
            return ShiftEstimate(
                lambda_bar=lam_bar,
                lam1_tilde=l1,
                lam2_tilde=l2,
                iterations=i,
                alpha=alpha,
                lambda1_upper=lam1_upper,
                history=history,
            )
    raise EstimationFailedError(
        f"no exit after {iteration_guard(gap_floor)} iterations; gap may be below gap_floor={gap_floor}", history
    )


def gapfree_shift(m, epsilon, rng):
    """(lam, lam1_tilde) with |lam1_tilde - lambda_1| <= epsilon lambda_1 / 400
    and lam = lam1_tilde (1 + epsilon/200)."""
    if not 0 < epsilon < 1 + 1e-12:
        raise ValueError("epsilon must lie in (0, 1]")
    alpha = 400.0 / epsilon
    t = power_steps(alpha, m.d)
    pair = eig_estimate(lambda y: apply_sigma(m, y), m.d, t, rng)
    return pair.tilde_lambda1 * (1.0 + epsilon / 200.0), pair.tilde_lambda1


def estimate_lambda1_gapfree(m, epsilon, rng):
    """Shift in (lambda_1, lambda_1 (1 + epsilon/100)] from a block power estimate."""
    return gapfree_shift(m, epsilon, rng)[0]
