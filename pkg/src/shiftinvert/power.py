"""Shifted-and-inverted power iteration driven by approximate linear solves.

The pipeline is: pick a shift lam just above lambda_1, run a burn-in of
plain normalized solves from a random start, then warm-start rounds in
which each approximate solve is accepted only if it passes a Rayleigh
quotient test and a norm test. Rejection makes the iteration robust to
solves that occasionally fail badly.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DivergedError, GapFreeRequiredError, StalledError
from .linalg import ShiftedOperator, rayleigh_quotient
from .shift_estimation import estimate_shift, gapfree_shift
from .solvers import InverseBlockFactory, make_solver, warm_start_point

G_WARM = 1.0 / math.sqrt(10.0)


@dataclass(frozen=True)
class PowerState:
    x: np.ndarray
    lam: float
    lam1_hat: float
    round: int = 0
    phase: str = "burn-in"
    accepted_count: int = 0
    rejected_count: int = 0
    last_accepted: bool | None = None
    quotient: float | None = None


@dataclass
class DriverConfig:
    """Settings for the offline and gap-free drivers.

    ``solver`` picks the linear solver for the power rounds and
    ``shift_solver`` (defaulting to the same) the one used inside shift
    estimation. ``max_rounds`` caps burn-in rounds when set.
    """

    epsilon: float
    mode: str = "offline"
    solver: str = "svrg"
    shift_solver: str | None = None
    burn_in_target_ratio: float = 1e-3
    warm_target_ratio: float = 1e-6
    warm_start_c1: float = G_WARM
    max_rounds: int | None = None
    restarts: int = 3
    alpha: float = 150.0
    gap_floor: float = 1e-4
    exit_rule: str = "proof"
    gap_free_c: float = 0.1
    max_grad_evals: int | None = None

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        for name in ("burn_in_target_ratio", "warm_target_ratio"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.mode not in ("offline", "online", "gap-free"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class SolveReport:
    x: np.ndarray
    quotient: float
    lam: float
    lam1_hat: float
    status: str = "ok"
    burn_in_rounds: int = 0
    warm_rounds: int = 0
    accepted: int = 0
    rejected: int = 0
    restarts: int = 0
    grad_evals: int = 0
    samples_used: int = 0
    shift: object = None
    params: dict = field(default_factory=dict)
    events: list = field(default_factory=list)


def random_init(d, rng):
    """Unit vector with i.i.d. standard normal direction."""
    if d < 1:
        raise ValueError("dimension must be positive")
    while True:
        x = rng.standard_normal(d)
        nrm = np.linalg.norm(x)
        if nrm > 0:
            return x / nrm


def scaled_identity_warm_start(b, x):
    """x / (x^T B x): exact for eigenvectors and good when x is nearly one."""
    return warm_start_point(b, np.asarray(x, dtype=np.float64))


def acceptance_thresholds(lam, lam1_hat):
    """(quotient cutoff, norm cutoff) used by the warm-start test."""
    gap_hat = lam - lam1_hat
    return lam1_hat - gap_hat / 6.0, (2.0 / 3.0) / gap_hat


def warm_start_round(state, solver, quot_estimator, rng=None):
    """One guarded power step.

    ``solver(x)`` approximates B^{-1} x; ``quot_estimator(v)`` estimates the
    Rayleigh quotient of v. The step is kept only if the result has a large
    enough norm and quotient; otherwise x is left unchanged.
    """
    quot_cut, norm_cut = acceptance_thresholds(state.lam, state.lam1_hat)
    try:
        x_hat = np.asarray(solver(state.x), dtype=np.float64)
        ok = bool(np.all(np.isfinite(x_hat)))
    except DivergedError:
        ok = False
    quotient = None
    if ok:
        nrm = float(np.linalg.norm(x_hat))
        ok = nrm >= norm_cut
        if ok:
            quotient = float(quot_estimator(x_hat))
            ok = quotient >= quot_cut
    if ok:
        return replace(
            state,
            x=x_hat / nrm,
            round=state.round + 1,
            phase="warm-start",
            accepted_count=state.accepted_count + 1,
            last_accepted=True,
            quotient=quotient,
        )
    return replace(
        state,
        round=state.round + 1,
        phase="warm-start",
        rejected_count=state.rejected_count + 1,
        last_accepted=False,
    )


def burn_in_rounds(d, lam, lam1_hat):
    """2 ceil(log2(d kappa)) + 10 with kappa = lam / (lam - lam1_hat) bounding
    the condition number of B^{-1}."""
    kappa = lam / (lam - lam1_hat)
    return 2 * math.ceil(math.log2(max(d * kappa, 2.0))) + 10


def burn_in(b, x0, solver, cfg, rng, lam1_hat, monitor=None, on_round=None):
    """Normalized approximate solves from x0 until the iterate is warm.

    Without ``monitor`` the exit rule is the warm-start quotient test
    followed by one confirming round. With ``monitor`` (a callable returning
    the potential of x, available only when the spectrum is known) the loop
    exits as soon as the potential drops to 1/sqrt(10). Up to
    ``cfg.restarts`` fresh random starts are tried before giving up.
    """
    lam = b.shift
    quot_cut, _ = acceptance_thresholds(lam, lam1_hat)
    limit = burn_in_rounds(b.d, lam, lam1_hat)
    if cfg.max_rounds is not None:
        limit = min(limit, cfg.max_rounds)
    x = np.asarray(x0, dtype=np.float64)
    x = x / np.linalg.norm(x)
    best = None
    total_rounds = 0
    for attempt in range(cfg.restarts + 1):
        if attempt > 0:
            x = random_init(b.d, rng)
        confirmed = False
        for r in range(limit + 1):
            q = rayleigh_quotient(b.matrix, x)
            state = PowerState(x=x, lam=lam, lam1_hat=lam1_hat, round=total_rounds, quotient=q)
            if best is None or q > best.quotient:
                best = state
            if monitor is not None:
                if monitor(x) <= G_WARM:
                    return replace(state, phase="warm-start")
            elif confirmed:
                return replace(state, phase="warm-start")
            elif q >= quot_cut:
                confirmed = True
            if r == limit:
                break
            try:
                y = np.asarray(solver(x), dtype=np.float64)
            except DivergedError:
                break
            nrm = np.linalg.norm(y)
            if not (np.isfinite(nrm) and nrm > 0):
                break
            x = y / nrm
            total_rounds += 1
            if on_round is not None:
                on_round({"phase": "burn-in", "round": total_rounds, "quotient": rayleigh_quotient(b.matrix, x)}, x)
    raise StalledError(f"burn-in did not reach the warm region after {cfg.restarts + 1} starts", state=best)


def warm_target(epsilon, lam, lam1_hat):
    """Potential level 0.5 sqrt(epsilon lam1 / mu) at which the quotient error is below epsilon lam1."""
    return 0.5 * math.sqrt(epsilon * lam1_hat / (lam - lam1_hat))


def warm_round_count(epsilon, lam, lam1_hat, c1=G_WARM):
    """Rounds until c1 5^{-i} falls below the warm target, plus two."""
    target = warm_target(epsilon, lam, lam1_hat)
    i = 0
    while c1 * 5.0 ** (-i) > target:
        i += 1
    return i + 2


def error_schedule(epsilon, lam, lam1_hat, c1=G_WARM):
    """Per-round error constants c1 5^{-i}, floored at the warm target so the
    final rounds run at the accuracy epsilon actually needs."""
    target = warm_target(epsilon, lam, lam1_hat)
    rounds = warm_round_count(epsilon, lam, lam1_hat, c1)
    return [max(c1 * 5.0 ** (-i), target) for i in range(1, rounds + 1)]


class _CountingSolve:
    """Binds a driver-level solver to one operator and accuracy, tracking work."""

    def __init__(self, solver, b, target_ratio, rng):
        self.solver = solver
        self.b = b
        self.target_ratio = target_ratio
        self.rng = rng
        self.grad_evals = 0

    def __call__(self, x):
        res = self.solver(self.b, x, scaled_identity_warm_start(self.b, x), self.target_ratio, self.rng)
        self.grad_evals += res.grad_evals
        return res.solution


def _unit_report(m):
    x = np.ones(1)
    q = rayleigh_quotient(m, x)
    return SolveReport(x=x, quotient=q, lam=q, lam1_hat=q)


def compute_top_eigenvector(m, cfg, rng, shift=None, on_round=None, monitor=None):
    """Full offline pipeline: shift search, burn-in, guarded warm-start rounds.

    ``shift`` may supply a precomputed ShiftEstimate. ``on_round(event, x)``
    is called after every round for tracing. ``monitor`` is forwarded to burn-in.
    """
    if m.d == 1:
        return _unit_report(m)
    shift_factory = InverseBlockFactory(
        cfg.shift_solver or cfg.solver, gap_floor=cfg.gap_floor, max_grad_evals=cfg.max_grad_evals
    )
    if shift is None:
        shift = estimate_shift(m, cfg.alpha, shift_factory, rng, gap_floor=cfg.gap_floor, exit_rule=cfg.exit_rule)
    lam = shift.lambda_bar
    lam1_hat = shift.lambda1_upper
    b = ShiftedOperator(m, lam)
    solver = make_solver(cfg.solver, lam1_hat, cfg.max_grad_evals)
    burn_solve = _CountingSolve(solver, b, cfg.burn_in_target_ratio, rng)
    warm_solve = _CountingSolve(solver, b, cfg.warm_target_ratio, rng)
    report = SolveReport(x=None, quotient=float("nan"), lam=lam, lam1_hat=lam1_hat, shift=shift)
    report.params = _theory_params(b, lam1_hat, cfg)

    def record(event, x):
        report.events.append(event)
        if on_round is not None:
            on_round(event, x)

    def grads():
        return shift_factory.grad_evals + burn_solve.grad_evals + warm_solve.grad_evals

    try:
        state = burn_in(b, random_init(m.d, rng), burn_solve, cfg, rng, lam1_hat, monitor=monitor, on_round=record)
    except StalledError as err:
        st = err.state
        report.x, report.quotient, report.status = st.x, st.quotient, "stalled"
        report.grad_evals = grads()
        raise StalledError(str(err), state=report) from None
    report.burn_in_rounds = state.round

    def quot(v):
        return rayleigh_quotient(m, v)

    rounds = warm_round_count(cfg.epsilon, lam, lam1_hat, cfg.warm_start_c1)
    q = rayleigh_quotient(m, state.x)
    for _ in range(rounds):
        if lam1_hat - q <= 0.5 * cfg.epsilon * q:
            break
        state = warm_start_round(state, warm_solve, quot)
        q = rayleigh_quotient(m, state.x)
        report.warm_rounds += 1
        record(
            {
                "phase": "warm-start",
                "round": state.round,
                "quotient": q,
                "accepted": state.last_accepted,
                "samples_or_grads": grads(),
            },
            state.x,
        )
    report.x = state.x
    report.quotient = q
    report.accepted = state.accepted_count
    report.rejected = state.rejected_count
    report.grad_evals = grads()
    return report


def _theory_params(b, lam1_hat, cfg):
    mu = b.shift - lam1_hat
    params = {"lambda": b.shift, "lambda1_hat": lam1_hat, "mu_hat": mu}
    if cfg.solver in ("svrg", "accelerated") and mu > 0:
        s_bar = 2.0 * lam1_hat * b.matrix.frob_sq / mu
        params.update({"s_bar": s_bar, "eta": 1.0 / (8.0 * s_bar), "m_max": math.ceil(64.0 * s_bar / mu)})
    return params


def gap_free_rounds(d, epsilon, c=0.1):
    """ceil(log2(100 d^{10.5} / (c epsilon^{1.5})))."""
    return math.ceil(math.log2(100.0) + 10.5 * math.log2(d) - math.log2(c) - 1.5 * math.log2(epsilon))


def gap_free_driver(m, epsilon, cfg, rng, on_round=None):
    """Power iteration at lam just above lambda_1 that needs no eigengap.

    The shift sits within epsilon lambda_1 / 100 of lambda_1, so every
    direction with eigenvalue below (1 - epsilon/2) lambda_1 shrinks by a
    constant factor per round while the top cluster is left alone.
    """
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if m.d == 1:
        return _unit_report(m)
    lam, lam1_tilde = gapfree_shift(m, epsilon, rng)
    lam1_hat = lam1_tilde / (1.0 - epsilon / 400.0)
    b = ShiftedOperator(m, lam)
    solver = make_solver(cfg.solver, lam1_hat, cfg.max_grad_evals)
    ratio = min(cfg.burn_in_target_ratio, (cfg.gap_free_c * math.sqrt(epsilon) / (10.0 * math.sqrt(m.d))) ** 2)
    solve = _CountingSolve(solver, b, ratio, rng)
    rounds = gap_free_rounds(m.d, epsilon, cfg.gap_free_c)
    x = random_init(m.d, rng)
    report = SolveReport(x=x, quotient=float("nan"), lam=lam, lam1_hat=lam1_hat)
    report.params = _theory_params(b, lam1_hat, cfg)
    for r in range(rounds):
        y = solve(x)
        x = y / np.linalg.norm(y)
        q = rayleigh_quotient(m, x)
        event = {"phase": "gap-free", "round": r + 1, "quotient": q, "samples_or_grads": solve.grad_evals}
        report.events.append(event)
        if on_round is not None:
            on_round(event, x)
    report.x = x
    report.quotient = rayleigh_quotient(m, x)
    report.burn_in_rounds = rounds
    report.grad_evals = solve.grad_evals
    return report


def require_gap_dependent(epsilon, gap):
    if epsilon >= gap:
        raise GapFreeRequiredError(
            f"epsilon={epsilon} is not below the eigengap {gap}; use the gap-free mode instead"
        )
