"""Eigenvector refinement when A^T A is replaced by a covariance E[a a^T]
that can only be accessed through i.i.d. samples.

Every sample is drawn through a :class:`SampleOracle`, which counts draws
against an optional hard cap. Samples are generated in bounded chunks and
discarded after use, so memory stays O(d) regardless of the sample count.
"""

import math
import struct
from dataclasses import dataclass

import numpy as np

from ._kernels import spike_fill, stream_steps
from .errors import BudgetExceededError, DivergedError, GapFreeRequiredError, ParseError, StreamExhaustedError
from .power import G_WARM, PowerState, SolveReport, error_schedule, warm_start_round

CHUNK_ROWS = 4096
C2 = 1.0 / 44.0
C3 = 1.0 / 20.0
BINARY_MAGIC = b"SIVEC001"


class StreamBudget:
    """Running sample count with an optional hard cap."""

    def __init__(self, sample_cap=None):
        if sample_cap is not None and sample_cap < 0:
            raise ValueError("sample_cap must be non-negative")
        self.sample_cap = sample_cap
        self.samples_used = 0

    def charge(self, k):
        if self.sample_cap is not None and self.samples_used + k > self.sample_cap:
            raise BudgetExceededError(
                f"drawing {k} more samples would exceed the cap of {self.sample_cap}",
                used=self.samples_used,
                cap=self.sample_cap,
            )
        self.samples_used += k


@dataclass
class GroundTruth:
    """Exact covariance facts reported by synthetic oracles."""

    sigma: np.ndarray
    v1: np.ndarray
    lam1: float
    lam2: float
    var: float

    @property
    def gap(self):
        return (self.lam1 - self.lam2) / self.lam1

    def quotient(self, x):
        x = np.asarray(x, dtype=np.float64)
        return float(x @ self.sigma @ x / (x @ x))


class SampleOracle:
    """Source of i.i.d. vectors in R^d. Subclasses implement ``_generate``."""

    truth = None
    streaming = True

    def __init__(self, d, sample_cap=None):
        self.d = int(d)
        self.budget = StreamBudget(sample_cap)

    @property
    def samples_used(self):
        return self.budget.samples_used

    def draw(self, rng, size):
        """A ``size`` x d array of fresh samples, charged to the budget."""
        self.budget.charge(size)
        return self._generate(rng, size)

    def chunks(self, rng, total):
        """Yield ``total`` samples in blocks of at most CHUNK_ROWS rows."""
        done = 0
        while done < total:
            step = min(CHUNK_ROWS, total - done)
            yield self.draw(rng, step)
            done += step

    def _generate(self, rng, size):
        raise NotImplementedError


@dataclass(frozen=True)
class SpikeModel:
    """a = sqrt(strength) * iota * v_star + z with iota ~ N(0,1), z ~ N(0, I)."""

    d: int
    strength: float
    v_star: np.ndarray = None

    def __post_init__(self):
        if self.d < 1 or self.strength < 0:
            raise ValueError("spike model needs d >= 1 and strength >= 0")
        v = np.zeros(self.d) if self.v_star is None else np.asarray(self.v_star, dtype=np.float64)
        if self.v_star is None:
            v[0] = 1.0
        if v.shape != (self.d,) or not np.isclose(np.linalg.norm(v), 1.0):
            raise ValueError("v_star must be a unit vector of length d")
        object.__setattr__(self, "v_star", v)

    @property
    def lam1(self):
        return 1.0 + self.strength

    @property
    def gap(self):
        return self.strength / (1.0 + self.strength) if self.d > 1 else 1.0

    @property
    def var(self):
        """v(D) = (d + 2 + 3 strength) / (1 + strength)."""
        return (self.d + 2.0 + 3.0 * self.strength) / (1.0 + self.strength)

    def covariance(self):
        v = self.v_star
        return np.eye(self.d) + self.strength * np.outer(v, v)

    def truth(self):
        lam2 = 1.0 if self.d > 1 else 0.0
        return GroundTruth(self.covariance(), self.v_star.copy(), self.lam1, lam2, self.var)


def spike_samples(model, rng, size):
    out = np.empty((size, model.d))
    spike_fill(rng, math.sqrt(model.strength), model.v_star, out)
    return out


def spike_sample(model, rng):
    """One draw from the spike model."""
    return spike_samples(model, rng, 1)[0]


class SpikeOracle(SampleOracle):
    def __init__(self, model, sample_cap=None):
        super().__init__(model.d, sample_cap)
        self.model = model
        self.truth = model.truth()

    def _generate(self, rng, size):
        return spike_samples(self.model, rng, size)


class PointMassOracle(SampleOracle):
    """Always returns the same vector; Sigma = a a^T and v(D) = 1."""

    def __init__(self, a, sample_cap=None):
        a = np.asarray(a, dtype=np.float64)
        super().__init__(a.size, sample_cap)
        self.a = a
        nrm2 = float(a @ a)
        if nrm2 == 0:
            raise ValueError("point mass at the origin has no top eigenvector")
        self.truth = GroundTruth(np.outer(a, a), a / math.sqrt(nrm2), nrm2, 0.0, 1.0)

    def _generate(self, rng, size):
        return np.broadcast_to(self.a, (size, self.d)).copy()


class FileOracle(SampleOracle):
    """Samples read in order from a file, each exactly once.

    ``fmt`` is "csv" (one comma-separated vector per line) or "binary"
    (8-byte magic, little-endian uint64 d, then float64 records). Reading past
    the end raises StreamExhaustedError unless ``multi_epoch`` is set, in which
    case the file is rewound and ``streaming`` becomes False.
    """

    def __init__(self, path, fmt=None, multi_epoch=False, sample_cap=None):
        self.path = str(path)
        self.fmt = fmt or ("binary" if self.path.endswith((".bin", ".f64")) else "csv")
        if self.fmt not in ("csv", "binary"):
            raise ValueError(f"unknown stream format {self.fmt!r}")
        self.multi_epoch = multi_epoch
        self.epochs = 0
        self._line = 0
        self._fh = open(self.path, "rb" if self.fmt == "binary" else "r")
        if self.fmt == "binary":
            head = self._fh.read(16)
            if len(head) < 16 or head[:8] != BINARY_MAGIC:
                raise ParseError("missing binary stream header", path=self.path)
            d = struct.unpack("<Q", head[8:])[0]
            self._data_start = 16
            size = self._fh.seek(0, 2)
            self._fh.seek(16)
            if d < 1 or size - 16 < 8 * d:
                raise ParseError("binary stream holds no complete record", path=self.path)
        else:
            first = self._peek_csv_dim()
            d = first
        if d < 1:
            raise ParseError("stream dimension must be positive", path=self.path)
        super().__init__(d, sample_cap)

    @property
    def streaming(self):
        return self.epochs == 0

    def close(self):
        self._fh.close()

    def _peek_csv_dim(self):
        pos = self._fh.tell()
        for line in self._fh:
            if line.strip():
                self._fh.seek(pos)
                return len(line.split(","))
        raise ParseError("stream file contains no vectors", path=self.path)

    def _rewind(self):
        if not self.multi_epoch:
            raise StreamExhaustedError(f"{self.path}: stream exhausted after {self.samples_used} samples")
        self.epochs += 1
        self._line = 0
        self._fh.seek(self._data_start if self.fmt == "binary" else 0)

    def _read_csv_row(self):
        while True:
            line = self._fh.readline()
            if not line:
                self._rewind()
                continue
            self._line += 1
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != self.d:
                raise ParseError(f"expected {self.d} values, found {len(parts)}", line=self._line, path=self.path)
            try:
                row = np.array([float(p) for p in parts])
            except ValueError as err:
                raise ParseError(str(err), line=self._line, path=self.path) from None
            if not np.all(np.isfinite(row)):
                col = int(np.flatnonzero(~np.isfinite(row))[0]) + 1
                raise ParseError(f"non-finite value in column {col}", line=self._line, path=self.path)
            return row

    def _read_binary_rows(self, size):
        out = np.empty((size, self.d))
        got = 0
        while got < size:
            buf = self._fh.read((size - got) * self.d * 8)
            rows = len(buf) // (self.d * 8)
            if rows == 0:
                self._rewind()
                continue
            out[got : got + rows] = np.frombuffer(buf[: rows * self.d * 8], dtype="<f8").reshape(rows, self.d)
            got += rows
        if not np.all(np.isfinite(out)):
            raise ParseError("non-finite value in binary stream", path=self.path)
        return out

    def _generate(self, rng, size):
        if self.fmt == "binary":
            return self._read_binary_rows(size)
        return np.array([self._read_csv_row() for _ in range(size)]).reshape(size, self.d)


def write_binary_stream(path, samples):
    samples = np.ascontiguousarray(samples, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC + struct.pack("<Q", samples.shape[1]))
        fh.write(samples.tobytes())


def rayleigh_batch_sizes(epsilon, p, var_hint):
    """(k, m): k = ceil(4 v / eps^2) samples per batch, m = ceil(18 ln(1/p)) batches."""
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0, 1]")
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    return math.ceil(4.0 * var_hint / epsilon**2), max(1, math.ceil(18.0 * math.log(1.0 / p)))


def estimate_rayleigh(oracle, x, epsilon, p, var_hint, rng):
    """Median over m batches of the mean of (x . a)^2 over k samples."""
    x = np.asarray(x, dtype=np.float64)
    k, m = rayleigh_batch_sizes(epsilon, p, var_hint)
    means = np.empty(m)
    for j in range(m):
        acc = 0.0
        for block in oracle.chunks(rng, k):
            proj = block @ x
            acc += float(proj @ proj)
        means[j] = acc / k
    return float(np.median(means))


def estimate_var_hint(oracle, rng, pilot=None, iters=100):
    """Plug-in estimate of v(D) = |E |a|^2 a a^T|_2 / lambda_1^2 from a pilot sample
    (10 d draws by default), using power iteration on both empirical operators."""
    n = 10 * oracle.d if pilot is None else pilot
    s = oracle.draw(rng, n)
    w = np.einsum("ij,ij->i", s, s)

    def top(weights):
        x = rng.standard_normal(oracle.d)
        val = 0.0
        for _ in range(iters):
            y = s.T @ (weights * (s @ x)) / n
            val = float(np.linalg.norm(y))
            if val == 0:
                return 0.0
            x = y / val
        return val

    lam1 = top(np.ones(n))
    if lam1 == 0:
        raise ValueError("pilot sample is identically zero")
    return top(w) / lam1**2


def pilot_parameters(oracle, rng, n_pilot=None, position=1.0 / 120.0):
    """(lam, lam1_hat, gap_hat) from the empirical covariance of a pilot batch.

    lam is placed at (1 + position * gap_hat) lam1_hat. Accuracy depends on
    the pilot size; callers with known parameters should pass them instead.
    """
    n = 100 * oracle.d if n_pilot is None else n_pilot
    s = oracle.draw(rng, n)
    vals = np.linalg.eigvalsh(s.T @ s / n)[::-1]
    lam1 = float(vals[0])
    gap = float((vals[0] - vals[1]) / vals[0]) if oracle.d > 1 else 1.0
    return lam1 * (1.0 + position * gap), lam1, gap


@dataclass
class StreamParams:
    """Parameters of one streaming SVRG step, kept for reporting."""

    s_bar: float
    eta: float
    k: int
    m: int


def stream_step_params(lam, lam1_hat, var_hint, c2=C2, c3=C3):
    """S_bar = lam + v lam1^2 / mu, effective step (c2/8)/S_bar,
    m = ceil(S_bar / (mu c2^2)), k = max(ceil(S_bar/(mu c2)), ceil(v lam1^2/(mu^2 c3)))."""
    mu = lam - lam1_hat
    if not mu > 0:
        raise ValueError("lam must exceed lam1_hat")
    s_bar = lam + var_hint * lam1_hat**2 / mu
    m = math.ceil(s_bar / (mu * c2**2))
    k = max(math.ceil(s_bar / (mu * c2)), math.ceil(var_hint * lam1_hat**2 / (mu**2 * c3)))
    return StreamParams(s_bar=s_bar, eta=c2 / (8.0 * s_bar), k=k, m=m)


def streaming_svrg_step(oracle, lam, x0, eta, k, m, rng, rhs):
    """One streaming SVRG step for min 1/2 x^T (lam I - Sigma) x - rhs^T x.

    The anchor gradient lam x0 - (1/k) sum a (a . x0) - rhs uses k samples;
    then m~ uniform on {1..m} corrected steps each use one fresh sample.
    ``eta`` is the effective step size.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    if k < 1 or m < 1 or not eta > 0:
        raise ValueError("k, m and eta must be positive")
    acc = np.zeros(oracle.d)
    for block in oracle.chunks(rng, k):
        acc += block.T @ (block @ x0)
    g = lam * x0 - acc / k - rhs
    m_tilde = int(rng.integers(1, m + 1))
    y = np.zeros(oracle.d)
    bound = 1e12 * (np.linalg.norm(x0) + np.linalg.norm(rhs) / max(lam, 1e-300)) + 1.0
    for block in oracle.chunks(rng, m_tilde):
        stream_steps(block, y, g, eta, lam)
        if not np.all(np.isfinite(y)) or np.linalg.norm(y) > bound:
            raise DivergedError("streaming SVRG iterate is non-finite or exploding", x0.copy())
    return x0 + y


@dataclass
class StreamingConfig:
    """Shift, eigenvalue estimate and variance bound for streaming solves."""

    lam1_hat: float
    var_hint: float
    c2: float = C2
    c3: float = C3

    def __post_init__(self):
        if not (0 < self.c2 < 1 and 0 < self.c3 < 1):
            raise ValueError("c2 and c3 must lie in (0, 1)")
        if not self.var_hint > 0:
            raise ValueError("var_hint must be positive")


def solve_repetitions(c):
    return max(1, math.ceil(math.log2(1.0 / c) - 1e-12))


def streaming_solve(oracle, lam, rhs_unit, c, cfg, rng, on_step=None):
    """Approximate B^{-1} rhs_unit from x0 = 0 with E|x - x*|_B^2 <= 10 c lambda_1(B^{-1}).

    Repeats the streaming step ceil(log2(1/c)) times, halving c3 after each
    repetition so the error bound halves.
    """
    rhs_unit = np.asarray(rhs_unit, dtype=np.float64)
    if not abs(np.linalg.norm(rhs_unit) - 1.0) < 1e-8:
        raise ValueError("right-hand side must be a unit vector")
    if not 0 < c <= 1:
        raise ValueError("c must lie in (0, 1]")
    x = np.zeros(oracle.d)
    c3 = cfg.c3
    for _ in range(solve_repetitions(c)):
        prm = stream_step_params(lam, cfg.lam1_hat, cfg.var_hint, cfg.c2, c3)
        x = streaming_svrg_step(oracle, lam, x, prm.eta, prm.k, prm.m, rng, rhs_unit)
        if on_step is not None:
            on_step(prm)
        c3 /= 2.0
    return x


@dataclass
class OnlineConfig:
    """Inputs to online refinement.

    ``solve_c_factor`` maps the round's error constant c1 to the solver
    accuracy c = solve_c_factor * c1^2; the default 1e-7 makes
    sqrt(10 c) = c1 / 1000, the solve accuracy the warm-start analysis asks for.
    """

    lam: float
    lam1_hat: float
    gap: float
    var_hint: float
    solve_c_factor: float = 1e-7
    c2: float = C2
    c3: float = C3
    c1: float = G_WARM
    p: float | None = None

    def __post_init__(self):
        if not self.lam > self.lam1_hat > 0:
            raise ValueError("need lam > lam1_hat > 0")
        if not 0 < self.gap <= 1:
            raise ValueError("gap must lie in (0, 1]")


def online_refine(oracle, x0, epsilon, cfg, rng, on_round=None):
    """Warm-start rounds driven by streaming solves and median-of-means quotients.

    Returns a report whose ``status`` is "budget-exceeded" if the sample cap
    ran out; its ``x`` is then the last accepted iterate.
    """
    if epsilon >= cfg.gap:
        raise GapFreeRequiredError(
            f"epsilon={epsilon} is not below the eigengap {cfg.gap}; the online method needs epsilon < gap"
        )
    x = np.asarray(x0, dtype=np.float64)
    x = x / np.linalg.norm(x)
    schedule = error_schedule(epsilon, cfg.lam, cfg.lam1_hat, cfg.c1)
    rounds = len(schedule)
    p = cfg.p if cfg.p is not None else 1.0 / (4.0 * rounds)
    mu_hat = cfg.lam - cfg.lam1_hat
    quot_eps = min(1.0, mu_hat / (30.0 * cfg.lam1_hat))
    scfg = StreamingConfig(cfg.lam1_hat, cfg.var_hint, cfg.c2, cfg.c3)
    start = oracle.samples_used
    state = PowerState(x=x, lam=cfg.lam, lam1_hat=cfg.lam1_hat, phase="warm-start")
    report = SolveReport(x=x, quotient=float("nan"), lam=cfg.lam, lam1_hat=cfg.lam1_hat)
    report.params = {"lambda": cfg.lam, "lambda1_hat": cfg.lam1_hat, "mu_hat": mu_hat, "rounds": rounds}

    def quot(v):
        return estimate_rayleigh(oracle, v / np.linalg.norm(v), quot_eps, p, cfg.var_hint, rng)

    try:
        for i, c1 in enumerate(schedule, start=1):
            c = min(1.0, cfg.solve_c_factor * c1**2)

            def solve(v, c=c):
                return streaming_solve(oracle, cfg.lam, v, c, scfg, rng)

            state = warm_start_round(state, solve, quot)
            event = {
                "phase": "warm-start",
                "round": i,
                "quotient": state.quotient,
                "accepted": state.last_accepted,
                "samples_or_grads": oracle.samples_used - start,
            }
            report.events.append(event)
            if on_round is not None:
                on_round(event, state.x)
            if state.last_accepted:
                report.quotient = state.quotient
    except BudgetExceededError:
        report.status = "budget-exceeded"
    report.x = state.x
    report.warm_rounds = state.round
    report.accepted = state.accepted_count
    report.rejected = state.rejected_count
    report.samples_used = oracle.samples_used - start
    return report
