"""Seeded experiment runner behind the command-line interface.

A run executes ``trials`` independent trials, trial t seeded with seed + t,
and returns a JSON-ready report. Wall-clock times live only in the report's
``timing`` object so the rest of the report is reproducible byte for byte.
"""

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from ._random import child_rng, make_rng
from .errors import (
    BudgetExceededError,
    DivergedError,
    EstimationFailedError,
    ShiftError,
    StalledError,
    StreamExhaustedError,
)
from .io import read_dense_csv, read_matrix_market
from .linalg import RowMatrix, ShiftedOperator, apply_sigma, rayleigh_quotient
from .oracle import SpectrumOracle, potential_g
from .power import DriverConfig, compute_top_eigenvector, gap_free_driver
from .shift_estimation import estimate_shift
from .solvers import SOLVER_NAMES, InverseBlockFactory
from .streaming import (
    FileOracle,
    OnlineConfig,
    SpikeModel,
    SpikeOracle,
    estimate_var_hint,
    online_refine,
    pilot_parameters,
)
from .synthetic import diag_spectrum, planted_spectrum, random_sparse

REPORT_SCHEMA = "shiftinvert.report/1"
TRACE_SCHEMA = "shiftinvert.trace/1"
MODES = ("offline", "online", "gap-free", "estimate-shift")
TRIAL_ERRORS = (
    StalledError,
    DivergedError,
    EstimationFailedError,
    BudgetExceededError,
    ShiftError,
    StreamExhaustedError,
)

log = logging.getLogger("shiftinvert")


def configure_logging():
    level = os.environ.get("SHIFTINVERT_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


@dataclass
class RunConfig:
    """Everything needed to reproduce a run; echoed verbatim into the report."""

    mode: str = "offline"
    input: str | None = None
    synthetic: str | None = None
    epsilon: float = 1e-6
    seed: int = 0
    trials: int = 1
    solver: str = "svrg"
    shift_solver: str | None = None
    alpha: float = 150.0
    gap_floor: float = 1e-4
    sample_cap: int | None = None
    var_hint: float | None = None
    stream: bool = False
    multi_epoch: bool = False
    baseline_iters: int | None = None

    def __post_init__(self):
        if (self.input is None) == (self.synthetic is None):
            raise ValueError("give exactly one of input and synthetic")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.solver not in SOLVER_NAMES:
            raise ValueError(f"solver must be one of {SOLVER_NAMES}")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        spike = self.synthetic is not None and self.synthetic.startswith("spike")
        if self.mode == "online":
            if self.input is not None and not self.stream:
                raise ValueError("online mode with a file input needs the stream flag")
            if self.synthetic is not None and not spike:
                raise ValueError("online mode needs a spike model or a sample stream")
        else:
            if spike:
                raise ValueError("the spike model is a distribution; use online mode")
            if self.stream:
                raise ValueError("the stream flag only applies to online mode")

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


def _parse_kv(body):
    out = {}
    for part in filter(None, body.split(",")):
        key, sep, val = part.partition("=")
        if not sep:
            raise ValueError(f"expected key=value, got {part!r}")
        out[key.strip()] = float(val)
    return out


def parse_synthetic(text):
    """Split a synthetic description into (kind, parameters).

    Forms: ``spike:d=50,strength=1``, ``diag:1,0.9,0.5`` and
    ``random:n=200,d=30,density=1,gap=0.1``.
    """
    kind, _, body = text.partition(":")
    kind = kind.strip()
    if kind == "diag":
        vals = [float(v) for v in body.split(",") if v.strip()]
        if not vals or min(vals) < 0:
            raise ValueError("diag spectrum needs non-negative values")
        return kind, {"values": vals}
    if kind == "spike":
        kv = _parse_kv(body)
        if "d" not in kv:
            raise ValueError("spike description needs d")
        return kind, {"d": int(kv["d"]), "strength": kv.get("strength", 1.0)}
    if kind == "random":
        kv = _parse_kv(body)
        if "d" not in kv or "gap" not in kv:
            raise ValueError("random description needs d and gap")
        d = int(kv["d"])
        return kind, {
            "n": int(kv.get("n", d)),
            "d": d,
            "density": kv.get("density", 1.0),
            "gap": kv["gap"],
            "decay": kv.get("decay", 0.5),
        }
    raise ValueError(f"unknown synthetic kind {kind!r}")


@dataclass
class Problem:
    """One trial's input: a matrix or a sample stream, with truth when known."""

    matrix: RowMatrix | None = None
    oracle: object = None
    eigenvalues: np.ndarray | None = None
    eigenvectors: np.ndarray | None = None

    @property
    def lam1(self):
        return None if self.eigenvalues is None else float(self.eigenvalues[0])

    @property
    def v1(self):
        return None if self.eigenvectors is None else self.eigenvectors[:, 0]

    @property
    def gap(self):
        if self.eigenvalues is None or len(self.eigenvalues) < 2:
            return None
        return float((self.eigenvalues[0] - self.eigenvalues[1]) / self.eigenvalues[0])


def load_matrix(path):
    path = Path(path)
    if path.suffix.lower() == ".mtx":
        return read_matrix_market(path)
    return read_dense_csv(path)


def build_problem(cfg, rng, cache=None):
    """Instance for one trial. Random planted instances are drawn from ``rng``;
    file matrices are read once and cached."""
    if cfg.input is not None:
        if cfg.mode == "online":
            return Problem(oracle=FileOracle(cfg.input, multi_epoch=cfg.multi_epoch, sample_cap=cfg.sample_cap))
        if cache is not None and "matrix" in cache:
            return Problem(matrix=cache["matrix"])
        m = load_matrix(cfg.input)
        if cache is not None:
            cache["matrix"] = m
        return Problem(matrix=m)
    kind, prm = parse_synthetic(cfg.synthetic)
    if kind == "spike":
        model = SpikeModel(prm["d"], prm["strength"])
        oracle = SpikeOracle(model, sample_cap=cfg.sample_cap)
        t = oracle.truth
        vals = np.linalg.eigvalsh(t.sigma)[::-1]
        return Problem(oracle=oracle, eigenvalues=vals, eigenvectors=t.v1[:, None])
    if kind == "diag":
        inst = diag_spectrum(prm["values"])
    elif prm["density"] >= 1.0:
        inst = planted_spectrum(prm["d"], prm["gap"], rng, n=prm["n"], decay=prm["decay"])
    else:
        inst = random_sparse(prm["n"], prm["d"], prm["density"], prm["gap"], rng, decay=prm["decay"])
    return Problem(matrix=inst.matrix, eigenvalues=inst.eigenvalues, eigenvectors=inst.eigenvectors)


def baseline_power_method(m, iters, rng, x0=None):
    """Classic power iteration on A^T A with normalization every round."""
    if iters < 1:
        raise ValueError("iters must be at least 1")
    if x0 is None:
        x = rng.standard_normal(m.d)
    else:
        x = np.asarray(x0, dtype=np.float64).copy()
    x /= np.linalg.norm(x)
    quotients = []
    for _ in range(iters):
        y = apply_sigma(m, x)
        nrm = np.linalg.norm(y)
        if nrm == 0:
            break
        x = y / nrm
        quotients.append(rayleigh_quotient(m, x))
    return {"x": x, "quotient": quotients[-1] if quotients else rayleigh_quotient(m, x), "quotients": quotients, "matvecs": iters}


def _driver_config(cfg):
    mode = "gap-free" if cfg.mode == "gap-free" else "offline"
    return DriverConfig(
        epsilon=cfg.epsilon,
        mode=mode,
        solver=cfg.solver,
        shift_solver=cfg.shift_solver,
        alpha=cfg.alpha,
        gap_floor=cfg.gap_floor,
    )


def _finite(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def _summarize(problem, report, epsilon):
    out = {
        "status": report.status,
        "quotient": _finite(report.quotient),
        "lambda": report.lam,
        "rounds": {"burn_in": report.burn_in_rounds, "warm_start": report.warm_rounds},
        "accepted": report.accepted,
        "rejected": report.rejected,
        "grad_evals": report.grad_evals,
        "samples_used": report.samples_used,
        "theory": {k: float(v) for k, v in report.params.items()},
    }
    if problem.v1 is not None and report.x is not None:
        x = report.x / np.linalg.norm(report.x)
        if problem.oracle is not None:
            out["quotient_true"] = problem.oracle.truth.quotient(x)
        else:
            out["quotient_true"] = float(x @ (problem.eigenvectors * problem.eigenvalues) @ (problem.eigenvectors.T @ x))
        out["abs_cos"] = float(abs(problem.v1 @ x))
        good = out["quotient_true"] >= (1.0 - epsilon) * problem.lam1
        out["success"] = bool(report.status == "ok" and good)
    return out


class TraceSink:
    """Collects per-round events; G is filled in only for exact-dense runs with known spectrum."""

    def __init__(self, with_g):
        self.with_g = with_g
        self.lines = []

    def callback(self, trial, pending):
        def on_round(event, x):
            pending.append((trial, dict(event), None if x is None else np.array(x)))

        return on_round

    def flush(self, pending, problem, lam):
        op = None
        if self.with_g and problem.matrix is not None and problem.eigenvalues is not None and lam is not None:
            op = ShiftedOperator(problem.matrix, lam)
            truth = SpectrumOracle.from_eigenpairs(problem.eigenvalues, problem.eigenvectors)
        for trial, event, x in pending:
            row = {
                "trial": trial,
                "phase": event.get("phase"),
                "round": event.get("round"),
                "quotient": _finite(event.get("quotient")),
                "samples_or_grads": event.get("samples_or_grads"),
                "accepted": event.get("accepted"),
            }
            if self.with_g:
                try:
                    row["G"] = _finite(potential_g(op, truth, x)) if op is not None else None
                except ValueError:
                    row["G"] = None
            self.lines.append(row)
        pending.clear()


def write_trace(path, lines, with_g):
    header = {"schema": TRACE_SCHEMA, "version": __version__, "g_column": with_g}
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for row in lines:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _online_setup(cfg, problem, rng):
    oracle = problem.oracle
    if oracle.truth is not None:
        t = oracle.truth
        gap = t.gap
        lam = t.lam1 * (1.0 + gap / 120.0)
        lam1_hat = t.lam1
        var = cfg.var_hint if cfg.var_hint is not None else t.var
        u = rng.standard_normal(oracle.d)
        u -= (u @ t.v1) * t.v1
        x0 = t.v1 + 0.3 * u / np.linalg.norm(u)
    else:
        lam, lam1_hat, gap = pilot_parameters(oracle, rng)
        var = cfg.var_hint if cfg.var_hint is not None else estimate_var_hint(oracle, rng)
        s = oracle.draw(rng, 100 * oracle.d)
        x0 = np.linalg.eigh(s.T @ s)[1][:, -1]
    return OnlineConfig(lam=lam, lam1_hat=lam1_hat, gap=gap, var_hint=var), x0


def run_trial(cfg, index, cache=None, sink=None):
    """Execute trial ``index``; returns (summary dict, elapsed seconds)."""
    seed = cfg.seed + index
    rng = make_rng(seed)
    start = time.perf_counter()
    problem = build_problem(cfg, child_rng(rng), cache)
    pending = []
    on_round = sink.callback(index, pending) if sink is not None else None
    lam = None
    try:
        if cfg.mode == "estimate-shift":
            factory = InverseBlockFactory(cfg.shift_solver or cfg.solver, gap_floor=cfg.gap_floor)
            est = estimate_shift(problem.matrix, cfg.alpha, factory, rng, gap_floor=cfg.gap_floor)
            out = {
                "status": "ok",
                "lambda_bar": est.lambda_bar,
                "lam1_tilde": est.lam1_tilde,
                "lam2_tilde": _finite(est.lam2_tilde),
                "iterations": est.iterations,
                "grad_evals": factory.grad_evals,
            }
            if problem.gap is not None:
                lo = (1.0 + problem.gap / 120.0) * problem.lam1
                hi = (1.0 + problem.gap / 8.0) * problem.lam1
                out["success"] = bool(lo <= est.lambda_bar <= hi)
        elif cfg.mode == "online":
            ocfg, x0 = _online_setup(cfg, problem, rng)
            report = online_refine(problem.oracle, x0, cfg.epsilon, ocfg, rng, on_round=on_round)
            report.params["var_hint"] = ocfg.var_hint
            lam = report.lam
            out = _summarize(problem, report, cfg.epsilon)
        else:
            dcfg = _driver_config(cfg)
            if cfg.mode == "gap-free":
                report = gap_free_driver(problem.matrix, cfg.epsilon, dcfg, rng, on_round=on_round)
            else:
                report = compute_top_eigenvector(problem.matrix, dcfg, rng, on_round=on_round)
            lam = report.lam
            out = _summarize(problem, report, cfg.epsilon)
            if cfg.baseline_iters:
                base = baseline_power_method(problem.matrix, cfg.baseline_iters, rng)
                out["baseline"] = {"quotient": base["quotient"], "matvecs": base["matvecs"]}
    except TRIAL_ERRORS as err:
        log.warning("trial %d failed: %s", index, err)
        out = {"status": type(err).__name__, "error": str(err)}
        if problem.lam1 is not None:
            out["success"] = False
    if sink is not None:
        sink.flush(pending, problem, lam)
    out = {"trial": index, "seed": seed, **out}
    return out, time.perf_counter() - start


def aggregate(trials):
    completed = [t for t in trials if t["status"] == "ok"]
    agg = {"trials": len(trials), "completed": len(completed)}
    if any("success" in t for t in trials):
        # Trials that failed outright count as unsuccessful.
        agg["success_rate"] = sum(bool(t.get("success", False)) for t in trials) / len(trials)
    key = "quotient_true" if all("quotient_true" in t for t in completed) and completed else "quotient"
    vals = [t[key] for t in completed if t.get(key) is not None]
    if vals:
        arr = np.array(vals)
        agg["quotient"] = {
            "source": key,
            "mean": float(arr.mean()),
            "min": float(arr.min()),
            "quantiles": {str(q): float(np.quantile(arr, q)) for q in (0.05, 0.5, 0.95)},
        }
    return agg


def run(cfg, trace_path=None):
    """Run all trials and return the report dict."""
    with_g = cfg.solver == "exact-dense"
    sink = TraceSink(with_g) if trace_path is not None else None
    cache = {}
    trials = []
    times = []
    for t in range(cfg.trials):
        summary, elapsed = run_trial(cfg, t, cache, sink)
        log.info("trial %d: %s", t, summary["status"])
        trials.append(summary)
        times.append(elapsed)
    if sink is not None:
        write_trace(trace_path, sink.lines, with_g)
    return {
        "schema": REPORT_SCHEMA,
        "version": __version__,
        "config": asdict(cfg),
        "trials": trials,
        "aggregate": aggregate(trials),
        "timing": {"trial_seconds": times, "total_seconds": float(sum(times))},
    }


def all_completed(report):
    return report["aggregate"]["completed"] == report["aggregate"]["trials"]


def canonical_bytes(report, include_timing=False):
    """Stable serialization; timing is dropped unless requested."""
    body = dict(report)
    if not include_timing:
        body.pop("timing", None)
    return json.dumps(body, sort_keys=True, indent=2, allow_nan=False).encode()


def write_report(report, path):
    with open(path, "wb") as fh:
        fh.write(canonical_bytes(report, include_timing=True))


def verify(report_path, trace_path=None):
    """Re-run the configuration echoed in a report; True iff the result (and
    trace, when given) is byte-identical apart from timing."""
    with open(report_path) as fh:
        old = json.load(fh)
    cfg = RunConfig.from_dict(old["config"])
    tmp_trace = None
    if trace_path is not None:
        tmp_trace = str(trace_path) + ".verify"
    new = run(cfg, trace_path=tmp_trace)
    same = canonical_bytes(old) == canonical_bytes(new)
    if trace_path is not None:
        with open(trace_path, "rb") as a, open(tmp_trace, "rb") as b:
            same = same and a.read() == b.read()
        os.remove(tmp_trace)
    return same
