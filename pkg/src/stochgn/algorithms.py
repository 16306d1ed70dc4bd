"""Outer drivers: deterministic Gauss-Newton, SGN with mini-batch estimators
and SGN2 with SARAH estimators, plus trace recording and the rate envelope."""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import CompositionProblem, evaluate_objective
from .errors import InvalidConfiguration, InvalidParameter, SubsolverError, UnsupportedOperation
from .estimators import (
    BatchSchedule,
    Estimate,
    minibatch_estimate,
    sample_batch,
    sarah_update,
    schedule_minibatch_expectation,
    schedule_minibatch_finitesum,
    schedule_sarah,
)
from .subsolver import DEFAULT_K_MAX, ProxLinearSolution, ProxLinearSubproblem, solve_proxlinear

ALGORITHMS = ("gn", "sgn", "sgn2")


@dataclass
class RunConfig:
    """Driver settings.

    ``iters`` is the number of outer steps for ``gn``/``sgn`` and the number
    of epochs for ``sgn2`` (each epoch is one snapshot step plus ``inner``
    SARAH steps). ``tol=None`` uses the subproblem's default tolerance.
    ``psi_gap`` bounds ``Psi(x0) - Psi*`` and is only needed by the SARAH
    schedule when no epoch length is fixed.
    """

    algorithm: str = "gn"
    M: float = 1.0
    iters: int = 100
    inner: int = 0
    schedule: BatchSchedule = field(default_factory=BatchSchedule)
    subsolver: str = "pd"
    tol: float | None = None
    k_max: int = DEFAULT_K_MAX
    seed: int = 0
    strict: bool = True
    monitor: bool = True
    record_time: bool = False
    psi_gap: float | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise InvalidParameter(f"unknown algorithm {self.algorithm!r}")
        if not self.M > 0:
            raise InvalidParameter("M must be positive")
        if self.iters < 1:
            raise InvalidParameter("iteration budget must be >= 1")
        if self.inner < 0:
            raise InvalidParameter("inner loop length must be >= 0")
        if self.subsolver not in ("adpg", "pd"):
            raise InvalidParameter(f"unknown subsolver {self.subsolver!r}")


@dataclass
class TraceRecord:
    """State after producing iterate ``x_iter``.

    Counters are cumulative oracle calls spent to reach ``x_iter``;
    ``gnorm_sq`` and ``subsolver_iters`` describe the step taken from it
    (NaN and 0 on the final record).
    """

    iter: int
    epochs: float
    oracle_f: int
    oracle_j: int
    psi: float
    gnorm_sq: float = math.nan
    subsolver_iters: int = 0
    wall_ms: float = math.nan


@dataclass
class StepInfo:
    """Everything needed to audit one step ``x -> x_next`` after the run."""

    t: int
    x: np.ndarray
    estimate: Estimate
    solution: ProxLinearSolution
    x_next: np.ndarray


@dataclass
class RunTrace:
    records: list[TraceRecord]
    iterates: list[np.ndarray]
    x_final: np.ndarray
    x_hat: np.ndarray | None = None
    last_step: StepInfo | None = None
    batch_sizes: list[tuple[int, int]] = field(default_factory=list)

    @property
    def psi(self) -> np.ndarray:
        return np.array([r.psi for r in self.records])

    @property
    def gnorm_sq(self) -> np.ndarray:
        """``||G~_M(x_t)||^2`` for every iterate that has a computed step."""
        return np.array([r.gnorm_sq for r in self.records[:-1]])


def rate_envelope(psi0: float, psi_star: float, M: float, C: float, T: int, eps: float) -> float:
    """``2 M^2 (psi0 - psi_star) / (C (T + 1)) + eps^2 / 2``.

    Bounds the average squared prox-gradient norm over ``T + 1`` steps.
    """
    if not C > 0:
        raise InvalidParameter("C must be positive")
    if T < 0:
        raise InvalidParameter("T must be nonnegative")
    return 2.0 * M * M * (psi0 - psi_star) / (C * (T + 1)) + 0.5 * eps * eps


def select_output(trace: RunTrace, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw over the recorded iterates."""
    if not trace.iterates:
        raise InvalidParameter("trace is empty")
    return trace.iterates[int(rng.integers(len(trace.iterates)))]


def validate_config(problem: CompositionProblem, cfg: RunConfig) -> list[str]:
    """Reject invalid combinations; return notes about batch sizes that would
    be clamped to ``n``."""
    if cfg.subsolver == "adpg" and problem.regularizer is not None:
        raise InvalidConfiguration("ADPG cannot handle a regularizer; use the pd subsolver")
    if cfg.algorithm == "gn" and not problem.finite:
        raise UnsupportedOperation("GN needs a finite-sum problem")
    sched = cfg.schedule
    if cfg.algorithm == "sgn2" and sched.mode not in ("fixed", "sarah-theoretical"):
        raise InvalidConfiguration(f"schedule mode {sched.mode!r} does not apply to sgn2")
    if cfg.algorithm == "sgn" and sched.mode == "sarah-theoretical":
        raise InvalidConfiguration("the SARAH schedule applies to sgn2 only")
    if sched.mode == "theoretical-finitesum" and not problem.finite:
        raise InvalidConfiguration("the finite-sum schedule needs a finite-sum problem")
    if sched.mode == "sarah-theoretical" and sched.m is None and cfg.psi_gap is None:
        raise InvalidConfiguration("the SARAH schedule needs an epoch length or psi_gap")
    if not problem.finite and sched.mode == "fixed":
        for name in ("b", "b_hat") + (("b_snap", "b_hat_snap") if cfg.algorithm == "sgn2" else ()):
            if getattr(sched, name) is None:
                raise InvalidConfiguration(f"expectation mode needs an explicit {name}")
    notes = []
    if problem.finite and sched.mode == "fixed":
        for name in ("b", "b_hat", "b_snap", "b_hat_snap"):
            v = getattr(sched, name)
            if v is not None and v < 1:
                raise InvalidConfiguration(f"{name} must be >= 1")
            if v is not None and v > problem.n:
                notes.append(f"{name}={v} exceeds n={problem.n}; clamped")
    return notes


class _Runner:
    """Shared bookkeeping for the three drivers."""

    def __init__(self, problem: CompositionProblem, x0, cfg: RunConfig):
        for note in validate_config(problem, cfg):
            warnings.warn(note, RuntimeWarning, stacklevel=3)
        self.problem = problem
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.x = np.array(x0, dtype=float)
        if self.x.shape != (problem.p,):
            raise InvalidParameter(f"x0 must have shape ({problem.p},)")
        problem.counter.reset()
        self.t0 = time.perf_counter()
        self.u_prev = None
        self.last_step = None
        self.batch_sizes = []
        self.records = []
        self.iterates = []
        self._record()

    def _psi(self, x) -> float:
        if not (self.cfg.monitor and self.problem.finite):
            return math.nan
        return evaluate_objective(self.problem, x, count=False)

    def _record(self):
        c = self.problem.counter
        n = self.problem.n
        epochs = (c.f + c.j) / (2.0 * n) if n else math.nan
        wall = (time.perf_counter() - self.t0) * 1e3 if self.cfg.record_time else math.nan
        self.records.append(TraceRecord(len(self.iterates), epochs, c.f, c.j,
                                        self._psi(self.x), wall_ms=wall))
        self.iterates.append(self.x.copy())

    def step(self, est: Estimate):
        """Prox-linear step from the current iterate using ``est``."""
        cfg, problem = self.cfg, self.problem
        sub = ProxLinearSubproblem(est.f_tilde, est.j_tilde, cfg.M, problem.outer,
                                   problem.regularizer, self.x)
        sol = solve_proxlinear(sub, cfg.subsolver, cfg.tol, cfg.k_max, u0=self.u_prev)
        if not sol.converged and cfg.strict:
            raise SubsolverError(f"prox-linear subproblem did not converge at step {len(self.records) - 1}",
                                 sol.residual)
        self.u_prev = sol.u_star
        x_next = self.x + sol.d_star
        rec = self.records[-1]
        rec.gnorm_sq = cfg.M**2 * float(sol.d_star @ sol.d_star)
        rec.subsolver_iters = sol.iterations
        self.batch_sizes.append((est.b_used, est.bhat_used))
        self.last_step = StepInfo(len(self.records) - 1, self.x, est, sol, x_next)
        self.x = x_next
        self._record()

    def sizes(self, b, b_hat):
        n = self.problem.n
        return (n if b is None else b), (n if b_hat is None else b_hat)

    def draw(self, b, b_hat):
        n = self.problem.n
        return sample_batch(n, b, self.rng), sample_batch(n, b_hat, self.rng)

    def finish(self) -> RunTrace:
        trace = RunTrace(self.records, self.iterates, self.x.copy(),
                         last_step=self.last_step, batch_sizes=self.batch_sizes)
        trace.x_hat = select_output(trace, self.rng)
        return trace


def run_gn(problem: CompositionProblem, x0, cfg: RunConfig) -> RunTrace:
    """Exact prox-linear iteration: every step uses all ``n`` samples."""
    if not problem.finite:
        raise UnsupportedOperation("GN needs a finite-sum problem")
    run = _Runner(problem, x0, cfg)
    idx = problem.all_samples()
    for _ in range(cfg.iters):
        run.step(minibatch_estimate(problem, run.x, idx, idx))
    return run.finish()


def run_sgn(problem: CompositionProblem, x0, cfg: RunConfig) -> RunTrace:
    """Prox-linear steps on independent mini-batch estimates."""
    run = _Runner(problem, x0, cfg)
    sched, c, n = cfg.schedule, problem.constants, problem.n
    prev_x = None
    for t in range(cfg.iters):
        if sched.mode == "fixed":
            b, bh = run.sizes(sched.b, sched.b_hat)
        elif sched.mode == "theoretical-expectation":
            b, bh = schedule_minibatch_expectation(sched, c, cfg.M, n)
        else:
            s = None if prev_x is None else float(np.linalg.norm(run.x - prev_x))
            b, bh = schedule_minibatch_finitesum(sched, c, cfg.M, t, s, problem.p, problem.q, n)
        bf, bj = run.draw(b, bh)
        prev_x = run.x
        run.step(minibatch_estimate(problem, run.x, bf, bj))
    return run.finish()


def run_sgn2(problem: CompositionProblem, x0, cfg: RunConfig) -> RunTrace:
    """SARAH variant: each epoch takes one step from a snapshot estimate,
    then ``m`` steps from recursively updated estimates."""
    run = _Runner(problem, x0, cfg)
    sched, c, n = cfg.schedule, problem.constants, problem.n
    theoretical = sched.mode == "sarah-theoretical"
    if theoretical:
        gap = cfg.psi_gap if cfg.psi_gap is not None else 0.0
        m = schedule_sarah(sched, c, cfg.M, gap, 1, 0, n).m
    else:
        m = cfg.inner
    for s in range(1, cfg.iters + 1):
        if theoretical:
            sz = schedule_sarah(sched, c, cfg.M, gap, s, 0, n)
            b, bh = sz.b_s, sz.bhat_s
        else:
            b, bh = run.sizes(sched.b_snap, sched.b_hat_snap)
        bf, bj = run.draw(b, bh)
        est = minibatch_estimate(problem, run.x, bf, bj)
        run.step(est)
        for t in range(1, m + 1):
            if theoretical:
                sz = schedule_sarah(sched, c, cfg.M, gap, s, t, n)
                b, bh = sz.b_t, sz.bhat_t
            else:
                b, bh = run.sizes(sched.b, sched.b_hat)
            bf, bj = run.draw(b, bh)
            est = sarah_update(problem, est, est.x, run.x, bf, bj)
            run.step(est)
    return run.finish()


DRIVERS = {"gn": run_gn, "sgn": run_sgn, "sgn2": run_sgn2}


def run(problem: CompositionProblem, x0, cfg: RunConfig) -> RunTrace:
    return DRIVERS[cfg.algorithm](problem, x0, cfg)
