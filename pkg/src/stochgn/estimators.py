"""Mini-batch and SARAH estimators of ``F(x)`` and ``F'(x)``, and the batch
size schedules that go with them."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import CompositionProblem, DenseJacobian, JacobianOperator, ProblemConstants
from .errors import InvalidConfiguration, InvalidParameter, InvalidState

_SEED_HIGH = 2**63 - 1
_INT_CAP = 2**62


@dataclass(frozen=True)
class Estimate:
    """Estimates of ``F(x)`` and ``F'(x)`` at ``x`` with oracle bookkeeping.

    ``cumulative_*_calls`` mirror the problem counter right after the
    estimate was formed. ``f_exact``/``j_exact`` mark full-batch values that
    equal the exact quantities.
    """

    x: np.ndarray
    f_tilde: np.ndarray
    j_tilde: JacobianOperator
    b_used: int
    bhat_used: int
    cumulative_f_calls: int
    cumulative_j_calls: int
    f_exact: bool = False
    j_exact: bool = False

    @property
    def exact(self) -> bool:
        return self.f_exact and self.j_exact


def sample_batch(n: int | None, b: int, rng: np.random.Generator) -> np.ndarray:
    """Draw a mini-batch.

    Finite-sum (``n`` given): ``b`` distinct indices, uniformly without
    replacement, returned sorted. Expectation mode (``n is None``): ``b``
    fresh integer seeds.
    """
    if b < 1:
        raise InvalidParameter("batch size must be >= 1")
    if n is None:
        return np.sort(rng.integers(0, _SEED_HIGH, size=b))
    if b > n:
        warnings.warn(f"batch size {b} exceeds n={n}; clamped", RuntimeWarning, stacklevel=2)
        b = n
    return np.sort(rng.choice(n, size=b, replace=False))


def _is_full(problem: CompositionProblem, batch) -> bool:
    return problem.finite and len(batch) == problem.n


def minibatch_estimate(problem: CompositionProblem, x, batch_f, batch_j) -> Estimate:
    """Plain mini-batch averages of the sampled values and Jacobians."""
    if len(batch_f) == 0 or len(batch_j) == 0:
        raise InvalidParameter("mini-batches must be nonempty")
    x = np.asarray(x, dtype=float)
    f = problem.batch_mean_value(x, batch_f)
    J = problem.batch_jacobian(x, batch_j)
    return Estimate(
        x=x, f_tilde=f, j_tilde=J, b_used=len(batch_f), bhat_used=len(batch_j),
        cumulative_f_calls=problem.counter.f, cumulative_j_calls=problem.counter.j,
        f_exact=_is_full(problem, batch_f), j_exact=_is_full(problem, batch_j),
    )


def sarah_update(problem: CompositionProblem, prev: Estimate, x_prev, x_curr,
                 batch_f, batch_j) -> Estimate:
    """Recursive SARAH step from ``prev`` (formed at ``x_prev``) to ``x_curr``.

    Each batch member is evaluated at both points, so the counters grow by
    ``2|batch_f|`` and ``2|batch_j|``. The Jacobian estimate is dense. When a
    batch covers all samples and ``prev`` is already exact, the exact value
    is returned directly.
    """
    q, p = problem.q, problem.p
    x_prev = np.asarray(x_prev, dtype=float)
    x_curr = np.asarray(x_curr, dtype=float)
    if prev.f_tilde.shape != (q,) or prev.j_tilde.shape != (q, p):
        raise InvalidState("previous estimate does not match problem dimensions")
    if x_prev.shape != (p,) or x_curr.shape != (p,):
        raise InvalidState("iterate dimension mismatch")
    if len(batch_f) == 0 or len(batch_j) == 0:
        raise InvalidParameter("mini-batches must be nonempty")
    bf, bj = len(batch_f), len(batch_j)

    if np.array_equal(x_prev, x_curr):
        problem.counter.f += 2 * bf
        problem.counter.j += 2 * bj
        return Estimate(
            x=x_curr, f_tilde=prev.f_tilde, j_tilde=prev.j_tilde, b_used=bf, bhat_used=bj,
            cumulative_f_calls=problem.counter.f, cumulative_j_calls=problem.counter.j,
            f_exact=prev.f_exact, j_exact=prev.j_exact,
        )

    f_exact = prev.f_exact and _is_full(problem, batch_f)
    if f_exact:
        problem.counter.f += bf
        f = problem.batch_mean_value(x_curr, batch_f)
    else:
        diff = problem.batch_values(x_curr, batch_f) - problem.batch_values(x_prev, batch_f)
        f = prev.f_tilde + diff.mean(axis=0)

    j_exact = prev.j_exact and _is_full(problem, batch_j)
    if j_exact:
        problem.counter.j += bj
        J = problem.batch_jacobian(x_curr, batch_j)
    else:
        dj = (problem.batch_jacobian(x_curr, batch_j).todense()
              - problem.batch_jacobian(x_prev, batch_j).todense())
        J = DenseJacobian(prev.j_tilde.todense() + dj)

    return Estimate(
        x=x_curr, f_tilde=f, j_tilde=J, b_used=bf, bhat_used=bj,
        cumulative_f_calls=problem.counter.f, cumulative_j_calls=problem.counter.j,
        f_exact=f_exact, j_exact=j_exact,
    )


# --------------------------------------------------------------------------
# Batch-size schedules

SCHEDULE_MODES = ("fixed", "theoretical-expectation", "theoretical-finitesum", "sarah-theoretical")


@dataclass
class BatchSchedule:
    """Batch-size policy.

    ``fixed`` uses ``b``/``b_hat`` every step (``b_snap``/``b_hat_snap`` for
    SARAH snapshots; ``None`` means a full pass). The theoretical modes
    evaluate the closed-form sizes from the convergence analysis and are only
    practical for moderate ``eps``.
    """

    mode: str = "fixed"
    b: int | None = None
    b_hat: int | None = None
    b_snap: int | None = None
    b_hat_snap: int | None = None
    eps: float = 1.0
    delta: float = 0.1
    beta_d: float = 1.0
    C_f: float = 1.0
    C_d: float = 1.0
    gamma1: float = 1.0
    gamma2: float = 1.0
    delta_d: float = 1.0
    C: float = 1.0
    m: int | None = None

    def __post_init__(self):
        if self.mode not in SCHEDULE_MODES:
            raise InvalidParameter(f"unknown schedule mode {self.mode!r}")
        if not self.eps > 0:
            raise InvalidParameter("eps must be positive")


def _floor_clamp(v: float, n: int | None) -> int:
    if math.isnan(v):
        raise InvalidConfiguration("batch size formula produced NaN")
    cap = n if n is not None else _INT_CAP
    # absorb rounding so that formulas with exact integer values floor to them
    v = min(v * (1.0 + 1e-12), _INT_CAP)
    return int(max(1, min(math.floor(v), cap)))


def gap_constant(constants: ProblemConstants, M: float, beta_d: float) -> float:
    """``C_g = 2M - M_phi (L_F + beta_d)``."""
    return 2.0 * M - constants.M_phi * (constants.L_F + beta_d)


def adaptive_constant(constants: ProblemConstants, M: float, sched: BatchSchedule) -> float:
    """``C_a = 2M - M_phi (L_F + beta_d + 2 sqrt(C_f) + C_d / (2 beta_d))``."""
    return 2.0 * M - constants.M_phi * (
        constants.L_F + sched.beta_d + 2.0 * math.sqrt(sched.C_f) + sched.C_d / (2.0 * sched.beta_d)
    )


def schedule_minibatch_expectation(sched: BatchSchedule, constants: ProblemConstants,
                                   M: float, n: int | None = None) -> tuple[int, int]:
    Cg = gap_constant(constants, M, sched.beta_d)
    if Cg <= 0:
        raise InvalidConfiguration(f"C_g = {Cg:.4g} <= 0; increase M")
    Mphi, eps = constants.M_phi, sched.eps
    b = 256.0 * Mphi**2 * M**4 * constants.sigma_F**2 / (Cg**2 * eps**4)
    bh = 2.0 * Mphi * M**2 * constants.sigma_D**2 / (sched.beta_d * Cg * eps**2)
    return _floor_clamp(b, n), _floor_clamp(bh, n)


def schedule_minibatch_finitesum(sched: BatchSchedule, constants: ProblemConstants, M: float,
                                 t: int, step_norm: float | None, p: float, q: float,
                                 n: int) -> tuple[int, int]:
    """Adaptive high-probability sizes; ``t = 0`` uses the initial formulas,
    later steps scale with ``||x_t - x_{t-1}||``."""
    if t < 0:
        raise InvalidParameter("t must be nonnegative")
    log_f = math.log((p + 1) / sched.delta)
    log_j = math.log((p + q) / sched.delta)
    sF, sD = constants.sigma_F, constants.sigma_D
    if t == 0:
        Ca = adaptive_constant(constants, M, sched)
        if Ca <= 0:
            raise InvalidConfiguration(f"C_a = {Ca:.4g} <= 0; increase M")
        Mphi, eps, bd = constants.M_phi, sched.eps, sched.beta_d
        b = (32.0 * Mphi * M**2 * sF * (48.0 * sF * Mphi * M**2 + Ca * eps**2)
             / (3.0 * Ca**2 * eps**4) * log_f)
        r = M * math.sqrt(2.0 * Mphi)
        bh = 4.0 * r * sD * (3.0 * r * sD + math.sqrt(bd * Ca) * eps) / (bd * Ca * eps**2) * log_j
        return _floor_clamp(b, n), _floor_clamp(bh, n)
    if step_norm is None:
        raise InvalidParameter("step_norm is required for t >= 1")
    if step_norm == 0:
        return n, n
    s = step_norm
    Cf, Cd = sched.C_f, sched.C_d
    b = (6.0 * sF**2 + 2.0 * sF * math.sqrt(Cf) * s**2) / (3.0 * Cf**2 * s**4) * log_f
    bh = (6.0 * sD**2 + 2.0 * sD * math.sqrt(Cd) * s) / (3.0 * Cd * s**2) * log_j
    return _floor_clamp(b, n), _floor_clamp(bh, n)


class SarahSizes(NamedTuple):
    m: int
    b_s: int
    bhat_s: int
    b_t: int
    bhat_t: int


def sarah_theta(constants: ProblemConstants, M: float, sched: BatchSchedule) -> float:
    """``theta_F = 2M - M_phi(L_F + delta_d) - gamma1 M_F^2 - gamma2 L_F^2``."""
    MF = constants.M_F or 0.0
    return (2.0 * M - constants.M_phi * (constants.L_F + sched.delta_d)
            - sched.gamma1 * MF**2 - sched.gamma2 * constants.L_F**2)


def schedule_sarah(sched: BatchSchedule, constants: ProblemConstants, M: float,
                   psi0_gap: float, s: int, t: int, n: int | None = None) -> SarahSizes:
    """Epoch length and snapshot/inner batch sizes for the SARAH variant.

    ``sched.m`` overrides the epoch length computed from ``psi0_gap``. Inner
    sizes shrink linearly in ``t`` within an epoch; ``s`` does not enter the
    formulas.
    """
    theta = sarah_theta(constants, M, sched)
    if theta <= 0:
        raise InvalidConfiguration(f"theta_F = {theta:.4g} <= 0; increase M")
    eps, C, Mphi = sched.eps, sched.C, constants.M_phi
    if sched.m is not None:
        m = max(1, int(sched.m))
    else:
        m = _floor_clamp(8.0 * psi0_gap / (theta * C * eps), None)
    if not 0 <= t <= m:
        raise InvalidParameter(f"inner index t={t} outside [0, {m}]")
    b_s = 2.0 * C * Mphi**2 * constants.sigma_F**2 / (theta**2 * eps**3)
    bh_s = 4.0 * C * Mphi * constants.sigma_D**2 / (theta * sched.delta_d * eps)
    b_t = 8.0 * Mphi**2 * (m + 1 - t) / (theta * sched.gamma1 * eps**2)
    bh_t = Mphi * (m + 1 - t) / (sched.gamma2 * sched.delta_d)
    return SarahSizes(m, _floor_clamp(b_s, n), _floor_clamp(bh_s, n),
                      _floor_clamp(b_t, n), _floor_clamp(bh_t, n))
