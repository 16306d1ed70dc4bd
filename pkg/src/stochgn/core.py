"""Problem representation and the stationarity / descent diagnostics.

A :class:`CompositionProblem` describes ``min_x phi(F(x)) + g(x)`` where
``F(x)`` is the average (or expectation) of per-sample maps
``F(x, xi) in R^q``. Per-sample oracles are pure; the only mutable state on a
problem is its :class:`OracleCounter`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidParameter, UnsupportedOperation
from .prox import OUTER_KINDS, project_box, project_simplex

# Relative slack used when deciding whether a dual vector sits on the
# boundary of dom(phi^*).
_BOUNDARY_TOL = 1e-9


@dataclass(frozen=True)
class OuterFunction:
    """Convex outer function ``phi = rho * base``.

    ``kind`` is one of ``l2``, ``l1``, ``huber`` (per-coordinate Huber with
    threshold ``delta``, summed), ``hinge`` (``sum [u_i]_+``) or ``quadratic``
    (``||u||^2 / 2``).
    """

    kind: str = "l2"
    rho: float = 1.0
    delta: float = 1.0

    def __post_init__(self):
        if self.kind not in OUTER_KINDS:
            raise InvalidParameter(f"unknown outer kind {self.kind!r}")
        if not self.rho > 0:
            raise InvalidParameter("rho must be positive")
        if self.kind == "huber" and not self.delta > 0:
            raise InvalidParameter("huber delta must be positive")

    def value(self, u) -> float:
        u = np.asarray(u, dtype=float)
        if self.kind == "l2":
            base = np.linalg.norm(u)
        elif self.kind == "l1":
            base = np.abs(u).sum()
        elif self.kind == "hinge":
            base = np.maximum(u, 0.0).sum()
        elif self.kind == "huber":
            a = np.abs(u)
            d = self.delta
            base = np.where(a <= d, 0.5 * u * u, d * (a - 0.5 * d)).sum()
        else:
            base = 0.5 * float(u @ u)
        return self.rho * float(base)

    def lipschitz(self, q: int) -> float:
        """Lipschitz constant w.r.t. the Euclidean norm on ``R^q``."""
        if self.kind == "l2":
            return self.rho
        if self.kind in ("l1", "hinge"):
            return self.rho * math.sqrt(q)
        if self.kind == "huber":
            return self.rho * self.delta * math.sqrt(q)
        return math.inf

    def subgradient(self, u) -> np.ndarray:
        """One element of ``d phi(u)`` (the minimal-norm one at kinks)."""
        u = np.asarray(u, dtype=float)
        if self.kind == "l2":
            nu = np.linalg.norm(u)
            return np.zeros_like(u) if nu == 0 else self.rho * u / nu
        if self.kind == "l1":
            return self.rho * np.sign(u)
        if self.kind == "hinge":
            return self.rho * (u > 0).astype(float)
        if self.kind == "huber":
            return self.rho * np.clip(u, -self.delta, self.delta)
        return self.rho * u

    def conj_value(self, y) -> float:
        """``phi^*(y)``; ``inf`` outside the domain."""
        y = np.asarray(y, dtype=float)
        if not self.in_conj_domain(y):
            return math.inf
        if self.kind == "huber":
            return float(y @ y) / (2.0 * self.rho)
        if self.kind == "quadratic":
            return float(y @ y) / (2.0 * self.rho)
        return 0.0

    def in_conj_domain(self, y, tol: float = _BOUNDARY_TOL) -> bool:
        y = np.asarray(y, dtype=float)
        r = self.rho * (1.0 + tol)
        if self.kind == "l2":
            return bool(np.linalg.norm(y) <= r)
        if self.kind == "l1":
            return bool(np.all(np.abs(y) <= r))
        if self.kind == "hinge":
            return bool(np.all(y >= -tol * self.rho) and np.all(y <= r))
        if self.kind == "huber":
            return bool(np.all(np.abs(y) <= r * self.delta))
        return True

    def conj_subdiff_dist(self, w, y) -> float:
        """``dist(w, d phi^*(y))``, i.e. ``dist(0, -w + d phi^*(y))``.

        Returns ``inf`` when ``y`` lies outside ``dom phi^*``.
        """
        w = np.asarray(w, dtype=float)
        y = np.asarray(y, dtype=float)
        if not self.in_conj_domain(y):
            return math.inf
        rho = self.rho
        lo_edge = rho * (1.0 - _BOUNDARY_TOL)
        if self.kind == "l2":
            r = np.linalg.norm(y)
            if r < lo_edge:
                return float(np.linalg.norm(w))
            t = max(0.0, float(w @ y)) / (r * r)
            return float(np.linalg.norm(w - t * y))
        if self.kind == "l1":
            a = np.abs(y)
            d = np.where(a < lo_edge, np.abs(w),
                         np.where(y > 0, np.maximum(-w, 0.0), np.maximum(w, 0.0)))
            return float(np.linalg.norm(d))
        if self.kind == "hinge":
            at_zero = y <= _BOUNDARY_TOL * rho
            at_top = y >= lo_edge
            d = np.where(at_zero, np.maximum(w, 0.0),
                         np.where(at_top, np.maximum(-w, 0.0), np.abs(w)))
            return float(np.linalg.norm(d))
        if self.kind == "huber":
            lim = lo_edge * self.delta
            s = y / rho
            d = np.where(np.abs(y) < lim, np.abs(w - s),
                         np.where(y > 0, np.maximum(self.delta - w, 0.0),
                                  np.maximum(w + self.delta, 0.0)))
            return float(np.linalg.norm(d))
        return float(np.linalg.norm(w - y / rho))


# --------------------------------------------------------------------------
# Regularizers g(x)


class Regularizer:
    """Convex regularizer with a scaled prox. ``smooth`` regularizers expose
    ``grad`` and ``lipschitz`` instead and are linearized by the subsolver."""

    smooth = False

    def value(self, x) -> float:
        raise NotImplementedError

    def prox(self, v, lam: float) -> np.ndarray:
        raise NotImplementedError


class SimplexBoxRegularizer(Regularizer):
    """``g(z, tau) = -c^T z + indicator(z in simplex, tau in [lo, hi])``.

    The last coordinate of ``x`` is ``tau``.
    """

    def __init__(self, c, tau_lo: float = 0.0, tau_hi: float = 1.0, tol: float = 1e-9):
        if tau_lo > tau_hi:
            raise InvalidParameter("tau bounds must satisfy lo <= hi")
        self.c = np.asarray(c, dtype=float)
        self.tau_lo = float(tau_lo)
        self.tau_hi = float(tau_hi)
        self.tol = tol

    def feasible(self, x) -> bool:
        z, tau = x[:-1], x[-1]
        return bool(
            np.all(z >= -self.tol)
            and abs(z.sum() - 1.0) <= self.tol * max(1, z.size)
            and self.tau_lo - self.tol <= tau <= self.tau_hi + self.tol
        )

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if not self.feasible(x):
            return math.inf
        return -float(self.c @ x[:-1])

    def prox(self, v, lam: float) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        out = np.empty_like(v)
        out[:-1] = project_simplex(v[:-1] + lam * self.c)
        out[-1] = project_box(v[-1], self.tau_lo, self.tau_hi)
        return out


class SmoothRegularizer(Regularizer):
    """Differentiable ``g`` with ``lipschitz``-continuous gradient; the
    subsolver replaces it by its quadratic upper model at the center."""

    smooth = True

    def __init__(self, fun: Callable, grad: Callable, lipschitz: float):
        self._fun = fun
        self.grad = grad
        self.lipschitz = float(lipschitz)

    def value(self, x) -> float:
        return float(self._fun(np.asarray(x, dtype=float)))


# --------------------------------------------------------------------------
# Jacobian operators


class JacobianOperator:
    """A ``q x p`` linear map with forward/adjoint products."""

    shape: tuple[int, int]

    def matvec(self, d) -> np.ndarray:
        raise NotImplementedError

    def rmatvec(self, u) -> np.ndarray:
        raise NotImplementedError

    def transpose_dense(self) -> np.ndarray:
        """Dense ``J^T`` (``p x q``) built from ``q`` adjoint products."""
        q = self.shape[0]
        eye = np.eye(q)
        return np.column_stack([self.rmatvec(eye[i]) for i in range(q)])

    def todense(self) -> np.ndarray:
        return np.ascontiguousarray(self.transpose_dense().T)

    def gram(self) -> np.ndarray:
        """``J J^T`` (``q x q``)."""
        jt = self.transpose_dense()
        return jt.T @ jt


class DenseJacobian(JacobianOperator):
    def __init__(self, matrix):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        self.shape = self.matrix.shape

    def matvec(self, d):
        return self.matrix @ d

    def rmatvec(self, u):
        return self.matrix.T @ u

    def transpose_dense(self):
        return self.matrix.T

    def todense(self):
        return self.matrix

    def gram(self):
        return self.matrix @ self.matrix.T


class RowWeightedJacobian(JacobianOperator):
    """``scale * W^T A`` for a ``b x q`` weight block ``W`` and ``b x p``
    row block ``A`` (dense or scipy sparse). This is the batch-averaged
    Jacobian of maps whose per-sample Jacobian is ``w_i a_i^T``."""

    def __init__(self, weights, rows, scale: float):
        self.weights = np.asarray(weights, dtype=float)
        self.rows = rows
        self.scale = float(scale)
        self.shape = (self.weights.shape[1], rows.shape[1])

    def matvec(self, d):
        return self.scale * (self.weights.T @ (self.rows @ d))

    def rmatvec(self, u):
        return self.scale * np.asarray(self.rows.T @ (self.weights @ u)).ravel()

    def transpose_dense(self):
        jt = self.rows.T @ self.weights
        return self.scale * np.asarray(jt)


def operator_norm(J: JacobianOperator, *, seed: int = 0, rtol: float = 1e-6,
                  max_iter: int = 1000, gram_max: int = 512) -> float:
    """Spectral norm ``||J||``.

    Small ``q``: exact, from the eigenvalues of ``J J^T``. Otherwise power
    iteration on ``J^T J`` from a fixed seed.
    """
    q, p = J.shape
    if min(q, p) <= gram_max:
        jt = J.transpose_dense()
        G = jt.T @ jt if q <= p else jt @ jt.T
        lam = float(np.linalg.eigvalsh(G)[-1]) if G.size else 0.0
        return math.sqrt(max(lam, 0.0))
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(p)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = J.rmatvec(J.matvec(v))
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        if abs(nw - lam) <= rtol * nw:
            lam = nw
            break
        lam = nw
    return math.sqrt(lam)


# --------------------------------------------------------------------------
# Problems


@dataclass
class OracleCounter:
    """One unit per per-sample value call (``f``) and Jacobian call (``j``)."""

    f: int = 0
    j: int = 0

    def reset(self) -> None:
        self.f = 0
        self.j = 0


@dataclass
class ProblemConstants:
    """Smoothness and variance constants. ``certified`` is False when any of
    them was estimated by sampling rather than bounded analytically."""

    M_phi: float
    L_F: float = 0.0
    sigma_F: float = 0.0
    sigma_D: float = 0.0
    M_F: float | None = None
    certified: bool = True


class CompositionProblem:
    """Base class for ``phi(F(x)) + g(x)`` with ``F = mean_i F(., xi_i)``.

    ``n`` is the number of samples; ``None`` selects expectation mode where
    sample identifiers are integer seeds. Subclasses implement
    ``_values(x, samples) -> (b, q)`` and
    ``_jacobian(x, samples) -> JacobianOperator`` (batch average).
    """

    def __init__(self, p: int, q: int, n: int | None, outer: OuterFunction,
                 regularizer: Regularizer | None = None,
                 constants: ProblemConstants | None = None):
        if p < 1 or q < 1:
            raise InvalidParameter("dimensions must be positive")
        if n is not None and n < 1:
            raise InvalidParameter("finite-sum problems need n >= 1")
        self.p = p
        self.q = q
        self.n = n
        self.outer = outer
        self.regularizer = regularizer
        self.constants = constants or ProblemConstants(M_phi=outer.lipschitz(q))
        self.counter = OracleCounter()

    @property
    def finite(self) -> bool:
        return self.n is not None

    # subclass hooks
    def _values(self, x, samples) -> np.ndarray:
        raise NotImplementedError

    def _jacobian(self, x, samples) -> JacobianOperator:
        raise NotImplementedError

    # public oracles
    def sample_value(self, x, sample) -> np.ndarray:
        self.counter.f += 1
        return self._values(np.asarray(x, dtype=float), np.array([sample]))[0]

    def sample_jacobian(self, x, sample) -> JacobianOperator:
        self.counter.j += 1
        return self._jacobian(np.asarray(x, dtype=float), np.array([sample]))

    def batch_values(self, x, samples, *, count: bool = True) -> np.ndarray:
        samples = np.asarray(samples)
        if count:
            self.counter.f += samples.size
        return self._values(np.asarray(x, dtype=float), samples)

    def batch_mean_value(self, x, samples, *, count: bool = True) -> np.ndarray:
        return self.batch_values(x, samples, count=count).mean(axis=0)

    def batch_jacobian(self, x, samples, *, count: bool = True) -> JacobianOperator:
        samples = np.asarray(samples)
        if count:
            self.counter.j += samples.size
        return self._jacobian(np.asarray(x, dtype=float), samples)

    def all_samples(self) -> np.ndarray:
        if not self.finite:
            raise UnsupportedOperation("expectation-mode problem has no finite sample set")
        return np.arange(self.n)

    def full_value(self, x, *, count: bool = True) -> np.ndarray:
        """Exact ``F(x)`` (finite-sum only)."""
        return self.batch_mean_value(x, self.all_samples(), count=count)

    def full_jacobian(self, x, *, count: bool = True) -> JacobianOperator:
        return self.batch_jacobian(x, self.all_samples(), count=count)


class CallableProblem(CompositionProblem):
    """Problem assembled from plain per-sample callables.

    ``value_fn(x, sample) -> (q,)`` and ``jac_fn(x, sample) -> (q, p)``.
    Handy for toys and tests; the benchmark families vectorize instead.
    """

    def __init__(self, p, q, n, outer, value_fn, jac_fn, regularizer=None, constants=None):
        super().__init__(p, q, n, outer, regularizer, constants)
        self.value_fn = value_fn
        self.jac_fn = jac_fn

    def _values(self, x, samples):
        return np.array([np.atleast_1d(self.value_fn(x, s)) for s in samples], dtype=float)

    def _jacobian(self, x, samples):
        mats = [np.atleast_2d(self.jac_fn(x, s)) for s in samples]
        return DenseJacobian(np.mean(mats, axis=0))


# --------------------------------------------------------------------------
# Objective and diagnostics


def evaluate_objective(problem: CompositionProblem, x, exact: bool = True, *,
                       samples: Sequence | None = None, count: bool = True) -> float:
    """``phi(F(x)) + g(x)``.

    With ``exact`` the full average over all ``n`` samples is used; otherwise
    ``F`` is replaced by the mean over ``samples``.
    """
    x = np.asarray(x, dtype=float)
    if exact:
        if not problem.finite:
            raise UnsupportedOperation("exact objective needs a finite-sum problem")
        Fx = problem.full_value(x, count=count)
    else:
        if samples is None:
            raise InvalidParameter("inexact evaluation needs a sample batch")
        Fx = problem.batch_mean_value(x, samples, count=count)
    val = problem.outer.value(Fx)
    if problem.regularizer is not None:
        val += problem.regularizer.value(x)
    return val


def prox_gradient_mapping(x, t, M: float) -> np.ndarray:
    """``M (x - t)`` where ``t`` is the prox-linear point computed at ``x``."""
    if not M > 0:
        raise InvalidParameter("M must be positive")
    return M * (np.asarray(x, dtype=float) - np.asarray(t, dtype=float))


def stationarity_measure(problem: CompositionProblem, x, y) -> float:
    """``||F'(x)^T y|| + dist(0, -F(x) + d phi^*(y))`` with exact oracles.

    ``inf`` when ``y`` lies outside ``dom phi^*``. Oracle calls made here are
    not charged to the problem counter.
    """
    if problem.regularizer is not None:
        raise UnsupportedOperation("stationarity measure is defined for phi(F(x)) only")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dist = problem.outer.conj_subdiff_dist(problem.full_value(x, count=False), y)
    if math.isinf(dist):
        return math.inf
    J = problem.full_jacobian(x, count=False)
    return float(np.linalg.norm(J.rmatvec(y))) + dist


def stationarity_bound(gnorm: float, f_err: float, j_err: float, M: float,
                       M_phi: float, L_F: float) -> float:
    """Right-hand side bounding the stationarity measure at the prox-linear
    point by the prox-gradient norm and the oracle errors."""
    if not M > 0:
        raise InvalidParameter("M must be positive")
    if min(gnorm, f_err, j_err, M_phi, L_F) < 0:
        raise InvalidParameter("norms and constants must be nonnegative")
    lin = gnorm if gnorm == 0 else (1.0 + M_phi * L_F / M) * gnorm
    return lin + (1.0 + L_F) / (2.0 * M * M) * gnorm**2 + f_err + 0.5 * j_err**2


@dataclass
class StationarityReport:
    gnorm: float
    measure: float
    bound: float
    f_err: float
    j_err: float
    in_domain: bool = True

    @property
    def holds(self) -> bool:
        return self.measure <= self.bound


def descent_certificate(problem: CompositionProblem, x, t, f_err: float, j_err: float,
                        M: float, beta_d: float = 1.0) -> float:
    """Signed slack of the one-step descent inequality.

    ``Psi(x) + 2 M_phi f_err + M_phi/(2 beta_d) j_err^2
    - (2M - M_phi L_F - beta_d M_phi)/2 ||t - x||^2 - Psi(t)``. A nonnegative
    value certifies the inequality at this step.
    """
    if not beta_d > 0:
        raise InvalidParameter("beta_d must be positive")
    c = problem.constants
    coef = 2.0 * M - c.M_phi * c.L_F - beta_d * c.M_phi
    if coef <= 0:
        warnings.warn("descent coefficient 2M - M_phi(L_F + beta_d) <= 0; bound is vacuous",
                      RuntimeWarning, stacklevel=2)
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    slack = evaluate_objective(problem, x, count=False) - evaluate_objective(problem, t, count=False)
    if f_err:
        slack += 2.0 * c.M_phi * f_err
    if j_err:
        slack += c.M_phi / (2.0 * beta_d) * j_err**2
    step_sq = float((t - x) @ (t - x))
    if step_sq:
        slack -= 0.5 * coef * step_sq
    return slack


def estimator_errors(problem: CompositionProblem, x, f_tilde, j_tilde: JacobianOperator):
    """Realized ``||F~ - F(x)||`` and spectral ``||J~ - F'(x)||`` (not charged)."""
    Fx = problem.full_value(x, count=False)
    Jx = problem.full_jacobian(x, count=False)
    diff = DenseJacobian(j_tilde.todense() - Jx.todense())
    return float(np.linalg.norm(np.asarray(f_tilde) - Fx)), operator_norm(diff)


__all__ = [
    "OuterFunction", "Regularizer", "SimplexBoxRegularizer", "SmoothRegularizer",
    "JacobianOperator", "DenseJacobian", "RowWeightedJacobian", "operator_norm",
    "OracleCounter", "ProblemConstants", "CompositionProblem", "CallableProblem",
    "evaluate_objective", "prox_gradient_mapping", "stationarity_measure",
    "stationarity_bound", "StationarityReport", "descent_certificate", "estimator_errors",
]
