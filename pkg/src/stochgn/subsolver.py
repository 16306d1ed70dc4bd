"""Solvers for the prox-linear subproblem

    min_d  phi(F~ + J~ d) + g(x_t + d) + (M/2) ||d||^2.

Two methods are provided. :func:`solve_proxlinear_adpg` runs accelerated
proximal gradient on the dual ``min_u (1/(2M))||J~^T u||^2 - <F~, u> +
phi^*(u)`` and recovers ``d = -J~^T u / M``; it handles ``g = 0`` only.
:func:`solve_proxlinear_pd` runs the accelerated primal-dual scheme for a
strongly convex primal and also accepts a proxable or smooth ``g``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DenseJacobian, JacobianOperator, OuterFunction, Regularizer
from .errors import InvalidParameter
from .prox import (
    OUTER_KINDS,
    project_box,
    project_simplex,
    prox_outer,
    prox_outer_conjugate,
)

DEFAULT_K_MAX = 10_000

# Primal-dual restart: reset step sizes once the residual fell by this factor
# since the last restart, or after this many iterations.
_PD_RESTART_DECAY = 0.2
_PD_RESTART_WINDOW = 100


@dataclass
class ProxLinearSubproblem:
    """Data of one prox-linear step around the center ``x_t``."""

    f_tilde: np.ndarray
    j_tilde: JacobianOperator
    M: float
    outer: OuterFunction
    regularizer: Regularizer | None = None
    center: np.ndarray | None = None

    def __post_init__(self):
        if not self.M > 0:
            raise InvalidParameter("M must be positive")
        self.f_tilde = np.atleast_1d(np.asarray(self.f_tilde, dtype=float))
        if not isinstance(self.j_tilde, JacobianOperator):
            self.j_tilde = DenseJacobian(self.j_tilde)
        q, p = self.j_tilde.shape
        if self.f_tilde.shape != (q,):
            raise InvalidParameter(f"f_tilde has shape {self.f_tilde.shape}, expected ({q},)")
        if self.regularizer is not None:
            if self.center is None:
                raise InvalidParameter("a regularized subproblem needs its center x_t")
            self.center = np.asarray(self.center, dtype=float)
            if self.center.shape != (p,):
                raise InvalidParameter("center dimension does not match the Jacobian")

    @property
    def shape(self) -> tuple[int, int]:
        return self.j_tilde.shape

    def default_tol(self) -> float:
        return 1e-8 * max(1.0, float(np.linalg.norm(self.f_tilde)))

    def objective(self, d) -> float:
        """Primal model value at step ``d``."""
        d = np.asarray(d, dtype=float)
        val = self.outer.value(self.f_tilde + self.j_tilde.matvec(d)) + 0.5 * self.M * float(d @ d)
        g = self.regularizer
        if g is not None:
            val += g.value(self.center + d)
        return val


@dataclass
class ProxLinearSolution:
    d_star: np.ndarray
    u_star: np.ndarray
    residual: float
    iterations: int
    converged: bool


def _prox_reg_step(sub: ProxLinearSubproblem, w, lam: float) -> np.ndarray:
    """``prox_{lam g(x_t + .)}(w)`` expressed as a step from ``x_t``."""
    return sub.regularizer.prox(sub.center + w, lam) - sub.center


def _residual_dense(sub: ProxLinearSubproblem, Jd: np.ndarray, d, u) -> float:
    jtu = Jd.T @ u
    g = sub.regularizer
    M = sub.M
    if g is None:
        r1 = np.linalg.norm(M * d + jtu)
    elif g.smooth:
        grad = g.grad(sub.center)
        r1 = np.linalg.norm((M + g.lipschitz) * d + jtu + grad)
    else:
        r1 = np.linalg.norm(d - _prox_reg_step(sub, d - jtu - M * d, 1.0))
    w = sub.f_tilde + Jd @ d
    r2 = np.linalg.norm(w - prox_outer(sub.outer, w + u, 1.0))
    return float(r1 + r2)


def subproblem_residual(sub: ProxLinearSubproblem, d, u) -> float:
    """Primal-dual fixed-point gap; zero exactly at a saddle point.

    ``||M d + J~^T u|| + ||w - prox_phi(w + u)||`` with ``w = F~ + J~ d``. With
    a proxable ``g`` the first term becomes
    ``||d - (prox_g(x_t + d - J~^T u - M d) - x_t)||``; with a smooth ``g`` the
    gradient of its quadratic model is added inside the norm.
    """
    d = np.asarray(d, dtype=float)
    u = np.asarray(u, dtype=float)
    return _residual_dense(sub, sub.j_tilde.todense(), d, u)


def dual_objective(sub: ProxLinearSubproblem, u) -> float:
    """``(1/(2M))||J~^T u||^2 - <F~, u> + phi^*(u)`` (``inf`` off the domain)."""
    u = np.asarray(u, dtype=float)
    v = sub.j_tilde.rmatvec(u)
    return 0.5 / sub.M * float(v @ v) - float(sub.f_tilde @ u) + sub.outer.conj_value(u)


def _check_solver_args(tol, k_max):
    if tol is not None and not tol > 0:
        raise InvalidParameter("tol must be positive")
    if k_max < 1:
        raise InvalidParameter("k_max must be >= 1")


def solve_proxlinear_adpg(sub: ProxLinearSubproblem, tol: float | None = None,
                          k_max: int = DEFAULT_K_MAX, u0=None) -> ProxLinearSolution:
    """Accelerated dual proximal gradient.

    The dual smooth part has gradient ``(1/M) J~ J~^T u - F~`` and Lipschitz
    constant ``L = ||J~ J~^T|| / M``; everything runs on the ``q x q`` Gram
    matrix. Momentum is reset whenever the step direction disagrees with the
    gradient mapping (adaptive restart). Returns the iterate with the
    smallest residual if ``k_max`` is reached.
    """
    if sub.regularizer is not None:
        raise InvalidParameter("ADPG handles unregularized subproblems only; use the primal-dual solver")
    _check_solver_args(tol, k_max)
    tol = sub.default_tol() if tol is None else tol
    J = sub.j_tilde.todense()
    q = J.shape[0]
    M, F, phi = sub.M, sub.f_tilde, sub.outer
    G = J @ J.T
    lam_max = float(np.linalg.eigvalsh(G)[-1]) if q else 0.0
    L = lam_max / M if lam_max > 0 else 1.0
    step = 1.0 / L

    def resid_q(u):
        # d = -J^T u / M makes the stationarity term vanish identically
        w = F - (G @ u) / M
        return float(np.linalg.norm(w - prox_outer(phi, w + u, 1.0)))

    u = np.zeros(q) if u0 is None else prox_outer_conjugate(phi, np.asarray(u0, dtype=float), 1.0)
    u_hat = u.copy()
    tau = 1.0
    best_u, best_r = u, resid_q(u)
    k = 0
    while best_r > tol and k < k_max:
        grad = (G @ u_hat) / M - F
        u_new = prox_outer_conjugate(phi, u_hat - step * grad, step)
        k += 1
        r = resid_q(u_new)
        if r < best_r:
            best_u, best_r = u_new, r
        if float((u_hat - u_new) @ (u_new - u)) > 0.0:
            tau = 1.0
            u_hat = u_new.copy()
        else:
            tau_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * tau * tau))
            u_hat = u_new + ((tau - 1.0) / tau_new) * (u_new - u)
            tau = tau_new
        u = u_new
    d = -(J.T @ best_u) / M
    res = _residual_dense(sub, J, d, best_u)
    return ProxLinearSolution(d, best_u, res, k, res <= tol)


def cp_theta(M: float, tau: float) -> float:
    """Extrapolation factor ``1 / sqrt(1 + 2 M tau)`` of the accelerated scheme."""
    return 1.0 / math.sqrt(1.0 + 2.0 * M * tau)


def solve_proxlinear_pd(sub: ProxLinearSubproblem, tol: float | None = None,
                        k_max: int = DEFAULT_K_MAX, u0=None, d0=None) -> ProxLinearSolution:
    """Accelerated primal-dual iteration for the strongly convex primal.

    Splits the model as ``phi_hat(J~ d) + psi_hat(d)`` with
    ``phi_hat(v) = phi(F~ + v)`` and ``psi_hat(d) = g(x_t + d) + (M/2)||d||^2``
    (a smooth ``g`` is replaced by its quadratic upper model). Step sizes
    start at ``1/||J~||`` and follow ``theta = 1/sqrt(1 + 2 mu tau)`` where
    ``mu`` is the strong convexity of ``psi_hat``. The schedule is restarted
    from ``1/||J~||`` whenever the residual has dropped by a fixed factor or a
    fixed window has elapsed, which turns the sublinear rate into fast local
    convergence on the polyhedral kinds.
    """
    _check_solver_args(tol, k_max)
    tol = sub.default_tol() if tol is None else tol
    J = sub.j_tilde.todense()
    q, p = J.shape
    M, F, phi, g = sub.M, sub.f_tilde, sub.outer, sub.regularizer

    if g is not None and g.smooth:
        grad_g = g.grad(sub.center)
        mu = M + g.lipschitz

        def prox_psi(v, t):
            return (v - t * grad_g) / (1.0 + mu * t)
    elif g is not None:
        mu = M

        def prox_psi(v, t):
            return _prox_reg_step(sub, v / (1.0 + M * t), t / (1.0 + M * t))
    else:
        mu = M

        def prox_psi(v, t):
            return v / (1.0 + M * t)

    nrm = float(np.linalg.norm(J, 2)) if J.size else 0.0
    t0 = 1.0 / nrm if nrm > 0 else 1.0
    tau = sigma = t0

    u = np.zeros(q) if u0 is None else np.asarray(u0, dtype=float).copy()
    if d0 is not None:
        d = np.asarray(d0, dtype=float).copy()
    elif u0 is not None:
        # primal best response to the warm-start dual
        if g is None:
            d = -(J.T @ u) / M
        elif g.smooth:
            d = -(J.T @ u + grad_g) / mu
        else:
            d = _prox_reg_step(sub, -(J.T @ u) / M, 1.0 / M)
    else:
        d = np.zeros(p)
    if g is not None and not g.smooth:
        d = _prox_reg_step(sub, d, 1.0)
    d_bar = d.copy()
    best = (d, u, _residual_dense(sub, J, d, u))
    r_restart, k_restart = best[2], 0
    k = 0
    while best[2] > tol and k < k_max:
        u = prox_outer_conjugate(phi, u + sigma * (J @ d_bar + F), sigma)
        d_new = prox_psi(d - tau * (J.T @ u), tau)
        theta = cp_theta(mu, tau)
        tau *= theta
        sigma /= theta
        d_bar = d_new + theta * (d_new - d)
        d = d_new
        k += 1
        r = _residual_dense(sub, J, d, u)
        if r < best[2]:
            best = (d, u, r)
        if r <= _PD_RESTART_DECAY * r_restart or k - k_restart >= _PD_RESTART_WINDOW:
            tau = sigma = t0
            d_bar = d.copy()
            r_restart, k_restart = r, k
    d, u, r = best
    return ProxLinearSolution(d, u, r, k, r <= tol)


SUBSOLVERS = {"adpg": solve_proxlinear_adpg, "pd": solve_proxlinear_pd}


def solve_proxlinear(sub: ProxLinearSubproblem, method: str = "pd", tol: float | None = None,
                     k_max: int = DEFAULT_K_MAX, u0=None) -> ProxLinearSolution:
    """Dispatch to ``adpg`` or ``pd``, optionally warm-starting the dual."""
    try:
        solver = SUBSOLVERS[method]
    except KeyError:
        raise InvalidParameter(f"unknown subsolver {method!r}") from None
    return solver(sub, tol=tol, k_max=k_max, u0=u0)


__all__ = [
    "OUTER_KINDS", "prox_outer", "prox_outer_conjugate", "project_simplex", "project_box",
    "ProxLinearSubproblem", "ProxLinearSolution", "subproblem_residual", "dual_objective",
    "solve_proxlinear_adpg", "solve_proxlinear_pd", "solve_proxlinear", "cp_theta",
    "SUBSOLVERS", "DEFAULT_K_MAX",
]
