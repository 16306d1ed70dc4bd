"""Benchmark problem families.

Nonlinear least-squares style classification (``q = 4`` stacked nonconvex
losses of the margin ``m = y (a^T x + b)``) and smoothed CVaR-penalized asset
allocation (``q = 1``), with analytic Jacobians, synthetic data generators and
bootstrap resampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .core import (
    CompositionProblem,
    DenseJacobian,
    OuterFunction,
    ProblemConstants,
    RowWeightedJacobian,
    SimplexBoxRegularizer,
)
from .errors import InvalidParameter

NLSE_Q = 4


# --------------------------------------------------------------------------
# Datasets


@dataclass
class ClassificationDataset:
    """Rows ``A`` (``n x p`` CSR), labels ``y`` in {-1, +1} and offsets ``b``."""

    A: sp.csr_matrix
    y: np.ndarray
    b: np.ndarray | None = None

    def __post_init__(self):
        self.A = sp.csr_matrix(self.A, dtype=float)
        self.y = np.asarray(self.y, dtype=float).ravel()
        n = self.A.shape[0]
        if self.y.shape != (n,):
            raise InvalidParameter("label count does not match row count")
        if n and not np.all(np.abs(self.y) == 1.0):
            raise InvalidParameter("labels must be -1 or +1")
        self.b = np.zeros(n) if self.b is None else np.asarray(self.b, dtype=float).ravel()
        if self.b.shape != (n,):
            raise InvalidParameter("offset count does not match row count")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.A.shape[1]


@dataclass
class ReturnsDataset:
    """Scenario returns ``xi`` (``n x p``) and expected returns ``c``."""

    xi: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.xi = np.atleast_2d(np.asarray(self.xi, dtype=float))
        self.c = np.asarray(self.c, dtype=float).ravel()
        if self.c.shape != (self.xi.shape[1],):
            raise InvalidParameter("c must have one entry per asset")
        if not (np.all(np.isfinite(self.xi)) and np.all(np.isfinite(self.c))):
            raise InvalidParameter("returns must be finite")

    @property
    def n(self) -> int:
        return self.xi.shape[0]

    @property
    def p(self) -> int:
        return self.xi.shape[1]


# --------------------------------------------------------------------------
# Margin losses


def _softplus(t):
    return np.logaddexp(0.0, t)


def margin_losses(m) -> np.ndarray:
    """The four losses at margins ``m``; shape ``m.shape + (4,)``.

    ``1 - tanh m``, ``(1 - sigmoid m)^2``,
    ``log(1 + e^-m) - log(1 + e^(-m-1))`` and ``log(1 + (m - 1)^2)``.
    """
    m = np.asarray(m, dtype=float)
    s_neg = expit(-m)
    return np.stack([
        1.0 - np.tanh(m),
        s_neg * s_neg,
        _softplus(-m) - _softplus(-m - 1.0),
        np.log1p((m - 1.0) ** 2),
    ], axis=-1)


def margin_loss_derivatives(m) -> np.ndarray:
    """First derivatives of :func:`margin_losses` in ``m``."""
    m = np.asarray(m, dtype=float)
    s_neg = expit(-m)
    th = np.tanh(m)
    e = m - 1.0
    return np.stack([
        -(1.0 - th * th),
        -2.0 * s_neg * s_neg * expit(m),
        -s_neg + expit(-m - 1.0),
        2.0 * e / (1.0 + e * e),
    ], axis=-1)


def margin_loss_second_derivatives(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    th = np.tanh(m)
    a = expit(m)
    e = m - 1.0
    return np.stack([
        2.0 * (1.0 - th * th) * th,
        -2.0 * a * (1.0 - a) ** 2 * (1.0 - 3.0 * a),
        expit(-m) * a - expit(-m - 1.0) * expit(m + 1.0),
        2.0 * (1.0 - e * e) / (1.0 + e * e) ** 2,
    ], axis=-1)


def _sup_vector_norm(fn) -> float:
    # all four derivatives decay outside [-40, 40]; the grid step is fine
    # enough that the sup is resolved to well under the 1% margin applied.
    grid = np.linspace(-40.0, 40.0, 160_001)
    return 1.01 * float(np.linalg.norm(fn(grid), axis=1).max())


_LOSS_CURVATURE = None
_LOSS_SLOPE = None


def loss_curvature_bound() -> float:
    """``sup_m ||l''(m)||`` over the stacked losses (grid search, 1% margin)."""
    global _LOSS_CURVATURE
    if _LOSS_CURVATURE is None:
        _LOSS_CURVATURE = _sup_vector_norm(margin_loss_second_derivatives)
    return _LOSS_CURVATURE


def loss_slope_bound() -> float:
    """``sup_m ||l'(m)||`` over the stacked losses (grid search, 1% margin)."""
    global _LOSS_SLOPE
    if _LOSS_SLOPE is None:
        _LOSS_SLOPE = _sup_vector_norm(margin_loss_derivatives)
    return _LOSS_SLOPE


def nlse_component(loss_id: int, x, sample) -> tuple[float, np.ndarray]:
    """Value and gradient of one loss for one sample ``(a, b, y)``."""
    if loss_id not in (1, 2, 3, 4):
        raise InvalidParameter("loss_id must be in 1..4")
    a, b, y = sample
    a = np.asarray(a, dtype=float)
    m = y * (float(a @ np.asarray(x, dtype=float)) + b)
    k = loss_id - 1
    return float(margin_losses(m)[k]), float(margin_loss_derivatives(m)[k]) * y * a


class NLSEProblem(CompositionProblem):
    """``phi(mean_i l(y_i (a_i^T x + b_i)))`` with the four stacked losses.

    The batch Jacobian is ``(1/|B|) W^T A_B`` with ``W_ik = l_k'(m_i) y_i``,
    kept as a :class:`RowWeightedJacobian` so sparse rows stay sparse.
    """

    def __init__(self, data: ClassificationDataset, outer: OuterFunction,
                 constants: ProblemConstants | None = None):
        if data.n == 0:
            raise InvalidParameter("dataset is empty")
        self.data = data
        super().__init__(data.p, NLSE_Q, data.n, outer, None, constants)

    def _margins(self, x, idx):
        d = self.data
        return d.y[idx] * (d.A[idx] @ x + d.b[idx])

    def _values(self, x, samples):
        return margin_losses(self._margins(x, samples))

    def _jacobian(self, x, samples):
        d = self.data
        W = margin_loss_derivatives(self._margins(x, samples)) * d.y[samples, None]
        return RowWeightedJacobian(W, d.A[samples], 1.0 / len(samples))


def nlse_constants(data: ClassificationDataset, outer: OuterFunction) -> ProblemConstants:
    """Certified ``M_phi``, ``L_F`` and ``M_F``.

    Per sample, ``||F'(x) - F'(x')|| <= sup||l''|| ||a||^2 ||x - x'||`` where
    ``a`` includes the offset-free row; averaging keeps the largest row.
    """
    sq = np.asarray(data.A.multiply(data.A).sum(axis=1)).ravel()
    a_max = float(sq.max()) if sq.size else 0.0
    return ProblemConstants(
        M_phi=outer.lipschitz(NLSE_Q),
        L_F=loss_curvature_bound() * a_max,
        M_F=loss_slope_bound() * math.sqrt(a_max),
    )


def estimate_nlse_variances(problem: NLSEProblem, x) -> tuple[float, float]:
    """Sample ``sigma_F`` and an upper estimate of ``sigma_D`` at ``x``.

    ``sigma_D`` uses the Frobenius norm of the per-sample Jacobian deviation,
    which dominates the spectral norm. Not charged to the counter.
    """
    idx = problem.all_samples()
    m = problem._margins(np.asarray(x, dtype=float), idx)
    V = margin_losses(m)
    sF = float(np.sqrt(((V - V.mean(axis=0)) ** 2).sum(axis=1).mean()))
    W = margin_loss_derivatives(m) * problem.data.y[:, None]
    A = problem.data.A
    Jbar = (A.T @ W).T / problem.n
    sq = np.asarray(A.multiply(A).sum(axis=1)).ravel()
    # ||w_i a_i^T - Jbar||_F^2 = |w_i|^2 |a_i|^2 - 2 w_i^T Jbar a_i + ||Jbar||_F^2
    cross = np.einsum("ik,ik->i", W, np.asarray(A @ Jbar.T))
    dev = (W * W).sum(axis=1) * sq - 2.0 * cross + float((Jbar * Jbar).sum())
    sD = float(np.sqrt(max(dev.mean(), 0.0)))
    return sF, sD


def make_nlse_problem(data: ClassificationDataset, phi_kind: str = "l2", rho: float = 1.0,
                      delta: float = 1.0, estimate_variances: bool = False) -> NLSEProblem:
    """Build the classification problem with ``phi = rho * phi_kind``.

    With ``estimate_variances`` the constants also carry sampled ``sigma_F``
    and ``sigma_D`` at ``x = 0`` and are marked as not certified.
    """
    if data.n == 0:
        raise InvalidParameter("dataset is empty")
    outer = OuterFunction(phi_kind, rho=rho, delta=delta)
    problem = NLSEProblem(data, outer, nlse_constants(data, outer))
    if estimate_variances:
        sF, sD = estimate_nlse_variances(problem, np.zeros(data.p))
        c = problem.constants
        c.sigma_F, c.sigma_D, c.certified = sF, sD, False
    return problem


def gen_synthetic_classification(n: int, p: int, seed: int = 0, flip: float = 0.1,
                                 density: float = 1.0) -> ClassificationDataset:
    """Linear-teacher data: ``a_i ~ N(0, I/p)`` (optionally sparsified), labels
    ``sign(a_i^T w)`` with a fraction ``flip`` of them inverted."""
    if n < 1 or p < 1:
        raise InvalidParameter("n and p must be positive")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, p)) / math.sqrt(p * density)
    if density < 1.0:
        A *= rng.random((n, p)) < density
    w = rng.standard_normal(p)
    y = np.where(A @ w >= 0.0, 1.0, -1.0)
    y[rng.random(n) < flip] *= -1.0
    return ClassificationDataset(sp.csr_matrix(A), y)


# --------------------------------------------------------------------------
# Smoothed CVaR allocation


def cvar_component(x, xi, beta: float, gamma: float) -> tuple[float, np.ndarray]:
    """``tau + (sqrt(w^2 + gamma^2) - gamma - w) / (2 beta)`` with
    ``w = xi^T z + tau``; gradient over ``(z, tau)``."""
    if not (beta > 0 and gamma > 0):
        raise InvalidParameter("beta and gamma must be positive")
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    z, tau = x[:-1], x[-1]
    w = float(xi @ z) + tau
    r = math.hypot(w, gamma)
    val = tau + (r - gamma - w) / (2.0 * beta)
    s = (w / r - 1.0) / (2.0 * beta)
    return val, np.append(s * xi, 1.0 + s)


class CVaRProblem(CompositionProblem):
    """Smoothed CVaR penalty ``rho [F(x)]_+`` with
    ``g = -c^T z + indicator(simplex x [tau_lo, tau_hi])``; ``x = (z, tau)``."""

    def __init__(self, data: ReturnsDataset, beta: float, gamma: float, rho: float,
                 tau_bounds=(0.0, 1.0)):
        if data.n == 0:
            raise InvalidParameter("dataset is empty")
        if not (beta > 0 and gamma > 0 and rho > 0):
            raise InvalidParameter("beta, gamma and rho must be positive")
        lo, hi = tau_bounds
        reg = SimplexBoxRegularizer(data.c, lo, hi)
        outer = OuterFunction("hinge", rho=rho)
        self.data = data
        self.beta = float(beta)
        self.gamma = float(gamma)
        sq = (data.xi * data.xi).sum(axis=1) + 1.0
        consts = ProblemConstants(
            M_phi=outer.lipschitz(1),
            L_F=float(sq.max()) / (2.0 * beta * gamma),
            M_F=1.0 + float(np.sqrt(sq.max())) / beta,
        )
        super().__init__(data.p + 1, 1, data.n, outer, reg, consts)

    def _parts(self, x, samples):
        xi = self.data.xi[samples]
        w = xi @ x[:-1] + x[-1]
        r = np.hypot(w, self.gamma)
        return xi, w, r

    def _values(self, x, samples):
        _, w, r = self._parts(x, samples)
        return (x[-1] + (r - self.gamma - w) / (2.0 * self.beta))[:, None]

    def _jacobian(self, x, samples):
        xi, w, r = self._parts(x, samples)
        s = (w / r - 1.0) / (2.0 * self.beta)
        b = len(samples)
        row = np.append(s @ xi / b, 1.0 + s.mean())
        return DenseJacobian(row[None, :])

    def initial_point(self) -> np.ndarray:
        """Equal weights and ``tau`` at the lower bound."""
        return np.append(np.full(self.data.p, 1.0 / self.data.p), self.regularizer.tau_lo)


def make_cvar_problem(data: ReturnsDataset, beta: float = 0.1, gamma: float = 1e-3,
                      rho: float = 5.0, tau_bounds=(0.0, 1.0)) -> CVaRProblem:
    return CVaRProblem(data, beta, gamma, rho, tau_bounds)


@dataclass(frozen=True)
class ReturnsModel:
    """Gaussian factor model ``xi = mu + B f + s * e`` with ``f ~ N(0, I_k)``
    and ``e ~ N(0, I_p)``."""

    mu: np.ndarray
    loadings: np.ndarray
    idio_sd: np.ndarray

    @property
    def covariance(self) -> np.ndarray:
        return self.loadings @ self.loadings.T + np.diag(self.idio_sd**2)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        p, k = self.loadings.shape
        f = rng.standard_normal((n, k))
        e = rng.standard_normal((n, p))
        return self.mu + f @ self.loadings.T + e * self.idio_sd


def returns_model(p: int, seed: int = 0, n_factors: int = 3, mean_return: float = 0.01,
                  factor_vol: float = 0.03, idio_vol: float = 0.02) -> ReturnsModel:
    """Model used by :func:`gen_synthetic_returns`.

    Asset means are ``mean_return * U(0.5, 1.5)``; loadings are
    ``N(0, factor_vol^2)``; idiosyncratic volatilities ``idio_vol * U(0.5, 1.5)``.
    Volatility dominates the mean, so losses occur in a sizable share of
    scenarios and the CVaR penalty is active.
    """
    rng = np.random.default_rng([seed, p, 0])
    mu = mean_return * rng.uniform(0.5, 1.5, p)
    B = factor_vol * rng.standard_normal((p, n_factors))
    s = idio_vol * rng.uniform(0.5, 1.5, p)
    return ReturnsModel(mu, B, s)


def gen_synthetic_returns(n: int, p: int, seed: int = 0, **model_kw) -> ReturnsDataset:
    """Draw ``n`` scenarios from :func:`returns_model`; ``c`` is the scenario mean."""
    if n < 1 or p < 1:
        raise InvalidParameter("n and p must be positive")
    model = returns_model(p, seed, **model_kw)
    xi = model.sample(n, np.random.default_rng([seed, p, 1]))
    return ReturnsDataset(xi, xi.mean(axis=0))


def bootstrap_resample(data, n_out: int, seed: int = 0):
    """Draw ``n_out`` rows uniformly with replacement.

    Returns datasets have ``c`` recomputed as the mean of the resampled rows.
    """
    if data.n == 0:
        raise InvalidParameter("cannot resample an empty dataset")
    if n_out < 1:
        raise InvalidParameter("n_out must be positive")
    idx = np.random.default_rng(seed).integers(0, data.n, size=n_out)
    if isinstance(data, ReturnsDataset):
        xi = data.xi[idx]
        return ReturnsDataset(xi, xi.mean(axis=0))
    if isinstance(data, ClassificationDataset):
        return ClassificationDataset(data.A[idx], data.y[idx], data.b[idx])
    raise InvalidParameter(f"unsupported dataset type {type(data).__name__}")
