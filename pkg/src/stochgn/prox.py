"""Closed-form proximal operators for the outer-function catalog, plus the
Euclidean projections used by the regularizers.

Every outer function is ``rho * base`` where ``base`` is one of the kinds in
:data:`OUTER_KINDS`. Prox routines only read ``phi.kind``, ``phi.rho`` and
``phi.delta`` so they accept any object carrying those attributes.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidParameter

OUTER_KINDS = ("l2", "l1", "huber", "hinge", "quadratic")


def _check_lambda(lam: float) -> None:
    if not lam > 0:
        raise InvalidParameter(f"prox parameter must be positive, got {lam!r}")


def prox_outer(phi, v, lam: float) -> np.ndarray:
    """Return ``argmin_u phi(u) + ||u - v||^2 / (2 lam)``.

    Ties at the thresholds resolve to zero (soft-threshold at exactly ``lam``
    returns 0).
    """
    _check_lambda(lam)
    v = np.asarray(v, dtype=float)
    t = lam * phi.rho
    kind = phi.kind
    if kind == "l2":
        nv = np.linalg.norm(v)
        if nv <= t:
            return np.zeros_like(v)
        return v * (1.0 - t / nv)
    if kind == "l1":
        return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)
    if kind == "hinge":
        return np.where(v > t, v - t, np.where(v < 0.0, v, 0.0))
    if kind == "huber":
        d = phi.delta
        inner = np.abs(v) <= d * (1.0 + t)
        return np.where(inner, v / (1.0 + t), v - t * d * np.sign(v))
    if kind == "quadratic":
        return v / (1.0 + t)
    raise InvalidParameter(f"unknown outer kind {kind!r}")


def prox_outer_conjugate(phi, v, lam: float) -> np.ndarray:
    """Prox of ``lam * phi^*``.

    Written in closed form (projections onto the dual ball/box for the
    norm-like kinds); agrees with the Moreau decomposition
    ``v - lam * prox_{phi/lam}(v / lam)`` to rounding.
    """
    _check_lambda(lam)
    v = np.asarray(v, dtype=float)
    rho = phi.rho
    kind = phi.kind
    if kind == "l2":
        nv = np.linalg.norm(v)
        return v if nv <= rho else v * (rho / nv)
    if kind == "l1":
        return np.clip(v, -rho, rho)
    if kind == "hinge":
        return np.clip(v, 0.0, rho)
    if kind == "huber":
        r = rho * phi.delta
        return np.clip(v / (1.0 + lam / rho), -r, r)
    if kind == "quadratic":
        return v / (1.0 + lam / rho)
    raise InvalidParameter(f"unknown outer kind {kind!r}")


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto ``{z >= 0, sum(z) = 1}`` (sort and threshold)."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise InvalidParameter("project_simplex expects a nonempty vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    active = u - css / k > 0
    r = k[active][-1]
    theta = css[r - 1] / r
    return np.maximum(v - theta, 0.0)


def project_box(v, lo, hi) -> np.ndarray:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(lo > hi):
        raise InvalidParameter("box lower bound exceeds upper bound")
    return np.clip(np.asarray(v, dtype=float), lo, hi)
