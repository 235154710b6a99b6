"""Kernel, sampling operator, covariance operators and effective dimension.

The kernel is ``K(x, x') = sum_j mu_j phi_j(x) phi_j(x')``.  In the
orthonormal coordinates of its RKHS H' (basis ``sqrt(mu_j) phi_j``) the
population covariance is ``diag(mu)`` and the sampling operator is the matrix
``Phi @ diag(sqrt(mu))``.  Empirical inner products on R^m carry the ``1/m``
weight, so the adjoint of sampling is ``diag(sqrt(mu)) @ Phi.T / m``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .testbed import TestbedSpec, _check_points, basis_matrix

logger = logging.getLogger(__name__)

__all__ = [
    "KernelView",
    "DesignPoints",
    "DecayFit",
    "kernel_eval",
    "gram_matrix",
    "kappa_sq",
    "sampling_apply",
    "sampling_adjoint",
    "covariance_population",
    "covariance_empirical",
    "effective_dimension",
    "effective_dimension_operator",
    "classify_decay",
    "R2_THRESHOLD",
    "LOG_EXPONENT_MAX",
]

#: Minimum coefficient of determination for a decay regime to be declared.
R2_THRESHOLD = 0.98
#: Largest power of log(1/lambda) still read as logarithmic growth.
LOG_EXPONENT_MAX = 1.5


@dataclass(frozen=True)
class KernelView:
    spec: TestbedSpec

    @property
    def mu(self) -> np.ndarray:
        return self.spec.mu

    @cached_property
    def sqrt_mu(self) -> np.ndarray:
        return np.sqrt(self.spec.mu)


@dataclass(frozen=True, eq=False)
class DesignPoints:
    """Design points together with their precomputed feature table."""

    spec: TestbedSpec
    x: np.ndarray
    phi: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        if x.ndim != 1 or x.size < 1:
            raise ValueError("design needs at least one point")
        _check_points(x)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "phi", basis_matrix(self.spec.n, x))

    @property
    def m(self) -> int:
        return self.x.size

    @cached_property
    def gram(self) -> np.ndarray:
        """``Phi.T @ Phi / m``, the empirical second moments of the basis."""
        return self.phi.T @ self.phi / self.m

    def permuted(self, order: np.ndarray) -> "DesignPoints":
        return DesignPoints(self.spec, self.x[np.asarray(order)])


def kernel_eval(kv: KernelView, x: float, xp: float) -> float:
    pts = np.array([x, xp], dtype=float)
    phi = basis_matrix(kv.spec.n, pts)
    return float(np.sum(kv.mu * phi[0] * phi[1]))


def gram_matrix(kv: KernelView, x: np.ndarray) -> np.ndarray:
    """Kernel matrix ``K(x_i, x_k)`` on a finite point set."""
    phi = basis_matrix(kv.spec.n, x)
    return (phi * kv.mu) @ phi.T


def kappa_sq(kv: KernelView, grid_size: int = 4096) -> tuple[float, float]:
    """Supremum of ``K(x, x)`` on a uniform grid and a certified upper bound.

    The grid contains ``x = 0``, where ``K(x, x)`` peaks whenever the
    eigenvalues are non-increasing (every cosine term is maximal there), so
    the grid value is exact for the laws this testbed admits.  The certified
    bound ``mu_1 + 2 * sum_{j>=2} mu_j`` uses ``phi_j**2 <= 2``.
    """
    x = np.linspace(0.0, 1.0, grid_size + 1)
    phi = basis_matrix(kv.spec.n, x)
    diag = (phi**2) @ kv.mu
    certified = float(kv.mu[0] + 2.0 * np.sum(kv.mu[1:]))
    return float(diag.max()), certified


def sampling_apply(kv: KernelView, dp: DesignPoints, g: np.ndarray) -> np.ndarray:
    """Values ``g(x_i)`` of an H' element given in orthonormal coordinates."""
    g = np.asarray(g, dtype=float)
    if g.shape != (kv.spec.n,):
        raise ValueError(f"expected {kv.spec.n} coefficients, got shape {g.shape}")
    return dp.phi @ (kv.sqrt_mu * g)


def sampling_adjoint(kv: KernelView, dp: DesignPoints, c: np.ndarray) -> np.ndarray:
    """``(1/m) sum_i K_{x_i} c_i`` in H' orthonormal coordinates."""
    c = np.asarray(c, dtype=float)
    if c.shape != (dp.m,):
        raise ValueError(f"expected {dp.m} values, got shape {c.shape}")
    return kv.sqrt_mu * (dp.phi.T @ c) / dp.m


def covariance_population(kv: KernelView) -> np.ndarray:
    """Diagonal of the population covariance (a diagonal operator)."""
    return np.array(kv.mu, dtype=float)


def covariance_empirical(kv: KernelView, dp: DesignPoints) -> np.ndarray:
    s = kv.sqrt_mu
    t = dp.gram * np.outer(s, s)
    return 0.5 * (t + t.T)


def effective_dimension(mu: np.ndarray, lam: float) -> float:
    """``sum_j mu_j / (lam + mu_j)``."""
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    mu = np.asarray(mu, dtype=float)
    if np.any(mu < 0):
        raise ValueError("eigenvalues must be nonnegative")
    return float(np.sum(mu / (lam + mu)))


def effective_dimension_operator(T: np.ndarray, lam: float) -> float:
    """``trace((T + lam I)^{-1} T)`` for a symmetric PSD matrix, via a linear solve."""
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    T = np.asarray(T, dtype=float)
    return float(np.trace(np.linalg.solve(T + lam * np.eye(T.shape[0]), T)))


@dataclass(frozen=True)
class DecayFit:
    regime: str  # "polynomial", "logarithmic" or "neither"
    b_hat: float
    r2_polynomial: float
    r2_logarithmic: float
    log_slope: float
    log_intercept: float
    poly_intercept: float

    def predict(self, lam) -> np.ndarray:
        """Fitted N(lambda) under the selected regime (NaN for "neither")."""
        lam = np.asarray(lam, dtype=float)
        if self.regime == "polynomial":
            return np.exp(self.poly_intercept) * lam ** (-self.b_hat)
        if self.regime == "logarithmic":
            return np.exp(self.log_intercept) * np.log(1.0 / lam) ** self.log_slope
        return np.full_like(lam, np.nan)


def _linfit(u: np.ndarray, v: np.ndarray) -> tuple[float, float, float]:
    X = np.column_stack([u, np.ones_like(u)])
    coef, *_ = np.linalg.lstsq(X, v, rcond=None)
    resid = v - X @ coef
    tss = float(np.sum((v - v.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / tss if tss > 0 else 0.0
    return float(coef[0]), float(coef[1]), r2


def classify_decay(
    mu: np.ndarray,
    lam_grid: np.ndarray,
    n_eff: Callable[[float], float] | None = None,
) -> DecayFit:
    """Decide whether N(lambda) looks polynomial or logarithmic on a grid.

    Fits ``log N`` against ``log lambda`` (slope ``-b``) and against
    ``log log(1/lambda)``.  A regime is accepted only with R^2 >= 0.98 and a
    meaningful shape: ``0 < b < 1`` for the polynomial law, and for the
    logarithmic one a fitted power of ``log(1/lambda)`` in ``(0, 1.5]``; a
    larger power is polylogarithmic curvature, typically a truncated
    polynomial law, not logarithmic growth.  Effective dimensions that never exceed 1 on the grid
    carry no decay information and are reported as "neither".
    """
    lam = np.asarray(lam_grid, dtype=float)
    if lam.size < 5 or np.any(lam <= 0):
        raise ValueError("need at least 5 positive lambda values")
    if np.log10(lam.max() / lam.min()) < 2.0 - 1e-12:
        raise ValueError("lambda grid must span at least two decades")
    if np.any(lam >= 1.0):
        raise ValueError("logarithmic fit needs lambda < 1")
    n_eff = n_eff or (lambda t: effective_dimension(mu, t))
    N = np.array([n_eff(t) for t in lam])
    logN = np.log(N)

    slope, poly_icpt, r2_poly = _linfit(np.log(lam), logN)
    b_hat = -slope
    log_slope, log_icpt, r2_log = _linfit(np.log(np.log(1.0 / lam)), logN)

    regime = "neither"
    if N.max() > 1.0:
        candidates = []
        if r2_poly >= R2_THRESHOLD and 0.0 < b_hat < 1.0:
            candidates.append((r2_poly, "polynomial"))
        if r2_log >= R2_THRESHOLD and 0.0 < log_slope <= LOG_EXPONENT_MAX:
            candidates.append((r2_log, "logarithmic"))
        if candidates:
            regime = max(candidates)[1]
    return DecayFit(regime, b_hat, r2_poly, r2_log, log_slope, log_icpt, poly_icpt)
