"""Standardized noise/design quantities and their concentration bounds.

For a sample ``z`` and level ``lam`` (all operators on H' in orthonormal
coordinates, ``T_nu = diag(mu)``)::

    theta_z = ||(T_nu + lam)^{-1/2} S_x^* (S_x A(f_rho) - y)||
    psi_x   = ||(T_nu + lam)^{-1/2} (T_nu - T_x)||          (operator norm)
    psi_hs  = ||(T_nu + lam)^{-1/2} (T_x - T_nu)||_HS       (Hilbert-Schmidt)
    gamma_x = ||(T_x + lam)^{-1/2} (T_nu + lam)^{1/2}||

The probabilistic bounds are read as quantile statements: over independent
samples, the empirical ``(1 - eta)``-quantile of each quantity should not
exceed its bound.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .estimator import Sample, parameter_condition
from .noise import NoiseModel, sample_noise
from .operators import ForwardOp
from .rkhs import DesignPoints, KernelView, covariance_empirical, effective_dimension, kappa_sq, sampling_adjoint

logger = logging.getLogger(__name__)

__all__ = [
    "StandardizedQuantities",
    "compute_standardized",
    "sampling_bounds",
    "perturbation_bounds",
    "ConcentrationReport",
    "concentration_study",
]


@dataclass(frozen=True)
class StandardizedQuantities:
    theta_z: float
    psi_x: float
    gamma_x: float
    psi_hs: float
    lam: float


def compute_standardized(op: ForwardOp, sample: Sample, f_rho: np.ndarray, lam: float) -> StandardizedQuantities:
    if not lam > 0:
        raise ValueError("lambda must be positive")
    kv = KernelView(op.spec)
    mu = kv.mu
    resid = sample.dp.phi @ (kv.sqrt_mu * op.apply(f_rho)) - sample.y
    theta = float(np.linalg.norm(sampling_adjoint(kv, sample.dp, resid) / np.sqrt(mu + lam)))

    Tx = covariance_empirical(kv, sample.dp)
    if not np.all(np.isfinite(Tx)):
        raise np.linalg.LinAlgError("empirical covariance has non-finite entries")
    diff = (np.diag(mu) - Tx) / np.sqrt(mu + lam)[:, None]
    psi = float(np.linalg.norm(diff, 2))
    psi_hs = float(np.linalg.norm(diff, "fro"))

    evals, evecs = np.linalg.eigh(Tx)
    evals = np.maximum(evals, 0.0)  # absorb tiny negative round-off
    inv_sqrt = (evecs / np.sqrt(evals + lam)) @ evecs.T
    gamma = float(np.linalg.norm(inv_sqrt * np.sqrt(mu + lam)[None, :], 2))
    return StandardizedQuantities(theta, psi, gamma, psi_hs, float(lam))


def sampling_bounds(m: float, lam: float, eta: float, M: float, Sigma: float, kappa: float, n_lambda: float):
    """Confidence-``1 - eta`` bounds for ``theta_z`` and ``psi_hs``.

    Returns ``(2 (kappa M / (m sqrt(lam)) + sqrt(Sigma**2 N / m)) log(2/eta),
    2 (kappa**2 / (m sqrt(lam)) + sqrt(kappa**2 N / m)) log(2/eta))``.
    """
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    log_term = math.log(2.0 / eta)
    root = math.sqrt(lam)
    theta = 2.0 * (kappa * M / (m * root) + math.sqrt(Sigma**2 * n_lambda / m)) * log_term
    psi_hs = 2.0 * (kappa**2 / (m * root) + math.sqrt(kappa**2 * n_lambda / m)) * log_term
    return theta, psi_hs


def perturbation_bounds(lam: float, eta: float, kappa: float, s: float = 0.5):
    """Bounds ``sqrt(lam) 2 kappa (2 kappa + 1) log(2/eta)`` and
    ``((2 kappa + 1)**2 log(2/eta))**(2 s)``; the second controls
    ``||(T_x + lam)^{-s} (T_nu + lam)^s||`` (``s = 1/2`` gives ``gamma_x``).
    """
    if not 0 <= s <= 1:
        raise ValueError("s must lie in [0, 1]")
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    log_term = math.log(2.0 / eta)
    psi = math.sqrt(lam) * 2.0 * kappa * (2.0 * kappa + 1.0) * log_term
    gamma_power = ((2.0 * kappa + 1.0) ** 2 * log_term) ** (2.0 * s)
    return psi, gamma_power


@dataclass
class ConcentrationReport:
    m: int
    lam: float
    eta: float
    theta_z: np.ndarray
    psi_x: np.ndarray
    gamma_x: np.ndarray
    psi_hs: np.ndarray
    quantiles: dict
    bounds: dict
    condition_holds: bool
    passes: dict = field(default_factory=dict)

    @property
    def slack(self) -> dict:
        return {k: self.bounds[k] - self.quantiles[k] for k in self.bounds}

    def check(self, *keys: str) -> bool:
        return all(self.passes[k] for k in keys)

    @property
    def all_pass(self) -> bool:
        return all(self.passes.values())


def concentration_study(
    op: ForwardOp,
    noise: NoiseModel,
    f_rho: np.ndarray,
    m: int,
    lam: float,
    trials: int = 500,
    eta: float = 0.1,
    seed: int = 0,
    kappa: float | None = None,
) -> ConcentrationReport:
    """Empirical ``(1 - eta)``-quantiles of the standardized quantities vs their bounds.

    The sampling bounds (``theta_z``, ``psi_hs``) need no condition on
    ``lam``.  The perturbation bounds (``psi_hs`` against the
    ``sqrt(lam)``-form, stored as ``psi_hs_perturbation``, and ``gamma_x``)
    assume ``N(lam) <= m lam`` and the report flags when that fails.
    """
    if trials < 100:
        raise ValueError("concentration study needs at least 100 trials")
    kv = KernelView(op.spec)
    kappa = math.sqrt(kappa_sq(kv)[0]) if kappa is None else kappa
    n_lambda = effective_dimension(kv.mu, lam)
    g_rho = kv.sqrt_mu * op.apply(f_rho)

    rows = []
    for child in np.random.SeedSequence(seed).spawn(trials):
        rng = np.random.default_rng(child)
        dp = DesignPoints(op.spec, rng.uniform(0.0, 1.0, m))
        y = dp.phi @ g_rho + sample_noise(noise, rng, size=m)
        q = compute_standardized(op, Sample(dp, y), f_rho, lam)
        rows.append((q.theta_z, q.psi_x, q.gamma_x, q.psi_hs))
    arr = np.array(rows)
    level = 1.0 - eta
    quant = {k: float(np.quantile(arr[:, i], level)) for i, k in enumerate(("theta_z", "psi_x", "gamma_x", "psi_hs"))}

    b_theta, b_hs = sampling_bounds(m, lam, eta, noise.M, noise.Sigma, kappa, n_lambda)
    b_psi, b_gamma = perturbation_bounds(lam, eta, kappa, 0.5)
    cond = parameter_condition(lam, m, kv.mu)
    if not cond.holds:
        logger.warning("lam=%.3g, m=%d violates N(lam) <= m lam or lam <= min(1, ||T||); perturbation bounds not guaranteed", lam, m)
    bounds = {"theta_z": b_theta, "psi_hs": b_hs, "psi_hs_perturbation": b_psi, "gamma_x": b_gamma}
    quantiles = dict(quant, psi_hs_perturbation=quant["psi_hs"])
    passes = {k: quantiles[k] <= bounds[k] for k in bounds}
    return ConcentrationReport(
        m=m,
        lam=lam,
        eta=eta,
        theta_z=arr[:, 0],
        psi_x=arr[:, 1],
        gamma_x=arr[:, 2],
        psi_hs=arr[:, 3],
        quantiles=quantiles,
        bounds=bounds,
        condition_holds=cond.holds,
        passes=passes,
    )
