"""Observation noise with certified Bernstein constants.

A noise law satisfies the moment condition with constants ``(M, Sigma)`` when

    E[ exp(|eps|/M) - |eps|/M - 1 ] <= Sigma**2 / (2 M**2).

For the bounded uniform law on ``[-s, s]`` the expectation has a closed form;
for the Gaussian law it is computed by adaptive quadrature.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

__all__ = [
    "NoiseModel",
    "BernsteinCheck",
    "bernstein_moment",
    "certify_bernstein",
    "bernstein_sweep",
    "tightest_sigma",
    "sample_noise",
]

KINDS = ("gaussian", "bounded_uniform")


@dataclass(frozen=True)
class NoiseModel:
    """Centered noise law.

    ``sigma`` is the standard deviation for ``gaussian`` and the half-width
    ``s`` of the support ``[-s, s]`` for ``bounded_uniform``.  ``M`` and
    ``Sigma`` are the Bernstein constants handed to the concentration bounds.
    """

    kind: str = "gaussian"
    sigma: float = 0.1
    M: float = 0.4
    Sigma: float = 0.2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}, expected one of {KINDS}")
        if self.sigma < 0:
            raise ValueError("noise scale must be nonnegative")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sigma": self.sigma, "M": self.M, "Sigma": self.Sigma}

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseModel":
        return cls(
            kind=data.get("kind", "gaussian"),
            sigma=float(data.get("sigma", 0.1)),
            M=float(data.get("M", 0.4)),
            Sigma=float(data.get("Sigma", 0.2)),
        )


def sample_noise(model: NoiseModel, rng: np.random.Generator, size=None):
    """Draw centered noise; returns a float when ``size`` is None."""
    if model.sigma == 0:
        out = np.zeros(() if size is None else size)
    elif model.kind == "gaussian":
        out = rng.normal(0.0, model.sigma, size=size)
    else:
        out = rng.uniform(-model.sigma, model.sigma, size=size)
    return float(out) if size is None else out


def bernstein_moment(model: NoiseModel, M: float) -> float:
    """``E[exp(|eps|/M) - |eps|/M - 1]`` under the noise law."""
    if not M > 0:
        raise ValueError("M must be positive")
    s = model.sigma
    if s == 0:
        return 0.0
    if model.kind == "bounded_uniform":
        # |eps| ~ U[0, s]; expm1 keeps precision when s/M is small
        u = s / M
        return math.expm1(u) / u - u / 2.0 - 1.0

    def integrand(t):
        u = t / M
        g = 0.5 * (t / s) ** 2
        if u < 50.0:
            core = (math.expm1(u) - u) * math.exp(-g)
        else:
            core = math.exp(u - g) - (1.0 + u) * math.exp(-g)
        # folded normal density of |eps|
        return core * math.sqrt(2.0 / math.pi) / s

    value, abserr = integrate.quad(integrand, 0.0, np.inf, epsabs=1e-14, epsrel=1e-12, limit=200)
    if not np.isfinite(value) or abserr > 1e-8 * max(1.0, abs(value)):
        raise ArithmeticError(f"Bernstein quadrature did not converge (value={value}, err={abserr})")
    return float(value)


@dataclass(frozen=True)
class BernsteinCheck:
    holds: bool
    moment: float
    bound: float

    @property
    def slack(self) -> float:
        return self.bound - self.moment


def certify_bernstein(model: NoiseModel, M: float | None = None, Sigma: float | None = None) -> BernsteinCheck:
    """Check the moment condition for ``(M, Sigma)`` (defaults: the stored pair)."""
    M = model.M if M is None else M
    Sigma = model.Sigma if Sigma is None else Sigma
    if not (M > 0 and Sigma > 0):
        raise ValueError("M and Sigma must be positive")
    moment = bernstein_moment(model, M)
    bound = Sigma**2 / (2.0 * M**2)
    return BernsteinCheck(moment <= bound, moment, bound)


def tightest_sigma(model: NoiseModel, M: float) -> float:
    """Smallest ``Sigma`` admissible together with ``M``."""
    return float(M) * math.sqrt(2.0 * bernstein_moment(model, M))


def bernstein_sweep(model: NoiseModel, M_grid=None) -> np.ndarray:
    """Rows ``(M, tightest Sigma)`` over a grid of ``M`` values.

    Larger ``M`` drives ``Sigma`` down towards the noise standard deviation
    but inflates the ``M``-term of the concentration bound, so the choice of
    pair is left to the caller.
    """
    if M_grid is None:
        M_grid = max(model.sigma, 1e-12) * np.logspace(-0.5, 2, 51)
    return np.array([(float(M), tightest_sigma(model, float(M))) for M in M_grid])
