"""Hilbert-scale Tikhonov estimator and a-priori parameter rules.

The estimator minimizes

    (1/m) sum_i (A(f)(x_i) - y_i)**2 + lam * ||L (f - f_bar)||_H**2

by damped Gauss-Newton.  All per-iteration work is O(n^3): the sampled
Jacobian is ``Phi @ C`` with ``C = diag(sqrt(mu)) A'(f)``, so its normal
matrix is ``C.T @ G @ C`` where ``G = Phi.T @ Phi / m`` is formed once per
sample.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from .operators import ForwardOp
from .rkhs import DesignPoints, effective_dimension

logger = logging.getLogger(__name__)

__all__ = [
    "Sample",
    "SolveResult",
    "ConditionCheck",
    "IllConditionedError",
    "objective",
    "solve_linearized",
    "tikhonov_solve",
    "lambda_apriori",
    "theta_function",
    "parameter_condition",
    "RULES",
]

RULES = ("theta_general", "trivial", "poly", "log")
COND_LIMIT = 1e14
STEP_FLOOR = 1e-8


class IllConditionedError(np.linalg.LinAlgError):
    """The regularized normal equations are numerically singular."""

    def __init__(self, message: str, condition: float):
        super().__init__(message)
        self.condition = condition


@dataclass(frozen=True, eq=False)
class Sample:
    dp: DesignPoints
    y: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.shape != (self.dp.m,):
            raise ValueError(f"need {self.dp.m} observations, got shape {y.shape}")
        object.__setattr__(self, "y", y)

    @property
    def m(self) -> int:
        return self.dp.m

    @cached_property
    def moment(self) -> np.ndarray:
        """``Phi.T @ y / m``."""
        return self.dp.phi.T @ self.y / self.m

    def permuted(self, order) -> "Sample":
        order = np.asarray(order)
        return Sample(self.dp.permuted(order), self.y[order])


@dataclass(frozen=True, eq=False)
class SolveResult:
    f_hat: np.ndarray
    iterations: int
    objective_trace: list
    converged: bool
    lam: float
    restart_objectives: list = field(default_factory=list)
    restart_spread: float = 0.0  # largest H distance between restart solutions

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


def _penalty_weights(op: ForwardOp, penalty_a: float | None) -> np.ndarray:
    a = op.spec.a if penalty_a is None else penalty_a
    return op.spec.index**a


def _sampled_values(op: ForwardOp, dp: DesignPoints, f: np.ndarray) -> np.ndarray:
    return dp.phi @ (np.sqrt(op.spec.mu) * op.apply(f))


def objective(
    op: ForwardOp,
    sample: Sample,
    f: np.ndarray,
    f_bar: np.ndarray,
    lam: float,
    penalty_a: float | None = None,
) -> float:
    """Empirical misfit plus ``lam * ||L (f - f_bar)||**2``.

    ``penalty_a`` overrides the exponent of ``L`` (``0`` gives the standard
    Tikhonov penalty) without touching the forward operator.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    resid = _sampled_values(op, sample.dp, f) - sample.y
    pen = _penalty_weights(op, penalty_a) * (np.asarray(f) - np.asarray(f_bar))
    return float(resid @ resid / sample.m + lam * (pen @ pen))


@dataclass(frozen=True)
class _Step:
    delta: np.ndarray
    predicted_decrease: float
    condition: float
    residual: float


def _gauss_newton_step(op, sample, f_k, f_bar, lam, penalty_a) -> _Step:
    C = op.sampled_jacobian_core(f_k)
    G = sample.dp.gram
    v = np.sqrt(op.spec.mu) * op.apply(f_k)
    ell2 = _penalty_weights(op, penalty_a) ** 2
    GC = G @ C
    N = C.T @ GC + np.diag(lam * ell2)
    N = 0.5 * (N + N.T)
    rhs = -(C.T @ (G @ v - sample.moment) + lam * ell2 * (f_k - f_bar))

    # Jacobi scaling before the Cholesky factorization
    s = 1.0 / np.sqrt(np.diag(N))
    Ns = N * np.outer(s, s)
    try:
        cf = linalg.cho_factor(Ns, lower=False, check_finite=True)
    except linalg.LinAlgError as exc:
        raise IllConditionedError("normal matrix is not positive definite", math.inf) from exc
    anorm = float(np.abs(Ns).sum(axis=0).max())
    rcond, info = lapack.dpocon(cf[0], anorm, uplo="U")
    cond = math.inf if rcond == 0 else 1.0 / rcond
    if info != 0 or cond > COND_LIMIT:
        raise IllConditionedError(
            f"normal equations ill-conditioned: estimated condition {cond:.3g} > {COND_LIMIT:.0e} "
            f"(lam={lam:.3g}, m={sample.m}, n={op.spec.n})",
            cond,
        )
    delta = s * linalg.cho_solve(cf, s * rhs)
    # one step of iterative refinement
    delta += s * linalg.cho_solve(cf, s * (rhs - N @ delta))
    rnorm = float(np.linalg.norm(rhs))
    residual = float(np.linalg.norm(N @ delta - rhs)) / rnorm if rnorm > 0 else 0.0
    if residual > 1e-10:
        logger.warning("normal-equation residual %.3g exceeds 1e-10 (condition %.3g)", residual, cond)
    return _Step(delta, float(delta @ (N @ delta)), cond, residual)


def solve_linearized(
    op: ForwardOp,
    sample: Sample,
    f_k: np.ndarray,
    f_bar: np.ndarray,
    lam: float,
    penalty_a: float | None = None,
) -> np.ndarray:
    """Minimizer of the Tikhonov functional with ``A`` linearized at ``f_k``."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    f_k = np.asarray(f_k, dtype=float)
    step = _gauss_newton_step(op, sample, f_k, np.asarray(f_bar, dtype=float), lam, penalty_a)
    return f_k + step.delta


def _gauss_newton(op, sample, start, f_bar, lam, tol, max_iter, penalty_a):
    f = np.array(start, dtype=float)
    obj = objective(op, sample, f, f_bar, lam, penalty_a)
    trace = [obj]
    iterations = 0
    converged = False
    while True:
        step = _gauss_newton_step(op, sample, f, f_bar, lam, penalty_a)
        scale = float(np.linalg.norm(f))
        if np.linalg.norm(step.delta) <= tol * scale or not np.any(step.delta):
            converged = True
            break
        if iterations >= max_iter:
            break
        t = 1.0
        accepted = False
        while t >= STEP_FLOOR:
            cand = f + t * step.delta
            cand_obj = objective(op, sample, cand, f_bar, lam, penalty_a)
            if cand_obj <= obj:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # no decrease is resolvable in floating point: f is stationary
            converged = step.predicted_decrease <= 64 * np.finfo(float).eps * max(obj, 1e-300)
            if not converged:
                logger.warning("Gauss-Newton line search hit the step floor (objective %.6g)", obj)
            break
        f = cand
        obj = cand_obj
        trace.append(obj)
        iterations += 1
        if t * np.linalg.norm(step.delta) <= tol * np.linalg.norm(f):
            converged = True
            break
    return f, trace, iterations, converged


def tikhonov_solve(
    op: ForwardOp,
    sample: Sample,
    f_bar: np.ndarray,
    lam: float,
    tol: float = 1e-9,
    max_iter: int = 50,
    restarts: int = 3,
    rng: np.random.Generator | None = None,
    penalty_a: float | None = None,
    start: np.ndarray | None = None,
    restart_radius: float = 0.5,
) -> SolveResult:
    """Damped Gauss-Newton from ``start`` (default ``f_bar``) plus random restarts.

    Each restart begins at ``f_bar`` shifted by a random direction of H-norm
    ``restart_radius``.  The returned solution has the lowest objective, ties
    broken by the smaller penalty norm; ``restart_spread`` reports how far the
    restart solutions ended up from each other.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    f_bar = np.asarray(f_bar, dtype=float)
    rng = np.random.default_rng(0) if rng is None else rng
    starts = [f_bar if start is None else np.asarray(start, dtype=float)]
    for _ in range(restarts):
        u = rng.standard_normal(op.spec.n)
        starts.append(f_bar + restart_radius * u / np.linalg.norm(u))

    runs = [_gauss_newton(op, sample, s0, f_bar, lam, tol, max_iter, penalty_a) for s0 in starts]
    ell = _penalty_weights(op, penalty_a)
    best_obj = min(r[1][-1] for r in runs)
    tied = [r for r in runs if r[1][-1] <= best_obj + 1e-12 * abs(best_obj)]
    best = min(tied, key=lambda r: float(np.linalg.norm(ell * (r[0] - f_bar))))
    sols = [r[0] for r in runs]
    spread = max((float(np.linalg.norm(a - b)) for a in sols for b in sols), default=0.0)
    f_hat, trace, iterations, converged = best
    return SolveResult(
        f_hat=f_hat,
        iterations=iterations,
        objective_trace=trace,
        converged=converged,
        lam=float(lam),
        restart_objectives=[r[1][-1] for r in runs],
        restart_spread=spread,
    )


# -- regularization parameter ----------------------------------------------------


def theta_function(lam: float, p: float, q: float, n_eff: Callable[[float], float]) -> float:
    """``lam**((p+q)/(2(p+1))) / sqrt(N(lam))``, increasing in ``lam``."""
    return lam ** ((p + q) / (2.0 * (p + 1.0))) / math.sqrt(n_eff(lam))


def _check_rule_args(p: float, q: float, m: float) -> None:
    if not p > 0:
        raise ValueError("p must be positive")
    if not 1.0 <= q <= 2.0 + p:
        raise ValueError(f"smoothness q={q} outside [1, 2 + p] = [1, {2 + p}]")
    if m < 2:
        raise ValueError("need m >= 2")


def lambda_apriori(
    rule: str,
    p: float,
    q: float,
    m: float,
    mu: np.ndarray | None = None,
    b: float | None = None,
    n_eff: Callable[[float], float] | None = None,
    rtol: float = 1e-10,
) -> float:
    """A-priori regularization parameter for sample size ``m``.

    ``trivial``: ``m**(-(p+1)/(2p+q+1))``; ``poly``: ``m**(-(p+1)/(p+q+b(p+1)))``;
    ``log``: ``(log m / m)**((p+1)/(p+q))``; ``theta_general`` solves
    ``theta_function(lam) = 1/sqrt(m)`` by bisection in ``log lam`` on
    ``[1e-14, mu_1]``.  ``n_eff`` replaces the exact effective dimension in
    the general rule (for instance by the trivial bound ``kappa**2/lam``).
    """
    _check_rule_args(p, q, m)
    if rule == "trivial":
        return float(m ** (-(p + 1.0) / (2.0 * p + q + 1.0)))
    if rule == "poly":
        if b is None or not 0.0 < b < 1.0:
            raise ValueError("poly rule needs b in (0, 1)")
        return float(m ** (-(p + 1.0) / (p + q + b * (p + 1.0))))
    if rule == "log":
        return float((math.log(m) / m) ** ((p + 1.0) / (p + q)))
    if rule != "theta_general":
        raise ValueError(f"unknown rule {rule!r}, expected one of {RULES}")

    if mu is None:
        raise ValueError("theta_general rule needs the kernel eigenvalues")
    mu = np.asarray(mu, dtype=float)
    if n_eff is None:
        n_eff = lambda lam: effective_dimension(mu, lam)  # noqa: E731
    target = 1.0 / math.sqrt(m)
    lo, hi = math.log(1e-14), math.log(float(mu[0]))
    g = lambda t: theta_function(math.exp(t), p, q, n_eff) - target  # noqa: E731
    if g(lo) > 0 or g(hi) < 0:
        raise ValueError(f"theta equation has no root in [1e-14, {mu[0]:.3g}] for m={m}")
    while hi - lo > rtol:
        mid = 0.5 * (lo + hi)
        if g(mid) < 0:
            lo = mid
        else:
            hi = mid
    return float(math.exp(0.5 * (lo + hi)))


@dataclass(frozen=True)
class ConditionCheck:
    holds: bool
    dimension_slack: float  # m * lam - N(lam)
    level_slack: float  # min(1, ||T_nu||) - lam


def parameter_condition(lam: float, m: float, mu: np.ndarray) -> ConditionCheck:
    """``N(lam) <= m lam`` and ``lam <= min(1, ||T_nu||)``."""
    mu = np.asarray(mu, dtype=float)
    dim = m * lam - effective_dimension(mu, lam)
    level = min(1.0, float(mu.max())) - lam
    return ConditionCheck(dim >= 0 and level >= 0, float(dim), float(level))
