"""Nonlinear forward operators ``A: H -> H'`` with Frechet derivatives.

The smoothing part is the diagonal map ``D`` with entries
``d_j = j**(-a p) / sqrt(mu_j)``, chosen so that ``||I_nu D h||_{L^2}`` equals
``||h||_{H_{-p}}`` exactly.  The Hammerstein operator is

    A(f) = D (f + c * P(f * f)),    A'(f) h = D (h + 2 c * P(f * h)),

where ``P`` projects a pointwise product back onto the first ``n`` modes.  The
product is formed pseudo-spectrally on a uniform grid large enough that the
projection is exact (no aliasing for trigonometric polynomials).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .testbed import TestbedSpec, basis_matrix

logger = logging.getLogger(__name__)

__all__ = [
    "ForwardOp",
    "LinkEstimate",
    "ConstantEstimate",
    "operator_norm",
    "estimate_constants",
    "link_check",
]

KINDS = ("diagonal_linear", "hammerstein")


@dataclass(frozen=True, eq=False)
class ForwardOp:
    """Diagonal-linear or Hammerstein forward operator on a testbed.

    Parameters
    ----------
    spec : TestbedSpec
    p : float
        Smoothing degree in the link condition.
    c : float
        Strength of the quadratic term; ``kind="diagonal_linear"`` forces 0.
    grid_size : int, optional
        Collocation points for pointwise products, default ``4 n``.
    center, radius : optional
        Domain ball ``||f - center||_H <= radius``.  Leaving the ball is
        logged, not fatal, since line searches may probe outside it.
    """

    spec: TestbedSpec
    p: float = 1.0
    c: float = 0.1
    kind: str = "hammerstein"
    grid_size: int | None = None
    center: np.ndarray | None = field(default=None, repr=False)
    radius: float = 10.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}, expected one of {KINDS}")
        if self.kind == "diagonal_linear":
            object.__setattr__(self, "c", 0.0)
        if not self.p > 0:
            raise ValueError("smoothing degree p must be positive")
        if self.c < 0:
            raise ValueError("nonlinearity strength c must be nonnegative")
        if np.any(self.spec.mu <= 0):
            raise ValueError("forward operator needs strictly positive kernel eigenvalues")
        G = 4 * self.spec.n if self.grid_size is None else int(self.grid_size)
        # products of modes up to n//2 projected on modes up to n//2
        if G <= 3 * (self.spec.n // 2):
            raise ValueError(f"grid_size {G} aliases; need more than {3 * (self.spec.n // 2)} points")
        object.__setattr__(self, "grid_size", G)
        if self.center is not None:
            object.__setattr__(self, "center", np.asarray(self.center, dtype=float))

    @classmethod
    def from_dict(cls, spec: TestbedSpec, data: dict) -> "ForwardOp":
        return cls(
            spec,
            p=float(data.get("p", 1.0)),
            c=float(data.get("c", 0.1)),
            kind=data.get("kind", "hammerstein"),
            grid_size=data.get("grid_size"),
            radius=float(data.get("radius", 10.0)),
        )

    def to_dict(self) -> dict:
        return {"kind": self.kind, "p": self.p, "c": self.c, "grid_size": self.grid_size, "radius": self.radius}

    def with_center(self, center: np.ndarray) -> "ForwardOp":
        return ForwardOp(self.spec, self.p, self.c, self.kind, self.grid_size, center, self.radius)

    # -- precomputed tables -------------------------------------------------

    @cached_property
    def smoothing(self) -> np.ndarray:
        """``j**(-a p)``: the weight of ``H_{-p}`` and of ``I_nu D``."""
        return self.spec.scale_weights(-self.p)

    @cached_property
    def d(self) -> np.ndarray:
        return self.smoothing / np.sqrt(self.spec.mu)

    @cached_property
    def _grid_phi(self) -> np.ndarray:
        x = np.arange(self.grid_size) / self.grid_size
        return basis_matrix(self.spec.n, x)

    # -- pseudo-spectral products --------------------------------------------

    def product(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Coefficients of ``P(u * v)`` for functions given by coefficients."""
        phi = self._grid_phi
        return phi.T @ ((phi @ u) * (phi @ v)) / self.grid_size

    def multiplication_matrix(self, f: np.ndarray) -> np.ndarray:
        """Matrix of ``h -> P(f * h)``; entries ``<f phi_k, phi_j>``."""
        phi = self._grid_phi
        return (phi.T * (phi @ f)) @ phi / self.grid_size

    # -- operator ---------------------------------------------------------------

    def _check_domain(self, f: np.ndarray) -> None:
        if f.shape != (self.spec.n,):
            raise ValueError(f"expected {self.spec.n} coefficients, got shape {f.shape}")
        if self.center is not None:
            dist = float(np.linalg.norm(f - self.center))
            if dist > self.radius:
                logger.warning("evaluating outside the domain ball: distance %.3g > radius %.3g", dist, self.radius)

    def apply(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        self._check_domain(f)
        if self.c == 0:
            return self.d * f
        return self.d * (f + self.c * self.product(f, f))

    def frechet_apply(self, f: np.ndarray, h: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        h = np.asarray(h, dtype=float)
        self._check_domain(f)
        if self.c == 0:
            return self.d * h
        return self.d * (h + 2.0 * self.c * self.product(f, h))

    def derivative_matrix(self, f: np.ndarray) -> np.ndarray:
        """``A'(f)`` as an n x n matrix from H coordinates to H' coordinates."""
        f = np.asarray(f, dtype=float)
        self._check_domain(f)
        B = np.eye(self.spec.n)
        if self.c != 0:
            B += 2.0 * self.c * self.multiplication_matrix(f)
        return self.d[:, None] * B

    def sampled_jacobian_core(self, f: np.ndarray) -> np.ndarray:
        """``diag(sqrt(mu)) A'(f)``; left-multiplying by the feature table gives ``S_x A'(f)``."""
        return np.sqrt(self.spec.mu)[:, None] * self.derivative_matrix(f)

    def l2_norm(self, g: np.ndarray) -> float:
        """``||I_nu g||_{L^2}`` for ``g`` in H' coordinates."""
        return float(np.linalg.norm(np.sqrt(self.spec.mu) * g))

    def linearization_residual(self, f: np.ndarray, f_ref: np.ndarray) -> tuple[float, float]:
        """H' norm and L^2 norm of ``A(f) - A(f_ref) - A'(f_ref)(f - f_ref)``."""
        f = np.asarray(f, dtype=float)
        f_ref = np.asarray(f_ref, dtype=float)
        if self.c == 0:
            return 0.0, 0.0
        r = self.apply(f) - self.apply(f_ref) - self.frechet_apply(f_ref, f - f_ref)
        return float(np.linalg.norm(r)), self.l2_norm(r)


def operator_norm(
    matvec, rmatvec, n: int, rtol: float = 1e-6, max_iter: int = 10_000, v0=None, block: int = 8
) -> float:
    """Largest singular value by block power iteration on ``B^T B``.

    ``matvec`` and ``rmatvec`` must accept ``(n, k)`` blocks.  Each sweep
    applies ``B^T B`` to an orthonormal block followed by a Rayleigh-Ritz step,
    and stops once the top Ritz pair has eigen-residual
    ``||B^T B v - theta v|| <= rtol * theta``.  For a symmetric matrix that
    residual bounds the distance from ``theta`` to the spectrum, so the result
    is accurate to about ``rtol / 2`` relative.  The block makes the rate depend
    on the gap to the ``block + 1``-st singular value, which keeps clustered
    leading values (cosine/sine pairs) cheap.
    """
    k = min(block, n)
    rng = np.random.default_rng(20240611)
    V = rng.standard_normal((n, k))
    if v0 is not None:
        v0 = np.asarray(v0, dtype=float)
        if np.linalg.norm(v0) == 0:
            raise ValueError("zero start vector")
        V[:, 0] = v0
    V, _ = np.linalg.qr(V)
    theta = 0.0
    for _ in range(max_iter):
        W = rmatvec(matvec(V))
        H = V.T @ W
        evals, evecs = np.linalg.eigh(0.5 * (H + H.T))
        theta = float(evals[-1])
        if theta <= 0.0:
            return 0.0
        v, w = V @ evecs[:, -1], W @ evecs[:, -1]
        if np.linalg.norm(w - theta * v) <= rtol * theta:
            return float(np.sqrt(theta))
        V, _ = np.linalg.qr(W @ evecs[:, ::-1])
    logger.warning("power iteration stopped after %d steps without reaching rtol=%g", max_iter, rtol)
    return float(np.sqrt(theta))


@dataclass(frozen=True)
class LinkEstimate:
    alpha_hat: float
    beta_hat: float
    trials: int


@dataclass(frozen=True)
class ConstantEstimate:
    J_hat: float
    gamma_hat: float
    link: LinkEstimate
    radius: float

    @property
    def small_nonlinearity(self) -> bool:
        """Whether ``gamma * radius <= alpha**2 / (2 beta)``."""
        return self.gamma_hat * self.radius <= self.link.alpha_hat**2 / (2.0 * self.link.beta_hat)


def _random_directions(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    u = rng.standard_normal((count, n))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def link_check(op: ForwardOp, f_ref: np.ndarray, trials: int, rng: np.random.Generator | None = None) -> LinkEstimate:
    """Empirical link constants: extreme ratios ``||I_nu A'(f_ref) g|| / ||g||_{-p}``."""
    if trials < 1:
        raise ValueError("trials must be positive")
    rng = np.random.default_rng(0) if rng is None else rng
    g = rng.standard_normal((trials, op.spec.n))
    return link_ratios_estimate(op, f_ref, g)


def link_ratio(op: ForwardOp, f_ref: np.ndarray, g: np.ndarray) -> float:
    g = np.asarray(g, dtype=float)
    denom = float(np.linalg.norm(op.smoothing * g))
    if denom == 0.0:
        raise ValueError("link ratio undefined for g = 0")
    return op.l2_norm(op.frechet_apply(f_ref, g)) / denom


def link_ratios_estimate(op: ForwardOp, f_ref: np.ndarray, gs: np.ndarray) -> LinkEstimate:
    ratios = np.array([link_ratio(op, f_ref, g) for g in np.atleast_2d(gs)])
    return LinkEstimate(float(ratios.min()), float(ratios.max()), ratios.size)


def lipschitz_ratio(op: ForwardOp, f_ref: np.ndarray, f: np.ndarray) -> float:
    """``||I_nu (A'(f_ref) - A'(f))||_{H_{-p} -> L^2} / ||f_ref - f||_H``.

    On coefficients this is the spectral norm of ``2c W M_delta W^{-1}`` with
    ``W = diag(j**(-a p))``, since both the L^2 norm of ``I_nu D u`` and the
    ``H_{-p}`` norm are weighted by ``W``.
    """
    delta = np.asarray(f_ref, dtype=float) - np.asarray(f, dtype=float)
    dist = float(np.linalg.norm(delta))
    if dist == 0.0 or op.c == 0:
        return 0.0
    w = op.smoothing
    M = 2.0 * op.c * op.multiplication_matrix(delta)
    K = (w[:, None] * M) / w[None, :]
    return float(np.linalg.norm(K, 2)) / dist


def estimate_constants(
    op: ForwardOp,
    f_ref: np.ndarray,
    trials: int = 100,
    radius: float = 0.1,
    rng: np.random.Generator | None = None,
    points: np.ndarray | None = None,
) -> ConstantEstimate:
    """Sampled derivative bound J and Lipschitz constant gamma near ``f_ref``.

    Draws ``trials`` points uniformly on the sphere of the given radius around
    ``f_ref`` (plus any explicit ``points``) and takes maxima of
    ``||A'(f)||_{H -> H'}`` and of :func:`lipschitz_ratio`.  The link
    constants at ``f_ref`` come from the same number of random directions.
    The matrices are explicit, so their spectral norms are computed densely;
    the derivative is close to a multiple of the identity and its clustered
    singular values would stall any power-type iteration.
    """
    if trials < 1 and points is None:
        raise ValueError("trials must be positive")
    rng = np.random.default_rng(0) if rng is None else rng
    f_ref = np.asarray(f_ref, dtype=float)
    n = op.spec.n
    samples = [f_ref + radius * u for u in _random_directions(n, trials, rng)] if trials > 0 else []
    if points is not None:
        samples.extend(np.atleast_2d(points))
    J_hat = 0.0
    gamma_hat = 0.0
    for f in samples:
        Bm = op.derivative_matrix(f)
        J_hat = max(J_hat, float(np.linalg.norm(Bm, 2)))
        gamma_hat = max(gamma_hat, lipschitz_ratio(op, f_ref, f))
    link = link_check(op, f_ref, max(trials, 1), rng)
    return ConstantEstimate(J_hat, gamma_hat, link, radius)
