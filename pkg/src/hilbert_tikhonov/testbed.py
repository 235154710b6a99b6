"""Spectral testbed shared by every other module.

Everything lives in the trigonometric basis of L^2([0, 1]) with the uniform
marginal::

    phi_1(x)      = 1
    phi_{2k}(x)   = sqrt(2) cos(2 pi k x)
    phi_{2k+1}(x) = sqrt(2) sin(2 pi k x)

Elements of H are coefficient vectors with respect to ``phi_1..phi_n``.
Elements of H' (the RKHS of the kernel) are coefficient vectors with respect
to its orthonormal system ``sqrt(mu_j) phi_j``.  In both cases a "coefficient
vector" is a plain 1-D float ndarray of length ``n``; which space it belongs
to is fixed by the function that consumes it.

The Hilbert-scale generator ``L`` is diagonal with eigenvalues ``j**a``, so
``||f||_s^2 = sum_j j**(2 a s) f_j**2`` for every real ``s``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

import numpy as np

__all__ = [
    "TestbedSpec",
    "basis_eval",
    "basis_matrix",
    "hs_norm",
    "apply_L_power",
    "interpolation_gap",
]


@dataclass(frozen=True)
class TestbedSpec:
    """Basis size, Hilbert-scale exponent and kernel eigenvalue law.

    Parameters
    ----------
    n : int
        Number of basis functions kept.
    a : float
        Exponent of the scale generator, ``ell_j = j**a``.
    mu_law : dict
        Either ``{"kind": "polynomial", "mu0": mu0, "b": b}`` giving
        ``mu_j = mu0 * j**(-1/b)``, or ``{"kind": "explicit", "values": [...]}``
        with exactly ``n`` entries.
    """

    __test__ = False  # keep pytest from collecting this as a test class

    n: int = 200
    a: float = 1.0
    mu_law: dict = field(default_factory=lambda: {"kind": "polynomial", "mu0": 1.0, "b": 0.5})

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"basis size n must be a positive integer, got {self.n!r}")
        if not self.a > 0:
            raise ValueError(f"scale exponent a must be positive, got {self.a!r}")
        mu = self.mu
        if mu.shape != (self.n,):
            raise ValueError(f"mu_law yields {mu.size} eigenvalues, expected n={self.n}")
        if not np.all(np.isfinite(mu)) or np.any(mu < 0) or mu[0] <= 0:
            raise ValueError("kernel eigenvalues must be finite, nonnegative, with mu_1 > 0")
        if np.any(np.diff(mu) > 0):
            raise ValueError("kernel eigenvalues must be non-increasing")

    @cached_property
    def mu(self) -> np.ndarray:
        law = self.mu_law
        kind = law.get("kind")
        if kind == "polynomial":
            b = float(law["b"])
            if not b > 0:
                raise ValueError(f"polynomial decay needs b > 0, got {b}")
            mu = float(law.get("mu0", 1.0)) * self.index ** (-1.0 / b)
        elif kind == "explicit":
            mu = np.asarray(law["values"], dtype=float)
        else:
            raise ValueError(f"unknown mu_law kind {kind!r}")
        mu.setflags(write=False)
        return mu

    @cached_property
    def index(self) -> np.ndarray:
        """Basis indices ``1..n`` as floats."""
        j = np.arange(1, self.n + 1, dtype=float)
        j.setflags(write=False)
        return j

    @cached_property
    def ell(self) -> np.ndarray:
        """Eigenvalues ``j**a`` of the scale generator."""
        out = self.index ** self.a
        out.setflags(write=False)
        return out

    def scale_weights(self, s: float) -> np.ndarray:
        """Diagonal of ``L**s``."""
        return self.index ** (self.a * s)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.n)

    def unit(self, j: int) -> np.ndarray:
        """Coefficient vector of the j-th basis element (1-based)."""
        _check_index(self, j)
        e = np.zeros(self.n)
        e[j - 1] = 1.0
        return e

    def with_updates(self, **changes: Any) -> "TestbedSpec":
        data = self.to_dict()
        data.update(changes)
        return TestbedSpec.from_dict(data)

    def to_dict(self) -> dict:
        return {"n": int(self.n), "a": float(self.a), "mu_law": dict(self.mu_law)}

    @classmethod
    def from_dict(cls, data: dict) -> "TestbedSpec":
        law = dict(data.get("mu_law", {"kind": "polynomial", "mu0": 1.0, "b": 0.5}))
        if law.get("kind") == "explicit":
            law["values"] = [float(v) for v in law["values"]]
        return cls(n=int(data.get("n", 200)), a=float(data.get("a", 1.0)), mu_law=law)


def _check_index(spec: TestbedSpec, j: int) -> None:
    if not 1 <= j <= spec.n:
        raise IndexError(f"basis index {j} outside 1..{spec.n}")


def _check_points(x: np.ndarray) -> None:
    if np.any(~np.isfinite(x)) or np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError("points must lie in [0, 1]")


def basis_eval(spec: TestbedSpec, j: int, x):
    """Evaluate ``phi_j`` at ``x`` (scalar or array)."""
    _check_index(spec, j)
    xa = np.asarray(x, dtype=float)
    _check_points(xa)
    k = j // 2
    if j == 1:
        out = np.ones_like(xa)
    elif j % 2 == 0:
        out = np.sqrt(2.0) * np.cos(2.0 * np.pi * k * xa)
    else:
        out = np.sqrt(2.0) * np.sin(2.0 * np.pi * k * xa)
    return float(out) if out.ndim == 0 else out


def basis_matrix(n: int, x: np.ndarray) -> np.ndarray:
    """Feature table ``Phi[i, j-1] = phi_j(x_i)`` of shape ``(len(x), n)``."""
    x = np.asarray(x, dtype=float).ravel()
    _check_points(x)
    out = np.empty((x.size, n))
    out[:, 0] = 1.0
    k = np.arange(1, n // 2 + 1)
    arg = 2.0 * np.pi * np.outer(x, k)
    out[:, 1::2] = np.sqrt(2.0) * np.cos(arg)[:, : n // 2]
    out[:, 2::2] = np.sqrt(2.0) * np.sin(arg)[:, : (n - 1) // 2]
    return out


def hs_norm(spec: TestbedSpec, f: np.ndarray, s: float) -> float:
    """Norm of ``f`` in the scale space ``H_s``."""
    f = np.asarray(f, dtype=float)
    return float(np.linalg.norm(spec.scale_weights(s) * f))


def apply_L_power(spec: TestbedSpec, f: np.ndarray, s: float) -> np.ndarray:
    return spec.scale_weights(s) * np.asarray(f, dtype=float)


def interpolation_gap(spec: TestbedSpec, f: np.ndarray, t: float, r: float, s: float) -> float:
    """Right-hand side minus left-hand side of the interpolation inequality.

    Returns ``||f||_t**((s-r)/(s-t)) * ||f||_s**((r-t)/(s-t)) - ||f||_r``,
    which is nonnegative up to round-off for every ``f`` and ``t < r < s``.
    """
    if not t < r < s:
        raise ValueError(f"need t < r < s, got t={t}, r={r}, s={s}")
    nt, nr, ns = (hs_norm(spec, f, v) for v in (t, r, s))
    theta = (s - r) / (s - t)
    return float(nt**theta * ns ** (1.0 - theta) - nr)
