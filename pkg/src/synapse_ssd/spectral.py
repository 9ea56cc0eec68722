"""Cosine eigenbasis of the Neumann diffusion operator on ``[0, a]``.

Mode ``mu`` has wavenumber ``gamma = mu * pi / a``, eigenvalue
``s = -D gamma**2`` and normalisation ``a`` (``mu = 0``) or ``a / 2``. The
primal eigenfunction is ``[cos(gamma x), D gamma sin(gamma x)]`` (concentration,
flux); its dual has ``cos(gamma x)`` as second entry, which is all the boundary
and source projections need.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OutOfDomain


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    a: float
    D: float
    Q: int
    gamma: np.ndarray
    s: np.ndarray
    N: np.ndarray
    c1_at_a: np.ndarray
    c2tilde_at_a: np.ndarray

    @property
    def Ka_tilde(self) -> np.ndarray:
        """Rank-one adsorption projection ``c2tilde(a) c1(a)^T``."""
        return np.outer(self.c2tilde_at_a, self.c1_at_a)

    @property
    def Kd_tilde(self) -> np.ndarray:
        return self.c2tilde_at_a

    def exp_AT(self, T: float) -> np.ndarray:
        """Diagonal of ``exp(A T)``, one factor per mode."""
        return np.exp(self.s * T)


def build_basis(geometry, D: float, Q: int) -> SpectralBasis:
    a = float(geometry.a if hasattr(geometry, "a") else geometry)
    Q = int(Q)
    if Q < 1 or a <= 0 or D <= 0:
        raise ValueError(f"need Q >= 1, a > 0, D > 0 (got Q={Q}, a={a}, D={D})")
    mu = np.arange(Q)
    gamma = mu * np.pi / a
    s = -D * gamma**2
    norm = np.full(Q, a / 2.0)
    norm[0] = a
    # cos(mu*pi) evaluated in floating point is not exactly +-1
    sign = np.where(mu % 2 == 0, 1.0, -1.0)
    for arr in (gamma, s, norm, sign):
        arr.flags.writeable = False
    c1 = sign / norm
    c1.flags.writeable = False
    return SpectralBasis(a, float(D), Q, gamma, s, norm, c1, sign)


def _check_x(x, a):
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0) or np.any(xa > a) or not np.all(np.isfinite(xa)):
        raise OutOfDomain(f"x must lie in [0, {a}]")
    return xa


def eval_K(mu: int, x, basis: SpectralBasis, D: float | None = None) -> np.ndarray:
    """Primal eigenfunction ``[cos(gamma x), D gamma sin(gamma x)]`` of mode ``mu``."""
    xa = _check_x(x, basis.a)
    D = basis.D if D is None else D
    g = basis.gamma[mu]
    return np.array([np.cos(g * xa), D * g * np.sin(g * xa)])


def project_release(N: float, x0: float, basis: SpectralBasis) -> np.ndarray:
    """Mode coefficients injected by ``N`` molecules released at ``x0``."""
    _check_x(x0, basis.a)
    if x0 == 0.0:
        return np.full(basis.Q, float(N))
    return N * np.cos(basis.gamma * x0)


def output_concentration(ybar, x, basis: SpectralBasis):
    """Concentration ``sum_mu ybar_mu cos(gamma_mu x) / N_mu`` at ``x`` (scalar or array)."""
    xa = _check_x(x, basis.a)
    ybar = np.asarray(ybar, dtype=float)
    q = ybar.shape[-1]
    w = ybar / basis.N[:q]
    if xa.ndim == 0:
        if float(xa) == basis.a:
            return float(w @ basis.c2tilde_at_a[:q])
        return float(w @ np.cos(basis.gamma[:q] * xa))
    return np.cos(np.multiply.outer(xa, basis.gamma[:q])) @ w
