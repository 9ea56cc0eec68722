"""Finite-volume Crank-Nicolson reference solver for the 1-D cleft.

Cells of width ``h = a / M`` with ghost-cell closures: zero flux at ``x = 0``
and an imposed outward flux ``p`` at ``x = a``. The boundary concentration is
the ghost-cell average ``c(a) = c[M-1] - h p / (2 D)``, which makes the Robin
flux ``p = kh_a c(a) - kh_d`` linear in the last cell value. The coefficients
``kh_a = kappa_a (1 - i_hat / C*)`` and ``kh_d = kappa_d i_hat`` are frozen at
the start of each step, the same one-step lag the spectral recursion uses.
Degradation sits in the implicit operator. The bound count accumulates the
trapezoidal boundary flux, so solute plus bound mass is conserved exactly
when degradation is off.

Point releases are injected as ``N / h`` into the first cell. Crank-Nicolson
rings on such data at large diffusion numbers, so the first
``n_smoothing`` steps after each release are backward Euler.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from . import _backend
from .core import ModelConfig, config_hash, validate
from .errors import Divergence, NonMonotoneConvergence, ValidationError
from .series import TimeSeries

DIVERGENCE_LIMIT = 1e12


@dataclass(frozen=True)
class FdGrid:
    M: int = 256
    dt_fd: float = 0.0375
    n_smoothing: int = 2

    def __post_init__(self):
        if self.M < 16:
            raise ValidationError(f"FdGrid needs M >= 16, got {self.M}")
        if not self.dt_fd > 0:
            raise ValidationError(f"dt_fd must be > 0, got {self.dt_fd}")

    def h(self, a):
        return a / self.M

    def diffusion_number(self, a, D):
        return D * self.dt_fd / self.h(a) ** 2


@_backend.njit
def _fd_kernel(M, h, dt, D, kappa_e, kappa_a, kappa_d, inv_cstar, rel_idx, rel_amt,
               n_steps, n_smooth, out_bound, out_ca, out_mass):
    c = np.zeros(M)
    sub = np.empty(M)
    diag = np.empty(M)
    sup = np.empty(M)
    rhs = np.empty(M)
    cp = np.empty(M)
    dp = np.empty(M)
    rr = D * dt / (h * h)
    ihat = 0.0
    r = 0
    n_rel = rel_idx.shape[0]
    smooth_left = 0
    while r < n_rel and rel_idx[r] == 0:
        c[0] += rel_amt[r]
        r += 1
        smooth_left = n_smooth
    out_bound[0] = 0.0
    out_ca[0] = c[M - 1]
    out_mass[0] = np.sum(c) * h
    for n in range(n_steps):
        theta = 1.0 if smooth_left > 0 else 0.5
        if smooth_left > 0:
            smooth_left -= 1
        kha = kappa_a * (1.0 - ihat * inv_cstar)
        khd = kappa_d * ihat
        g = 1.0 / (1.0 + kha * h / (2.0 * D))
        beta = kha * g
        delta = khd * g
        ex = 1.0 - theta
        for i in range(M):
            left = c[i - 1] if i > 0 else c[i]
            right = c[i + 1] if i < M - 1 else c[i]
            rhs[i] = c[i] + ex * (rr * (left - 2.0 * c[i] + right) - dt * kappa_e * c[i])
            sub[i] = -theta * rr
            sup[i] = -theta * rr
            diag[i] = 1.0 + 2.0 * theta * rr + theta * dt * kappa_e
        diag[0] -= theta * rr
        diag[M - 1] -= theta * rr
        diag[M - 1] += theta * dt * beta / h
        p_old = beta * c[M - 1] - delta
        rhs[M - 1] -= dt / h * (ex * beta * c[M - 1] - delta)
        # Thomas
        cp[0] = sup[0] / diag[0]
        dp[0] = rhs[0] / diag[0]
        for i in range(1, M):
            den = diag[i] - sub[i] * cp[i - 1]
            cp[i] = sup[i] / den
            dp[i] = (rhs[i] - sub[i] * dp[i - 1]) / den
        c[M - 1] = dp[M - 1]
        for i in range(M - 2, -1, -1):
            c[i] = dp[i] - cp[i] * c[i + 1]
        p_new = beta * c[M - 1] - delta
        ihat = ihat + dt * (theta * p_new + ex * p_old)
        while r < n_rel and rel_idx[r] == n + 1:
            c[0] += rel_amt[r]
            r += 1
            smooth_left = n_smooth
        mass = 0.0
        for i in range(M):
            mass += c[i]
        mass *= h
        ca = c[M - 1] - h * p_new / (2.0 * D)
        if not (abs(ihat) < 1e12 and abs(mass) < 1e12 and abs(ca) < 1e12):
            return n + 1
        out_bound[n + 1] = ihat
        out_ca[n + 1] = ca
        out_mass[n + 1] = mass
    return 0


def _fd_numpy(M, h, dt, D, kappa_e, kappa_a, kappa_d, inv_cstar, rel_idx, rel_amt,
              n_steps, n_smooth, out_bound, out_ca, out_mass):
    c = np.zeros(M)
    rr = D * dt / (h * h)
    ihat = 0.0
    r = 0
    n_rel = rel_idx.shape[0]
    smooth_left = 0
    while r < n_rel and rel_idx[r] == 0:
        c[0] += rel_amt[r]
        r += 1
        smooth_left = n_smooth
    out_bound[0], out_ca[0], out_mass[0] = 0.0, c[M - 1], c.sum() * h
    ab = np.empty((3, M))
    for n in range(n_steps):
        theta = 1.0 if smooth_left > 0 else 0.5
        smooth_left = max(smooth_left - 1, 0)
        kha = kappa_a * (1.0 - ihat * inv_cstar)
        khd = kappa_d * ihat
        g = 1.0 / (1.0 + kha * h / (2.0 * D))
        beta, delta = kha * g, khd * g
        ex = 1.0 - theta
        padded = np.concatenate(([c[0]], c, [c[-1]]))
        rhs = c + ex * (rr * (padded[:-2] - 2.0 * c + padded[2:]) - dt * kappa_e * c)
        diag = np.full(M, 1.0 + 2.0 * theta * rr + theta * dt * kappa_e)
        diag[0] -= theta * rr
        diag[-1] -= theta * rr
        diag[-1] += theta * dt * beta / h
        p_old = beta * c[-1] - delta
        rhs[-1] -= dt / h * (ex * beta * c[-1] - delta)
        ab[0, :] = -theta * rr
        ab[1, :] = diag
        ab[2, :] = -theta * rr
        c = solve_banded((1, 1), ab, rhs, overwrite_b=True, check_finite=False)
        p_new = beta * c[-1] - delta
        ihat = ihat + dt * (theta * p_new + ex * p_old)
        while r < n_rel and rel_idx[r] == n + 1:
            c[0] += rel_amt[r]
            r += 1
            smooth_left = n_smooth
        mass = c.sum() * h
        ca = c[-1] - h * p_new / (2.0 * D)
        if not (abs(ihat) < 1e12 and abs(mass) < 1e12 and abs(ca) < 1e12):
            return n + 1
        out_bound[n + 1], out_ca[n + 1], out_mass[n + 1] = ihat, ca, mass
    return 0


def solve_raw(config: ModelConfig, grid: FdGrid = FdGrid(), backend=None):
    """Run the scheme and return ``(times, bound, c_at_a, mass)`` on its own time grid."""
    config = validate(config, allow_empty=True)
    backend = _backend.resolve(backend)
    kin, a = config.kinetics, config.geometry.a
    h, dt = grid.h(a), grid.dt_fd
    n_steps = int(round(config.disc.t_end / dt))
    rel_idx = np.array([int(round(t / dt)) for t, _ in config.schedule.events], dtype=np.int64)
    rel_amt = np.array([n / h for _, n in config.schedule.events], dtype=float)
    out = np.zeros((3, n_steps + 1))
    inv_cstar = 1.0 / kin.C_star if config.saturation_enabled else 0.0
    kern = _fd_kernel if backend == "numba" else _fd_numpy
    bad = kern(grid.M, h, dt, kin.D, kin.kappa_e_CE, kin.kappa_a, kin.kappa_d, inv_cstar,
               rel_idx, rel_amt, n_steps, grid.n_smoothing, out[0], out[1], out[2])
    if bad:
        raise Divergence(
            f"finite-difference solution exceeded {DIVERGENCE_LIMIT:g} at step {bad} "
            f"(dt_fd={dt}, M={grid.M})"
        )
    return np.arange(n_steps + 1) * dt, out[0], out[1], out[2]


def solve(config: ModelConfig, grid: FdGrid = FdGrid(), backend=None) -> TimeSeries:
    """Solve on ``grid`` and resample linearly onto the SSD sampling grid."""
    config = validate(config, allow_empty=True)
    t0 = time.perf_counter()
    t, bound, ca, mass = solve_raw(config, grid, backend)
    elapsed = time.perf_counter() - t0
    disc = config.disc
    n_out = disc.n_steps // disc.output_stride + 1
    times = np.arange(n_out) * disc.output_stride * disc.T
    times = times[times <= t[-1] * (1 + 1e-12)]
    return TimeSeries(
        times,
        np.interp(times, t, bound),
        np.interp(times, t, ca),
        np.interp(times, t, mass),
        metadata={
            "solver": "oracle",
            "config_hash": config_hash(config),
            "backend": _backend.resolve(backend),
            "M": grid.M,
            "dt_fd": grid.dt_fd,
            "diffusion_number": grid.diffusion_number(config.geometry.a, config.kinetics.D),
            "runtime_s": elapsed,
        },
    )


def default_ladder(T, levels=3, M0=64, refine_dt0=2):
    """``(M, dt_fd)`` pairs doubling ``M`` and halving ``dt_fd`` per level."""
    return [(M0 * 2**j, T / (refine_dt0 * 2**j)) for j in range(levels)]


def convergence_study(config: ModelConfig, ladder=None, backend=None, rtol=1e-12):
    """Successive max-norm differences of the bound count along a refinement ladder.

    Raises :class:`NonMonotoneConvergence` if a difference grows. The finest
    level's solution is returned as ``report["reference"]``.
    """
    config = validate(config, allow_empty=True)
    ladder = default_ladder(config.disc.T) if ladder is None else list(ladder)
    if len(ladder) < 3:
        raise ValidationError("a convergence study needs at least three levels")
    sols = [solve(config, FdGrid(int(M), float(dt)), backend) for M, dt in ladder]
    diffs = [float(np.max(np.abs(b.bound - a.bound))) for a, b in zip(sols, sols[1:])]
    ratios = [d0 / d1 if d1 > 0 else float("inf") for d0, d1 in zip(diffs, diffs[1:])]
    scale = max(float(np.max(np.abs(s.bound))) for s in sols)
    for d0, d1 in zip(diffs, diffs[1:]):
        if d1 > d0 + rtol * scale:
            raise NonMonotoneConvergence(f"refinement differences {diffs} do not decrease")
    return {
        "levels": [(int(M), float(dt)) for M, dt in ladder],
        "diffs": diffs,
        "ratios": ratios,
        "reference": sols[-1],
    }
