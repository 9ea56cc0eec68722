"""Discrete-time state-space recursion over the cosine-mode coefficients.

One step maps the coefficient vector ``ybar[k]`` and the bound count
``i_hat[k]`` to step ``k + 1``::

    p[k+1]    = kappa_a (1 - i_hat[k] / C*) c(a, k) - kappa_d i_hat[k]
    ybar[k+1] = exp(-kappa_e C_E T) exp(A T) ybar[k] - T p[k+1] c2(a) + T f[k+1]
    i_hat[k+1] = i_hat[k] + T p[k+1]

``c(a, k) = c1(a) . ybar[k]`` and ``c2(a)`` has entries ``(-1)**mu``. The
saturation feedback is explicit: coefficients built from step ``k`` drive the
update to ``k + 1``. A release of ``N`` molecules at ``x0`` on grid index ``k``
adds ``N cos(gamma x0)`` to ``ybar[k]`` (so ``T f[k]`` carries exactly ``N``).

The truncated series of a freshly injected point release is a Dirichlet
kernel whose value at ``x = a`` is of order ``N / a`` in magnitude, while the
true concentration there is still zero. The boundary feedback therefore reads
``c(a, k)`` without the release injected at ``k``; the release reaches the
boundary through the diffused modes from step ``k + 1`` on. The reported
output ``c_at_a`` is the plain output equation.
"""

from __future__ import annotations

import dataclasses
import math
import time

import numpy as np

from . import _backend
from .core import ModelConfig, config_hash, release_indices, validate
from .errors import NonFiniteState
from .series import TimeSeries
from .spectral import SpectralBasis, build_basis, project_release

_LIMIT = 1e300


@dataclasses.dataclass
class SsdState:
    k: int
    ybar: np.ndarray
    i_hat: float
    p_prev: float
    # c1(a) . (release injected at k); excluded from the next boundary feedback
    c_release: float = 0.0


def init(config: ModelConfig, basis: SpectralBasis) -> SsdState:
    return SsdState(k=0, ybar=np.zeros(basis.Q), i_hat=0.0, p_prev=0.0)


def bound_count(state: SsdState) -> float:
    return state.i_hat


def saturation_coefficients(i_hat, kinetics, saturation_enabled=True):
    """``(kappa_hat_a, kappa_hat_d)`` for the current bound count."""
    if saturation_enabled:
        kappa_hat_a = kinetics.kappa_a * (1.0 - i_hat / kinetics.C_star)
    else:
        kappa_hat_a = kinetics.kappa_a
    return kappa_hat_a, kinetics.kappa_d * i_hat


def _decay(config):
    rate = config.kinetics.kappa_e_CE if config.degradation_enabled else 0.0
    return math.exp(-rate * config.disc.T)


def update_matrix(basis: SpectralBasis, config: ModelConfig, kappa_hat_a: float) -> np.ndarray:
    """Dense one-step transition matrix acting on ``ybar`` (for inspection and tests)."""
    T = config.disc.T
    return _decay(config) * np.diag(basis.exp_AT(T)) - T * kappa_hat_a * basis.Ka_tilde


def inject(state: SsdState, N: float, basis: SpectralBasis, x0: float = 0.0) -> SsdState:
    """Add an impulsive release to the current state."""
    f = project_release(N, x0, basis)
    return dataclasses.replace(
        state,
        ybar=state.ybar + f,
        c_release=state.c_release + float(basis.c1_at_a @ f),
    )


def step(state: SsdState, basis: SpectralBasis, config: ModelConfig) -> SsdState:
    """Advance one sampling interval, including any release scheduled at ``k + 1``."""
    T = config.disc.T
    kin = config.kinetics
    c_a = float(basis.c1_at_a @ state.ybar) - state.c_release
    ka, kd = saturation_coefficients(state.i_hat, kin, config.saturation_enabled)
    p = ka * c_a - kd
    ybar = _decay(config) * basis.exp_AT(T) * state.ybar - (T * p) * basis.c2tilde_at_a
    i_hat = state.i_hat + T * p
    if not (np.isfinite(i_hat) and np.all(np.isfinite(ybar))) or abs(i_hat) > _LIMIT:
        raise NonFiniteState(f"state diverged at step {state.k + 1}; reduce T")
    new = SsdState(state.k + 1, ybar, i_hat, p)
    for (t, n), k in zip(config.schedule.events, release_indices(config.schedule, T)):
        if k == new.k:
            new = inject(new, n, basis, config.release_x)
    return new


@_backend.njit
def _run_kernel(factor, c1, c2, T, kappa_a, kappa_d, inv_cstar, c_star, clamp,
                rel_k, rel_f, n_steps, stride, out_bound, out_ca, out_mass):
    Q = factor.shape[0]
    y = np.zeros(Q)
    ihat = 0.0
    r = 0
    n_rel = rel_k.shape[0]
    crel = 0.0
    while r < n_rel and rel_k[r] == 0:
        for m in range(Q):
            y[m] += rel_f[r, m]
            crel += c1[m] * rel_f[r, m]
        r += 1
    ca = 0.0
    for m in range(Q):
        ca += c1[m] * y[m]
    out_bound[0] = 0.0
    out_ca[0] = ca
    out_mass[0] = y[0]
    for k in range(n_steps):
        ka = kappa_a * (1.0 - ihat * inv_cstar)
        p = ka * (ca - crel) - kappa_d * ihat
        tp = T * p
        for m in range(Q):
            y[m] = factor[m] * y[m] - tp * c2[m]
        crel = 0.0
        if r < n_rel and rel_k[r] == k + 1:
            for m in range(Q):
                y[m] += rel_f[r, m]
                crel += c1[m] * rel_f[r, m]
            r += 1
        ihat = ihat + tp
        if clamp:
            ihat = min(max(ihat, 0.0), c_star)
        ca = 0.0
        for m in range(Q):
            ca += c1[m] * y[m]
        if not (abs(ihat) < 1e300 and abs(ca) < 1e300):
            return k + 1
        if (k + 1) % stride == 0:
            j = (k + 1) // stride
            out_bound[j] = ihat
            out_ca[j] = ca
            out_mass[j] = y[0]
    return 0


def _run_numpy(factor, c1, c2, T, kappa_a, kappa_d, inv_cstar, c_star, clamp,
               rel_k, rel_f, n_steps, stride, out_bound, out_ca, out_mass):
    y = np.zeros(factor.shape[0])
    ihat = 0.0
    r = 0
    n_rel = rel_k.shape[0]
    crel = 0.0
    while r < n_rel and rel_k[r] == 0:
        y += rel_f[r]
        crel += float(c1 @ rel_f[r])
        r += 1
    ca = float(c1 @ y)
    out_bound[0], out_ca[0], out_mass[0] = 0.0, ca, y[0]
    for k in range(n_steps):
        p = kappa_a * (1.0 - ihat * inv_cstar) * (ca - crel) - kappa_d * ihat
        tp = T * p
        y = factor * y - tp * c2
        crel = 0.0
        if r < n_rel and rel_k[r] == k + 1:
            y += rel_f[r]
            crel = float(c1 @ rel_f[r])
            r += 1
        ihat = ihat + tp
        if clamp:
            ihat = min(max(ihat, 0.0), c_star)
        ca = float(c1 @ y)
        if not (abs(ihat) < 1e300 and abs(ca) < 1e300):
            return k + 1
        if (k + 1) % stride == 0:
            j = (k + 1) // stride
            out_bound[j], out_ca[j], out_mass[j] = ihat, ca, y[0]
    return 0


def run(config: ModelConfig, backend=None, clamp=False, basis=None) -> TimeSeries:
    """Drive the recursion over ``[0, t_end]`` and sample every ``output_stride`` steps.

    ``clamp`` confines the bound count to ``[0, C*]`` after each step; it is
    off by default so discretisation overshoot stays visible to
    :func:`bounds_violation`.
    """
    config = validate(config, allow_empty=True)
    backend = _backend.resolve(backend)
    kin, disc = config.kinetics, config.disc
    if basis is None:
        basis = build_basis(config.geometry, kin.D, disc.Q)
    factor = _decay(config) * basis.exp_AT(disc.T)
    rel_k = release_indices(config.schedule, disc.T)
    rel_f = np.array(
        [project_release(n, config.release_x, basis) for _, n in config.schedule.events]
    ).reshape(len(rel_k), basis.Q)
    n_steps = disc.n_steps
    stride = disc.output_stride
    n_out = n_steps // stride + 1
    out = np.zeros((3, n_out))
    inv_cstar = 1.0 / kin.C_star if config.saturation_enabled else 0.0
    args = (factor, np.ascontiguousarray(basis.c1_at_a), np.ascontiguousarray(basis.c2tilde_at_a),
            disc.T, kin.kappa_a, kin.kappa_d, inv_cstar, float(kin.C_star), bool(clamp),
            rel_k, rel_f, n_steps, stride, out[0], out[1], out[2])
    t0 = time.perf_counter()
    bad = (_run_kernel if backend == "numba" else _run_numpy)(*args)
    elapsed = time.perf_counter() - t0
    if bad:
        raise NonFiniteState(
            f"SSD state diverged at step {bad} (t = {bad * disc.T:g} us); "
            "the explicit feedback needs a smaller T"
        )
    series = TimeSeries(
        times=np.arange(n_out) * stride * disc.T,
        bound=out[0],
        c_at_a=out[1],
        solute_mass=out[2],
        metadata={
            "solver": "ssd",
            "config_hash": config_hash(config),
            "backend": backend,
            "Q": basis.Q,
            "T": disc.T,
            "runtime_s": elapsed,
        },
    )
    series.metadata["bounds_violation"] = bounds_violation(series, config)
    return series


def bounds_violation(series: TimeSeries, config: ModelConfig) -> float:
    """Largest excursion of the bound count beyond ``[-eps, C* + eps]`` (0 if none).

    Only meaningful with saturation on; ``eps = 1e-6 C*``.
    """
    if not config.saturation_enabled:
        return 0.0
    c_star = config.kinetics.C_star
    eps = 1e-6 * c_star
    low = max(0.0, float(-eps - series.bound.min()))
    high = max(0.0, float(series.bound.max() - c_star - eps))
    return max(low, high)


def initial_state(config: ModelConfig, basis: SpectralBasis) -> SsdState:
    """Zero state plus every release scheduled at ``t = 0``."""
    state = init(config, basis)
    for (_, n), k in zip(config.schedule.events, release_indices(config.schedule, config.disc.T)):
        if k == 0:
            state = inject(state, n, basis, config.release_x)
    return state
