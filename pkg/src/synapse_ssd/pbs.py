"""Three-dimensional particle-based stochastic simulation of the cleft.

Molecules perform Gaussian Brownian steps in the cuboid ``[0, a] x [0, wy] x
[0, wz]``. All walls reflect, except that a step crossing ``x = a`` inside a
free receptor disk binds with probability ``kappa_a0 sqrt(pi dt / D)``. Bound
molecules unbind at rate ``kappa_d`` and re-enter one RMS step in front of
their receptor. Solute molecules degrade at rate ``kappa_e C_E``.

Each time step runs in this order:

1. bound molecules unbind,
2. solute molecules move, testing ``x = a`` crossings against the disks at
   the linearly interpolated crossing point,
3. reflection off every other wall,
4. solute molecules that did not bind may degrade,
5. releases due at the end of the step are injected at ``x = 0``.

With saturation off, a receptor accepts any number of molecules.

Randomness comes from :mod:`synapse_ssd.rng`. Draw ``s`` of particle slot ``i``
in step ``n`` uses counter ``(n * n_slots + i) * 64 + s``, so the numba
kernel and the numpy fallback see identical random numbers. Gaussian steps
use Marsaglia's polar method: attempt ``m`` reads draws ``8 + 2m`` and
``9 + 2m``, and the first two accepted pairs supply the x, y and z steps. The
56 reserved draws leave room for 28 attempts; running out has probability
below 1e-13 per step, and the attempts then spill into the next slot's
reserved draws.
"""

from __future__ import annotations

import enum
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .core import ModelConfig, config_hash, validate
from .errors import ConfigWarning, GridMismatch, PlacementInfeasible
from .rng import derive_key, uniform, uniform_array
from .series import TimeSeries

MAX_LAYOUT_COVERAGE = 0.5

N_STREAMS = 64
ST_UNBIND = 0
ST_BIND = 1
ST_REL_Y = 2
ST_REL_Z = 3
ST_DEGRADE = 4
ST_NORMAL = 8  # polar-method attempts use consecutive pairs from here on


class ParticleStatus(enum.IntEnum):
    SOLUTE = 0
    BOUND = 1
    DEGRADED = 2
    PENDING = 3  # slot reserved for a later release


@dataclass(frozen=True, eq=False)
class ReceptorArray:
    """Receptor disks on the face ``x = a``, at most one per cell of a ``gy x gz`` grid."""

    centers: np.ndarray  # (C, 2) as (y, z)
    radius: float
    width_y: float
    width_z: float
    grid_shape: tuple
    lookup: np.ndarray  # (gy, gz) receptor index or -1

    @property
    def count(self):
        return len(self.centers)

    @property
    def coverage(self):
        return self.count * math.pi * self.radius**2 / (self.width_y * self.width_z)

    def find(self, y, z):
        """Receptor index hit at face point ``(y, z)`` or -1."""
        return _find_receptor(y, z, self.centers[:, 0], self.centers[:, 1], self.lookup,
                              self.width_y / self.grid_shape[0], self.width_z / self.grid_shape[1],
                              self.radius**2)


def place_receptors(geometry, C_star, r, seed=0) -> ReceptorArray:
    """Jittered-grid layout of ``C_star`` non-overlapping disks of radius ``r``.

    The face is cut into at least ``C_star`` near-square cells. A seeded random
    subset of cells receives one disk each, with its centre drawn uniformly
    from the part of the cell that keeps the disk inside the cell.
    """
    wy, wz = geometry.width_y, geometry.width_z
    C_star = int(C_star)
    if C_star < 1 or r <= 0:
        raise PlacementInfeasible(f"need C_star >= 1 and r > 0 (got {C_star}, {r})")
    coverage = C_star * math.pi * r**2 / (wy * wz)
    if coverage > MAX_LAYOUT_COVERAGE:
        raise PlacementInfeasible(
            f"coverage {coverage:.3g} exceeds the jittered-grid limit {MAX_LAYOUT_COVERAGE}"
        )
    if C_star == 1:
        lookup = np.zeros((1, 1), dtype=np.int64)
        if 2 * r > min(wy, wz):
            raise PlacementInfeasible("receptor disk wider than the face")
        return ReceptorArray(np.array([[wy / 2, wz / 2]]), float(r), wy, wz, (1, 1), lookup)
    gy = max(1, math.ceil(math.sqrt(C_star * wy / wz)))
    gz = max(1, math.ceil(C_star / gy))
    cy, cz = wy / gy, wz / gz
    if min(cy, cz) < 2 * r:
        raise PlacementInfeasible(f"grid cells ({cy:.3g} x {cz:.3g}) narrower than a disk")
    rng = np.random.default_rng(seed)
    cells = np.sort(rng.choice(gy * gz, size=C_star, replace=False))
    iy, iz = np.divmod(cells, gz)
    yy = iy * cy + r + rng.random(C_star) * (cy - 2 * r)
    zz = iz * cz + r + rng.random(C_star) * (cz - 2 * r)
    lookup = np.full((gy, gz), -1, dtype=np.int64)
    lookup[iy, iz] = np.arange(C_star)
    return ReceptorArray(np.column_stack([yy, zz]), float(r), wy, wz, (gy, gz), lookup)


def binding_probability(kappa_a0, D, dt_pbs):
    """Per-crossing adsorption probability ``kappa_a0 sqrt(pi dt / D)``, capped at 1."""
    p = kappa_a0 * math.sqrt(math.pi * dt_pbs / D)
    if p >= 0.5:
        warnings.warn(f"binding probability {p:.3g} is not small; reduce dt_pbs", ConfigWarning,
                      stacklevel=2)
    return min(p, 1.0)


def degradation_probability(kappa_e_CE, dt_pbs):
    """``1 - exp(-kappa_e_CE dt)``, evaluated without cancellation."""
    return -math.expm1(-kappa_e_CE * dt_pbs)


def unbinding_probability(kappa_d, dt_pbs):
    return -math.expm1(-kappa_d * dt_pbs)


@dataclass
class PbsTrace:
    times: np.ndarray
    bound: np.ndarray
    solute: np.ndarray
    degraded: np.ndarray
    seed: int
    run_index: int = 0
    metadata: dict = field(default_factory=dict)
    state: dict | None = None

    def to_csv(self, path=None):
        lines = ["t_us,bound,solute,degraded"]
        for t, b, s, d in zip(self.times, self.bound, self.solute, self.degraded):
            lines.append(f"{t!r},{int(b)},{int(s)},{int(d)}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(f"# seed={self.seed} run_index={self.run_index}\n")
                fh.write(text)
        return text


# --- kernels -------------------------------------------------------------


@_backend.njit
def _fold(v, w):
    v = v % (2.0 * w)
    if v > w:
        v = 2.0 * w - v
    return v


@_backend.njit
def _find_receptor(y, z, cen_y, cen_z, lookup, cell_y, cell_z, r2):
    gy, gz = lookup.shape
    iy = int(y / cell_y)
    iz = int(z / cell_z)
    if iy >= gy:
        iy = gy - 1
    if iz >= gz:
        iz = gz - 1
    j = lookup[iy, iz]
    if j >= 0:
        dy = y - cen_y[j]
        dz = z - cen_z[j]
        if dy * dy + dz * dz <= r2:
            return j
    return -1


@_backend.njit
def _pbs_kernel(x, y, z, status, rec_of, occupied, cen_y, cen_z, lookup, cell_y, cell_z, r2,
                a, wy, wz, sigma, p_bind, p_unbind, p_deg, unbind_off, saturation,
                rel_step, rel_count, n_steps, stride, key, out_b, out_s, out_d):
    n_slots = x.shape[0]
    ns = np.uint64(n_slots)
    nst = np.uint64(64)
    n_act = 0
    n_bound = 0
    n_sol = 0
    n_deg = 0
    r = 0
    n_rel = rel_step.shape[0]
    while r < n_rel and rel_step[r] == 0:
        base = np.uint64(0) * ns
        for q in range(rel_count[r]):
            i = n_act + q
            c = (base + np.uint64(i)) * nst
            x[i] = 0.0
            y[i] = uniform(key, c + np.uint64(2)) * wy
            z[i] = uniform(key, c + np.uint64(3)) * wz
            status[i] = 0
        n_act += rel_count[r]
        n_sol += rel_count[r]
        r += 1
    out_b[0] = 0
    out_s[0] = n_sol
    out_d[0] = 0
    for n in range(n_steps):
        base = np.uint64(n) * ns
        # 1. unbinding
        if n_bound > 0:
            for i in range(n_act):
                if status[i] == 1:
                    c = (base + np.uint64(i)) * nst
                    if uniform(key, c) < p_unbind:
                        j = rec_of[i]
                        occupied[j] -= 1
                        rec_of[i] = -1
                        status[i] = 0
                        x[i] = a - unbind_off
                        y[i] = cen_y[j]
                        z[i] = cen_z[j]
                        n_bound -= 1
                        n_sol += 1
        # 2.-4. motion, surface reaction, reflection, degradation
        for i in range(n_act):
            if status[i] != 0:
                continue
            c = (base + np.uint64(i)) * nst
            g0 = 0.0
            g1 = 0.0
            g2 = 0.0
            got = 0
            m = np.uint64(8)
            while got < 3:
                v1 = 2.0 * uniform(key, c + m) - 1.0
                v2 = 2.0 * uniform(key, c + m + np.uint64(1)) - 1.0
                m += np.uint64(2)
                w = v1 * v1 + v2 * v2
                if w < 1.0 and w > 0.0:
                    fac = np.sqrt(-2.0 * np.log(w) / w)
                    if got == 0:
                        g0 = v1 * fac
                        g1 = v2 * fac
                        got = 2
                    else:
                        g2 = v1 * fac
                        got = 3
            x0 = x[i]
            y0 = y[i]
            z0 = z[i]
            x1 = x0 + sigma * g0
            y1 = y0 + sigma * g1
            z1 = z0 + sigma * g2
            if x1 > a:
                f = (a - x0) / (x1 - x0)
                yc = _fold(y0 + f * (y1 - y0), wy)
                zc = _fold(z0 + f * (z1 - z0), wz)
                j = _find_receptor(yc, zc, cen_y, cen_z, lookup, cell_y, cell_z, r2)
                if j >= 0 and (not saturation or occupied[j] == 0):
                    if uniform(key, c + np.uint64(1)) < p_bind:
                        status[i] = 1
                        rec_of[i] = j
                        occupied[j] += 1
                        x[i] = a
                        y[i] = cen_y[j]
                        z[i] = cen_z[j]
                        n_bound += 1
                        n_sol -= 1
                        continue
                x1 = 2.0 * a - x1
            x[i] = _fold(x1, a)
            y[i] = _fold(y1, wy)
            z[i] = _fold(z1, wz)
            if p_deg > 0.0 and uniform(key, c + np.uint64(4)) < p_deg:
                status[i] = 2
                n_sol -= 1
                n_deg += 1
        # 5. releases at the end of the step
        while r < n_rel and rel_step[r] == n + 1:
            base1 = np.uint64(n + 1) * ns
            for q in range(rel_count[r]):
                i = n_act + q
                c = (base1 + np.uint64(i)) * nst
                x[i] = 0.0
                y[i] = uniform(key, c + np.uint64(2)) * wy
                z[i] = uniform(key, c + np.uint64(3)) * wz
                status[i] = 0
            n_act += rel_count[r]
            n_sol += rel_count[r]
            r += 1
        if (n + 1) % stride == 0:
            k = (n + 1) // stride
            out_b[k] = n_bound
            out_s[k] = n_sol
            out_d[k] = n_deg
    return n_act


def _fold_np(v, w):
    v = np.mod(v, 2.0 * w)
    return np.where(v > w, 2.0 * w - v, v)


def _polar_normals(key, cbase):
    """Three standard normals per counter base, matching the numba kernel draw for draw."""
    n = cbase.shape[0]
    g0 = np.zeros(n)
    g1 = np.zeros(n)
    g2 = np.zeros(n)
    got = np.zeros(n, dtype=np.int64)
    todo = np.arange(n)
    m = ST_NORMAL
    while todo.size:
        cb = cbase[todo]
        v1 = 2.0 * uniform_array(key, cb + np.uint64(m)) - 1.0
        v2 = 2.0 * uniform_array(key, cb + np.uint64(m + 1)) - 1.0
        m += 2
        w = v1 * v1 + v2 * v2
        ok = (w < 1.0) & (w > 0.0)
        fac = np.sqrt(-2.0 * np.log(np.where(ok, w, 0.5)) / np.where(ok, w, 0.5))
        first = ok & (got[todo] == 0)
        second = ok & (got[todo] == 2)
        t1, t2 = todo[first], todo[second]
        g0[t1] = v1[first] * fac[first]
        g1[t1] = v2[first] * fac[first]
        got[t1] = 2
        g2[t2] = v1[second] * fac[second]
        got[t2] = 3
        todo = todo[got[todo] < 3]
    return g0, g1, g2


def _ctr(step, idx, n_slots, stream):
    return (np.uint64(step) * np.uint64(n_slots) + idx.astype(np.uint64)) * np.uint64(N_STREAMS) \
        + np.uint64(stream)


def _pbs_numpy(x, y, z, status, rec_of, occupied, cen_y, cen_z, lookup, cell_y, cell_z, r2,
               a, wy, wz, sigma, p_bind, p_unbind, p_deg, unbind_off, saturation,
               rel_step, rel_count, n_steps, stride, key, out_b, out_s, out_d):
    n_slots = x.shape[0]
    gy, gz = lookup.shape
    n_act = 0
    r = 0
    n_rel = rel_step.shape[0]

    def release(step, n_act, count):
        idx = np.arange(n_act, n_act + count)
        x[idx] = 0.0
        y[idx] = uniform_array(key, _ctr(step, idx, n_slots, ST_REL_Y)) * wy
        z[idx] = uniform_array(key, _ctr(step, idx, n_slots, ST_REL_Z)) * wz
        status[idx] = ParticleStatus.SOLUTE
        return n_act + count

    while r < n_rel and rel_step[r] == 0:
        n_act = release(0, n_act, rel_count[r])
        r += 1
    out_b[0], out_s[0], out_d[0] = 0, n_act, 0
    for n in range(n_steps):
        st = status[:n_act]
        idx_b = np.flatnonzero(st == ParticleStatus.BOUND)
        if idx_b.size:
            u = uniform_array(key, _ctr(n, idx_b, n_slots, ST_UNBIND))
            unb = idx_b[u < p_unbind]
            if unb.size:
                j = rec_of[unb]
                np.subtract.at(occupied, j, 1)
                rec_of[unb] = -1
                status[unb] = ParticleStatus.SOLUTE
                x[unb] = a - unbind_off
                y[unb] = cen_y[j]
                z[unb] = cen_z[j]
        idx = np.flatnonzero(status[:n_act] == ParticleStatus.SOLUTE)
        if idx.size:
            cbase = _ctr(n, idx, n_slots, 0)
            g0, g1, g2 = _polar_normals(key, cbase)
            x0, y0, z0 = x[idx], y[idx], z[idx]
            x1 = x0 + sigma * g0
            y1 = y0 + sigma * g1
            z1 = z0 + sigma * g2
            binds = np.zeros(idx.size, dtype=bool)
            cross = np.flatnonzero(x1 > a)
            if cross.size:
                f = (a - x0[cross]) / (x1[cross] - x0[cross])
                yc = _fold_np(y0[cross] + f * (y1[cross] - y0[cross]), wy)
                zc = _fold_np(z0[cross] + f * (z1[cross] - z0[cross]), wz)
                iy = np.minimum((yc / cell_y).astype(np.int64), gy - 1)
                iz = np.minimum((zc / cell_z).astype(np.int64), gz - 1)
                j = lookup[iy, iz]
                jj = np.where(j >= 0, j, 0)
                hit = (j >= 0) & ((yc - cen_y[jj]) ** 2 + (zc - cen_z[jj]) ** 2 <= r2)
                if saturation:
                    hit &= occupied[jj] == 0
                ub = uniform_array(key, cbase[cross] + np.uint64(ST_BIND))
                att = np.flatnonzero(hit & (ub < p_bind))
                if saturation and att.size:
                    _, first = np.unique(j[att], return_index=True)
                    att = att[np.sort(first)]
                if att.size:
                    win = cross[att]
                    jw = j[att]
                    binds[win] = True
                    gi = idx[win]
                    status[gi] = ParticleStatus.BOUND
                    rec_of[gi] = jw
                    np.add.at(occupied, jw, 1)
                    x[gi] = a
                    y[gi] = cen_y[jw]
                    z[gi] = cen_z[jw]
                refl = cross[~binds[cross]]
                x1[refl] = 2.0 * a - x1[refl]
            keep = ~binds
            gi = idx[keep]
            x[gi] = _fold_np(x1[keep], a)
            y[gi] = _fold_np(y1[keep], wy)
            z[gi] = _fold_np(z1[keep], wz)
            if p_deg > 0.0:
                ud = uniform_array(key, cbase[keep] + np.uint64(ST_DEGRADE))
                status[gi[ud < p_deg]] = ParticleStatus.DEGRADED
        while r < n_rel and rel_step[r] == n + 1:
            n_act = release(n + 1, n_act, rel_count[r])
            r += 1
        if (n + 1) % stride == 0:
            k = (n + 1) // stride
            counts = np.bincount(status[:n_act], minlength=4)
            out_b[k] = counts[ParticleStatus.BOUND]
            out_s[k] = counts[ParticleStatus.SOLUTE]
            out_d[k] = counts[ParticleStatus.DEGRADED]
    return n_act


# --- drivers ---------------------------------------------------------------


def _grid(config):
    disc = config.disc
    n_steps = int(round(disc.t_end / disc.dt_pbs))
    ratio = disc.T / disc.dt_pbs
    per_sample = int(round(ratio))
    if per_sample < 1 or abs(per_sample - ratio) > 1e-9 * ratio:
        warnings.warn(f"T/dt_pbs = {ratio:g} is not an integer; PBS samples every "
                      f"{max(per_sample, 1)} steps", ConfigWarning, stacklevel=3)
        per_sample = max(per_sample, 1)
    return n_steps, per_sample * disc.output_stride


def simulate_run(config: ModelConfig, seed=0, run_index=0, backend=None, receptors=None,
                 return_state=False, layout_seed=None) -> PbsTrace:
    """One stochastic realisation, sampled on the SSD output grid.

    ``seed`` and ``run_index`` select the random stream; the receptor layout
    comes from ``layout_seed`` (default ``seed``) so that repetitions of one
    experiment share a synapse.
    """
    config = validate(config, allow_empty=True)
    backend = _backend.resolve(backend)
    g, kin, disc = config.geometry, config.kinetics, config.disc
    if receptors is None:
        receptors = place_receptors(g, kin.C_star, kin.r, seed if layout_seed is None else layout_seed)
    n_steps, stride = _grid(config)
    rel_step = np.array([int(round(t / disc.dt_pbs)) for t, _ in config.schedule.events],
                        dtype=np.int64)
    rel_count = np.array([int(round(n)) for _, n in config.schedule.events], dtype=np.int64)
    n_slots = max(int(rel_count.sum()), 1)
    x = np.zeros(n_slots)
    y = np.zeros(n_slots)
    z = np.zeros(n_slots)
    status = np.full(n_slots, int(ParticleStatus.PENDING), dtype=np.int64)
    rec_of = np.full(n_slots, -1, dtype=np.int64)
    occupied = np.zeros(receptors.count, dtype=np.int64)
    n_out = n_steps // stride + 1
    out = np.zeros((3, n_out), dtype=np.int64)
    gy, gz = receptors.grid_shape
    key = derive_key(seed, run_index)
    args = (
        x, y, z, status, rec_of, occupied,
        np.ascontiguousarray(receptors.centers[:, 0]), np.ascontiguousarray(receptors.centers[:, 1]),
        receptors.lookup, g.width_y / gy, g.width_z / gz, receptors.radius**2,
        g.a, g.width_y, g.width_z,
        math.sqrt(2.0 * kin.D * disc.dt_pbs),
        binding_probability(kin.kappa_a0, kin.D, disc.dt_pbs),
        unbinding_probability(kin.kappa_d, disc.dt_pbs),
        degradation_probability(kin.kappa_e_CE, disc.dt_pbs),
        math.sqrt(2.0 * kin.D * disc.dt_pbs),
        bool(config.saturation_enabled),
        rel_step, rel_count, n_steps, stride,
    )
    t0 = time.perf_counter()
    if backend == "numba":
        _pbs_kernel(*args, np.uint64(key), out[0], out[1], out[2])
    else:
        _pbs_numpy(*args, key, out[0], out[1], out[2])
    elapsed = time.perf_counter() - t0
    trace = PbsTrace(
        times=np.arange(n_out) * stride * disc.dt_pbs,
        bound=out[0],
        solute=out[1],
        degraded=out[2],
        seed=int(seed),
        run_index=int(run_index),
        metadata={"backend": backend, "runtime_s": elapsed, "config_hash": config_hash(config),
                  "coverage": receptors.coverage},
    )
    if return_state:
        trace.state = {"x": x, "y": y, "z": z, "status": status, "rec_of": rec_of,
                       "occupied": occupied, "receptors": receptors}
    return trace


def simulate(config: ModelConfig, seed=0, n_runs=None, backend=None, workers=None):
    """``n_runs`` independent repetitions on a common receptor layout."""
    config = validate(config, allow_empty=True)
    n_runs = config.disc.n_runs if n_runs is None else int(n_runs)
    receptors = place_receptors(config.geometry, config.kinetics.C_star, config.kinetics.r, seed)
    workers = _backend.worker_count() if workers is None else max(1, int(workers))

    def one(i):
        return simulate_run(config, seed, i, backend, receptors)

    if workers == 1 or n_runs == 1:
        return [one(i) for i in range(n_runs)]
    with ThreadPoolExecutor(max_workers=min(workers, n_runs)) as pool:
        return list(pool.map(one, range(n_runs)))


def aggregate(traces) -> TimeSeries:
    """Per-sample mean bound count and its standard error across runs."""
    traces = list(traces)
    if not traces:
        raise GridMismatch("no traces to aggregate")
    t0 = traces[0].times
    for tr in traces[1:]:
        if tr.times.shape != t0.shape or not np.array_equal(tr.times, t0):
            raise GridMismatch("traces are sampled on different time grids")
    bound = np.array([tr.bound for tr in traces], dtype=float)
    solute = np.array([tr.solute for tr in traces], dtype=float)
    n = len(traces)
    se = bound.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(len(t0))
    return TimeSeries(
        t0,
        bound.mean(axis=0),
        np.full(len(t0), np.nan),
        solute.mean(axis=0),
        metadata={
            "solver": "pbs",
            "n_runs": n,
            "seeds": sorted({tr.seed for tr in traces}),
            "config_hash": traces[0].metadata.get("config_hash"),
            "runtime_s": float(sum(tr.metadata.get("runtime_s", 0.0) for tr in traces)),
        },
        bound_se=se,
    )
