"""Domain types, parameter validation and release schedules.

All quantities are in micrometres and microseconds. Concentrations are
one-dimensional (molecules per micrometre along the cleft axis ``x``), so an
adsorption coefficient times a concentration is a molecule flux per
microsecond.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import re
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigWarning,
    EmptySchedule,
    NonPositiveParameter,
    ParseError,
    ReceptorOverflow,
    ValidationError,
)

# Relative tolerance for deciding that a release time already sits on the T-grid.
_GRID_RTOL = 1e-9


@dataclass(frozen=True)
class ChannelGeometry:
    a: float
    width_y: float
    width_z: float

    @property
    def face_area(self) -> float:
        return self.width_y * self.width_z


@dataclass(frozen=True)
class Kinetics:
    """Reaction and transport constants.

    Either ``kappa_a0`` (per-receptor intrinsic coefficient) or ``kappa_a``
    (homogenised boundary coefficient) may be left as ``None``; validation
    derives the missing one through :func:`effective_adsorption`. A value that
    is given explicitly always wins over the derived one.
    """

    D: float
    kappa_d: float
    kappa_e_CE: float
    C_star: int
    r: float
    kappa_a0: float | None = None
    kappa_a: float | None = None

    @property
    def disk_area(self) -> float:
        return math.pi * self.r**2


@dataclass(frozen=True)
class ReleaseSchedule:
    """Impulsive releases at ``x = 0`` as ``(time_us, count)`` pairs."""

    events: tuple[tuple[float, float], ...] = ()

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.events], dtype=float)

    @property
    def counts(self) -> np.ndarray:
        return np.array([n for _, n in self.events], dtype=float)

    @property
    def total(self) -> float:
        return float(sum(n for _, n in self.events))


@dataclass(frozen=True)
class Discretization:
    T: float
    Q: int
    t_end: float
    dt_pbs: float = 1e-2
    n_runs: int = 50
    output_stride: int = 1

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.t_end / self.T * (1 + _GRID_RTOL)))


@dataclass(frozen=True)
class ModelConfig:
    geometry: ChannelGeometry
    kinetics: Kinetics
    schedule: ReleaseSchedule
    disc: Discretization
    saturation_enabled: bool = True
    degradation_enabled: bool = True
    release_x: float = field(default=0.0, repr=False)


def effective_adsorption(kappa_a0, r, C_star, A):
    """Homogenised adsorption coefficient of ``C_star`` disks of radius ``r``.

    Area-fraction scaling: ``kappa_a = kappa_a0 * C_star * pi * r**2 / A``.
    """
    coverage = C_star * math.pi * r**2 / A
    if coverage > 1.0 + 1e-12:
        raise ReceptorOverflow(
            f"receptor coverage {coverage:.4g} exceeds the postsynaptic face area"
        )
    return kappa_a0 * coverage


def receptor_coverage(geometry: ChannelGeometry, kinetics: Kinetics) -> float:
    return kinetics.C_star * kinetics.disk_area / geometry.face_area


def feedback_gain(a, D, Q, T, kappa_a):
    """Stability indicator of the explicit saturation feedback.

    The one-step update ``diag(exp(s T)) - T kappa_a c2 c1^T`` has an eigenvalue
    below -1 exactly when this quantity exceeds 1.
    """
    mu = np.arange(Q)
    s = -D * (mu * np.pi / a) ** 2
    inv_norm = np.where(mu == 0, 1.0 / a, 2.0 / a)
    return float(T * kappa_a * np.sum(inv_norm / (1.0 + np.exp(s * T))))


def validate(config: ModelConfig, allow_empty: bool = False) -> ModelConfig:
    """Check ``config`` and return its normalised form.

    Normalisation snaps release times onto the ``T`` grid (with a
    :class:`ConfigWarning`), zeroes the degradation rate when degradation is
    disabled and fills in whichever of ``kappa_a``/``kappa_a0`` is missing.
    All violations are collected; the raised exception has the type of the
    first one and carries the full list in ``violations``.
    """
    g, k, s, d = config.geometry, config.kinetics, config.schedule, config.disc
    problems: list[tuple[type, str]] = []

    def positive(name, value):
        if value is None or not np.isfinite(value) or value <= 0:
            problems.append((NonPositiveParameter, f"{name} must be > 0, got {value!r}"))

    def non_negative(name, value):
        if value is None or not np.isfinite(value) or value < 0:
            problems.append((NonPositiveParameter, f"{name} must be >= 0, got {value!r}"))

    positive("a", g.a)
    positive("width_y", g.width_y)
    positive("width_z", g.width_z)
    positive("D", k.D)
    positive("r", k.r)
    non_negative("kappa_d", k.kappa_d)
    non_negative("kappa_e_CE", k.kappa_e_CE)
    if k.kappa_a0 is not None:
        non_negative("kappa_a0", k.kappa_a0)
    if k.kappa_a is not None:
        non_negative("kappa_a", k.kappa_a)
    if k.kappa_a0 is None and k.kappa_a is None:
        problems.append((ValidationError, "one of kappa_a0 or kappa_a must be given"))
    if int(k.C_star) != k.C_star or k.C_star < 1:
        problems.append((NonPositiveParameter, f"C_star must be an integer >= 1, got {k.C_star!r}"))
    positive("T", d.T)
    positive("t_end", d.t_end)
    positive("dt_pbs", d.dt_pbs)
    if int(d.Q) != d.Q or d.Q < 1:
        problems.append((NonPositiveParameter, f"Q must be an integer >= 1, got {d.Q!r}"))
    if int(d.n_runs) != d.n_runs or d.n_runs < 1:
        problems.append((NonPositiveParameter, f"n_runs must be an integer >= 1, got {d.n_runs!r}"))
    if int(d.output_stride) != d.output_stride or d.output_stride < 1:
        problems.append((NonPositiveParameter, "output_stride must be an integer >= 1"))
    if not problems and d.t_end < d.T:
        problems.append((ValidationError, f"t_end={d.t_end} shorter than one sample T={d.T}"))
    if not problems and not 0.0 <= config.release_x <= g.a:
        problems.append((ValidationError, f"release position {config.release_x} outside [0, a]"))

    if not problems and k.C_star * k.disk_area > g.face_area * (1 + 1e-12):
        cov = k.C_star * k.disk_area / g.face_area
        problems.append((ReceptorOverflow, f"receptor coverage {cov:.4g} > 1"))

    if not s.events and not allow_empty:
        problems.append((EmptySchedule, "release schedule has no events"))
    prev = -math.inf
    for t, n in s.events:
        if not np.isfinite(t) or t < 0:
            problems.append((NonPositiveParameter, f"release time {t!r} must be >= 0"))
        if not np.isfinite(n) or n <= 0:
            problems.append((NonPositiveParameter, f"release count {n!r} must be > 0"))
        if t <= prev:
            problems.append((ValidationError, "release times must be strictly increasing"))
        prev = t

    if problems:
        cls, msg = problems[0]
        raise cls(msg, [m for _, m in problems])

    events = _snap_events(s.events, d.T)

    kappa_a0, kappa_a = k.kappa_a0, k.kappa_a
    coverage = receptor_coverage(g, k)
    if kappa_a is None:
        kappa_a = effective_adsorption(kappa_a0, k.r, k.C_star, g.face_area)
    if kappa_a0 is None:
        kappa_a0 = kappa_a / coverage
    kinetics = dataclasses.replace(
        k,
        C_star=int(k.C_star),
        kappa_a=float(kappa_a),
        kappa_a0=float(kappa_a0),
        kappa_e_CE=float(k.kappa_e_CE) if config.degradation_enabled else 0.0,
    )
    disc = dataclasses.replace(
        d, Q=int(d.Q), n_runs=int(d.n_runs), output_stride=int(d.output_stride)
    )

    gain = feedback_gain(g.a, k.D, disc.Q, disc.T, kappa_a)
    if gain > 1.0:
        warnings.warn(
            f"explicit saturation feedback is unstable (gain {gain:.3g} > 1); reduce T or Q",
            ConfigWarning,
            stacklevel=2,
        )

    return dataclasses.replace(
        config,
        kinetics=kinetics,
        disc=disc,
        schedule=ReleaseSchedule(events),
    )


def _snap_events(events, T):
    snapped = []
    moved = []
    for t, n in events:
        k = round(t / T)
        ts = k * T
        if abs(ts - t) > _GRID_RTOL * max(T, abs(t)):
            moved.append((t, ts))
        else:
            ts = t
        snapped.append((float(ts), float(n)))
    if moved:
        desc = ", ".join(f"{a:g}->{b:.10g}" for a, b in moved)
        warnings.warn(f"release times snapped to the T-grid: {desc}", ConfigWarning, stacklevel=3)
    idx = [round(t / T) for t, _ in snapped]
    if len(set(idx)) != len(idx):
        raise ValidationError("two releases collapse onto the same sampling instant")
    return tuple(snapped)


def release_indices(schedule: ReleaseSchedule, step: float) -> np.ndarray:
    """Grid indices of the release times for a grid of spacing ``step``."""
    return np.array([int(round(t / step)) for t, _ in schedule.events], dtype=np.int64)


# --- parameter access used by sweeps -------------------------------------

SWEEPABLE = {
    "a": ("geometry", "a"),
    "width_y": ("geometry", "width_y"),
    "width_z": ("geometry", "width_z"),
    "D": ("kinetics", "D"),
    "kappa_a0": ("kinetics", "kappa_a0"),
    "kappa_a": ("kinetics", "kappa_a"),
    "kappa_d": ("kinetics", "kappa_d"),
    "kappa_e_CE": ("kinetics", "kappa_e_CE"),
    "C_star": ("kinetics", "C_star"),
    "r": ("kinetics", "r"),
    "T": ("disc", "T"),
    "Q": ("disc", "Q"),
    "t_end": ("disc", "t_end"),
    "dt_pbs": ("disc", "dt_pbs"),
    "n_runs": ("disc", "n_runs"),
    "N": None,
}


def override(config: ModelConfig, name: str, value) -> ModelConfig:
    """Return ``config`` with one named parameter replaced.

    ``N`` sets the count of every release event.
    """
    if name not in SWEEPABLE:
        raise ValidationError(f"unknown parameter {name!r}; known: {sorted(SWEEPABLE)}")
    if name == "N":
        events = tuple((t, float(value)) for t, _ in config.schedule.events)
        return dataclasses.replace(config, schedule=ReleaseSchedule(events))
    part, attr = SWEEPABLE[name]
    if attr in ("C_star", "Q", "n_runs"):
        value = int(value)
    sub = dataclasses.replace(getattr(config, part), **{attr: value})
    return dataclasses.replace(config, **{part: sub})


def table1_config(
    t_end=3000.0,
    N=1000.0,
    release_times=(0.0,),
    saturation=True,
    degradation=True,
    **kinetics_overrides,
) -> ModelConfig:
    """Default cleft: the reference parameter set (D, a, receptor layout, T, Q)."""
    kin = dict(
        D=3.3e-4,
        kappa_a0=1.02e-4,
        kappa_d=8.5e-3,
        kappa_e_CE=1e-3,
        C_star=203,
        r=2.3e-3,
    )
    kin.update(kinetics_overrides)
    return ModelConfig(
        geometry=ChannelGeometry(a=2e-2, width_y=0.15, width_z=0.15),
        kinetics=Kinetics(**kin),
        schedule=ReleaseSchedule(tuple((float(t), float(N)) for t in release_times)),
        disc=Discretization(T=0.3, Q=100, t_end=float(t_end), dt_pbs=1e-2, n_runs=50),
        saturation_enabled=saturation,
        degradation_enabled=degradation,
    )


# --- JSON round trip ------------------------------------------------------

_TIME_RE = re.compile(r"^\s*([-+0-9.eE]+)\s*(us|µs|ms)?\s*$")
_TIME_FIELDS = {"t", "T", "t_end", "dt_pbs"}


def parse_time(value, where="time"):
    """Microseconds from a number or a string with an ``us``/``ms`` suffix."""
    if isinstance(value, bool):
        raise ParseError(f"{where}: expected a time, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        m = _TIME_RE.match(value)
        if m:
            try:
                num = float(m.group(1))
            except ValueError:
                pass
            else:
                return num * 1000.0 if m.group(2) == "ms" else num
    raise ParseError(f"{where}: cannot parse time {value!r} (use a number or '<x> us' / '<x> ms')")


def _section(data, key, cls, where):
    raw = data.get(key)
    if not isinstance(raw, dict):
        raise ParseError(f"{where}: missing or non-object field '{key}'")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ParseError(f"{where}.{key}: unknown field(s) {sorted(unknown)}")
    out = {}
    for name, value in raw.items():
        if name in _TIME_FIELDS:
            value = parse_time(value, f"{where}.{key}.{name}")
        elif value is not None and not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ParseError(f"{where}.{key}.{name}: expected a number, got {value!r}")
        out[name] = value
    try:
        return cls(**out)
    except TypeError as exc:
        raise ParseError(f"{where}.{key}: {exc}") from None


def config_from_dict(data: dict, where="config") -> ModelConfig:
    """Build an (unvalidated) :class:`ModelConfig` from its JSON form."""
    if not isinstance(data, dict):
        raise ParseError(f"{where}: expected a JSON object")
    geometry = _section(data, "geometry", ChannelGeometry, where)
    kinetics = _section(data, "kinetics", Kinetics, where)
    disc = _section(data, "disc", Discretization, where)
    sched = data.get("schedule")
    if not isinstance(sched, dict) or not isinstance(sched.get("events"), list):
        raise ParseError(f"{where}.schedule: expected an object with an 'events' list")
    events = []
    for i, ev in enumerate(sched["events"]):
        loc = f"{where}.schedule.events[{i}]"
        if not isinstance(ev, dict) or "t" not in ev or "N" not in ev:
            raise ParseError(f"{loc}: expected {{'t': ..., 'N': ...}}")
        n = ev["N"]
        if isinstance(n, bool) or not isinstance(n, (int, float)):
            raise ParseError(f"{loc}.N: expected a number, got {n!r}")
        events.append((parse_time(ev["t"], f"{loc}.t"), float(n)))
    flags = {}
    for name in ("saturation_enabled", "degradation_enabled"):
        if name in data:
            if not isinstance(data[name], bool):
                raise ParseError(f"{where}.{name}: expected true/false")
            flags[name] = data[name]
    return ModelConfig(geometry, kinetics, ReleaseSchedule(tuple(events)), disc, **flags)


def config_to_dict(config: ModelConfig) -> dict:
    return {
        "geometry": dataclasses.asdict(config.geometry),
        "kinetics": dataclasses.asdict(config.kinetics),
        "schedule": {"events": [{"t": t, "N": n} for t, n in config.schedule.events]},
        "disc": dataclasses.asdict(config.disc),
        "saturation_enabled": config.saturation_enabled,
        "degradation_enabled": config.degradation_enabled,
    }


def config_hash(config: ModelConfig) -> str:
    blob = json.dumps(config_to_dict(config), sort_keys=True, default=float)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
