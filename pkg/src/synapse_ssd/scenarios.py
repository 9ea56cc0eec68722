"""Scenario files, sweep orchestration, solver comparison and output emission.

A scenario is a JSON document::

    {
      "name": "fig3_single_release",
      "solvers": ["ssd", "oracle"],
      "sweep": {"parameter": "C_star", "values": [50, 100, 203]},
      "saturation": [true, false],
      "seed": 1,
      "oracle": {"M": 256, "dt_fd": 0.0375},
      "config": { ...ModelConfig in the form of core.config_to_dict... }
    }

Only ``name``, ``solvers`` and ``config`` are required. Every combination of
sweep value and saturation mode is one curve; each selected solver produces
one time series per curve.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import oracle, pbs, ssd
from .core import (
    SWEEPABLE,
    ModelConfig,
    config_from_dict,
    config_to_dict,
    effective_adsorption,
    override,
    validate,
)
from .errors import NoOverlap, ParseError, SolverError, ValidationError
from .series import TimeSeries

SOLVERS = ("ssd", "oracle", "pbs")
BUNDLED = ("fig2_steady_state", "fig3_single_release", "fig4_multi_release", "calibration_kappa_a")
STEADY_FRACTION = 0.1


@dataclass(frozen=True)
class Sweep:
    parameter: str
    values: tuple

    def __post_init__(self):
        if self.parameter not in SWEEPABLE:
            raise ValidationError(
                f"sweep parameter {self.parameter!r} is not a config field; known: {sorted(SWEEPABLE)}"
            )
        if not self.values:
            raise ValidationError("sweep needs at least one value")
        bad = [v for v in self.values if not v > 0]
        if bad:
            raise ValidationError(f"sweep values must be positive, got {bad}")


@dataclass(frozen=True)
class Scenario:
    name: str
    config: ModelConfig
    solvers: tuple = ("ssd",)
    sweep: Sweep | None = None
    saturation_modes: tuple = (True,)
    seed: int = 0
    oracle_grid: oracle.FdGrid = oracle.FdGrid()
    calibration_window: float = 0.5

    def __post_init__(self):
        if not self.solvers:
            raise ValidationError(f"scenario {self.name!r}: empty solver set")
        unknown = set(self.solvers) - set(SOLVERS)
        if unknown:
            raise ValidationError(f"scenario {self.name!r}: unknown solver(s) {sorted(unknown)}")
        if not self.saturation_modes:
            raise ValidationError(f"scenario {self.name!r}: no saturation mode selected")
        if not 0 < self.calibration_window <= 1:
            raise ValidationError("calibration window must be a fraction in (0, 1]")

    def points(self):
        """``(label, sweep_value, saturation, config)`` for every curve."""
        values = self.sweep.values if self.sweep else (None,)
        out = []
        for v in values:
            cfg = self.config if v is None else override(self.config, self.sweep.parameter, v)
            for sat in self.saturation_modes:
                cfg_s = validate(dataclasses.replace(cfg, saturation_enabled=bool(sat)))
                label = "" if v is None else f"{self.sweep.parameter}={_num(v)}_"
                label += "sat" if sat else "nosat"
                out.append((label, v, bool(sat), cfg_s))
        return out


def _num(v):
    return str(int(v)) if float(v).is_integer() else repr(float(v))


# --- loading ---------------------------------------------------------------


def scenario_from_dict(data, where="scenario") -> Scenario:
    if not isinstance(data, dict):
        raise ParseError(f"{where}: expected a JSON object")
    for key in ("name", "solvers", "config"):
        if key not in data:
            raise ParseError(f"{where}: missing field '{key}'")
    known = {"name", "solvers", "sweep", "saturation", "seed", "oracle", "config",
             "calibration_window", "description"}
    unknown = set(data) - known
    if unknown:
        raise ParseError(f"{where}: unknown field(s) {sorted(unknown)}")
    solvers = data["solvers"]
    if not isinstance(solvers, list) or not all(isinstance(s, str) for s in solvers):
        raise ParseError(f"{where}.solvers: expected a list of solver names")
    sweep = None
    if data.get("sweep") is not None:
        sw = data["sweep"]
        if not isinstance(sw, dict) or "parameter" not in sw or not isinstance(sw.get("values"), list):
            raise ParseError(f"{where}.sweep: expected {{'parameter': ..., 'values': [...]}}")
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in sw["values"]):
            raise ParseError(f"{where}.sweep.values: expected numbers")
        sweep = Sweep(str(sw["parameter"]), tuple(sw["values"]))
    sat = data.get("saturation", [True])
    if isinstance(sat, bool):
        sat = [sat]
    if not isinstance(sat, list) or not all(isinstance(s, bool) for s in sat):
        raise ParseError(f"{where}.saturation: expected true/false or a list of them")
    grid = data.get("oracle", {})
    if not isinstance(grid, dict):
        raise ParseError(f"{where}.oracle: expected an object")
    try:
        grid = oracle.FdGrid(**grid)
    except TypeError as exc:
        raise ParseError(f"{where}.oracle: {exc}") from None
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ParseError(f"{where}.seed: expected an integer")
    # Kept unvalidated so that derived rates follow sweep overrides.
    config = config_from_dict(data["config"], f"{where}.config")
    validate(config)
    return Scenario(
        name=str(data["name"]),
        config=config,
        solvers=tuple(solvers),
        sweep=sweep,
        saturation_modes=tuple(sat),
        seed=seed,
        oracle_grid=grid,
        calibration_window=float(data.get("calibration_window", 0.5)),
    )


def scenario_to_dict(scenario: Scenario) -> dict:
    out = {
        "name": scenario.name,
        "solvers": list(scenario.solvers),
        "saturation": list(scenario.saturation_modes),
        "seed": scenario.seed,
        "oracle": dataclasses.asdict(scenario.oracle_grid),
        "calibration_window": scenario.calibration_window,
        "config": config_to_dict(scenario.config),
    }
    if scenario.sweep is not None:
        out["sweep"] = {"parameter": scenario.sweep.parameter, "values": list(scenario.sweep.values)}
    return out


def load_scenario(path) -> Scenario:
    """Read a scenario from ``path`` or, if no such file exists, a bundled name."""
    p = Path(path)
    if p.is_file():
        text, where = p.read_text(), str(p)
    elif str(path) in BUNDLED or str(path).removesuffix(".json") in BUNDLED:
        name = str(path).removesuffix(".json") + ".json"
        text = resources.files("synapse_ssd").joinpath("data").joinpath(name).read_text()
        where = name
    else:
        raise ParseError(f"{path}: no such scenario file")
    if not text.strip():
        raise ParseError(f"{where}: empty file")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{where}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return scenario_from_dict(data, where)


# --- comparison ------------------------------------------------------------


def compare(series_a: TimeSeries, series_b: TimeSeries) -> dict:
    """Deviation of ``series_b`` from the reference ``series_a``.

    Both are interpolated onto the coarser grid restricted to the common time
    range. ``peak_relative`` divides the max-abs deviation by the peak of
    ``series_a``.
    """
    lo = max(series_a.times[0], series_b.times[0])
    hi = min(series_a.times[-1], series_b.times[-1])
    if not hi > lo:
        raise NoOverlap(f"time ranges [{series_a.times[0]}, {series_a.times[-1]}] and "
                        f"[{series_b.times[0]}, {series_b.times[-1]}] do not overlap")

    def spacing(s):
        return float(np.median(np.diff(s.times))) if len(s) > 1 else math.inf

    coarse = series_a if spacing(series_a) >= spacing(series_b) else series_b
    t = coarse.times[(coarse.times >= lo) & (coarse.times <= hi)]
    if len(t) == 0:
        raise NoOverlap("no sample of the coarser series lies in the common range")
    diff = np.abs(np.interp(t, series_a.times, series_a.bound)
                  - np.interp(t, series_b.times, series_b.bound))
    k = int(np.argmax(diff))
    peak = float(np.max(np.abs(series_a.bound)))
    return {
        "max_abs": float(diff[k]),
        "t_max_abs": float(t[k]),
        "peak_relative": float(diff[k] / peak) if peak > 0 else math.inf,
        "n_points": int(len(t)),
    }


def summarize(series: TimeSeries) -> dict:
    t_peak, peak = series.peak()
    t_end = series.times[-1]
    tail = series.times >= t_end - STEADY_FRACTION * (t_end - series.times[0])
    return {
        "peak": peak,
        "t_peak": t_peak,
        "steady_state": float(np.mean(series.bound[tail])),
        "runtime_s": float(series.metadata.get("runtime_s", math.nan)),
    }


@dataclass
class ComparisonReport:
    scenario: str
    points: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def to_dict(self):
        return {"scenario": self.scenario, "points": self.points, "failures": self.failures}

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, default=float) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


@dataclass
class ScenarioResult:
    scenario: Scenario
    curves: dict  # (solver, label) -> TimeSeries
    report: ComparisonReport

    @property
    def ok(self):
        return not self.report.failures


# --- orchestration ---------------------------------------------------------


def _solve(solver, config, scenario, seed, n_runs, backend):
    if solver == "ssd":
        return ssd.run(config, backend=backend)
    if solver == "oracle":
        return oracle.solve(config, scenario.oracle_grid, backend=backend)
    traces = pbs.simulate(config, seed=seed, n_runs=n_runs, backend=backend)
    return pbs.aggregate(traces)


def run_scenario(scenario: Scenario, out_dir=None, solvers=None, seed=None, n_runs=None,
                 backend=None, plot=True) -> ScenarioResult:
    """Run every selected solver on every curve of ``scenario``.

    Solver errors do not stop the sweep: they are recorded in
    ``report.failures`` and, when ``out_dir`` is given, marked by a
    ``<curve>.FAILED`` file. All files are written from the calling thread
    after each solve.
    """
    solvers = tuple(scenario.solvers if solvers is None else solvers)
    if not solvers:
        raise ValidationError("empty solver set")
    unknown = set(solvers) - set(SOLVERS)
    if unknown:
        raise ValidationError(f"unknown solver(s) {sorted(unknown)}")
    seed = scenario.seed if seed is None else int(seed)
    out = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
    curves = {}
    report = ComparisonReport(scenario.name)
    for label, value, sat, cfg in scenario.points():
        entry = {"label": label, "saturation": sat, "solvers": {}, "deviations": {}}
        if scenario.sweep is not None:
            entry[scenario.sweep.parameter] = value
        for solver in solvers:
            stem = f"{solver}__{label}"
            try:
                series = _solve(solver, cfg, scenario, seed, n_runs, backend)
            except SolverError as exc:
                report.failures.append({"label": label, "solver": solver,
                                        "error": f"{type(exc).__name__}: {exc}"})
                if out is not None:
                    (out / f"{stem}.FAILED").write_text(f"{type(exc).__name__}: {exc}\n")
                continue
            curves[(solver, label)] = series
            entry["solvers"][solver] = summarize(series)
            if out is not None:
                series.to_csv(out / f"{stem}.csv")
        done = [s for s in solvers if (s, label) in curves]
        for i, s1 in enumerate(done):
            for s2 in done[i + 1:]:
                entry["deviations"][f"{s1}-{s2}"] = compare(curves[(s1, label)], curves[(s2, label)])
        report.points.append(entry)
    if out is not None:
        report.to_json(out / "report.json")
        if plot and curves:
            plot_curves(curves, out / f"{scenario.name}.png", title=scenario.name)
    return ScenarioResult(scenario, curves, report)


def plot_curves(curves, path, title=""):
    """Bound count against time, one line per curve, dashed without saturation."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    colors = {}
    for (solver, label), s in sorted(curves.items()):
        key = label.removesuffix("_sat").removesuffix("_nosat")
        color = colors.setdefault(key, f"C{len(colors) % 10}")
        style = "--" if label.endswith("nosat") else "-"
        if solver == "pbs":
            step = max(1, len(s) // 60)
            ax.plot(s.times[::step] / 1000, s.bound[::step], "d", ms=3, color=color,
                    fillstyle="none" if style == "--" else "full")
        else:
            ax.plot(s.times / 1000, s.bound, style, color=color, lw=1.2 if solver == "ssd" else 0.8,
                    label=f"{key or 'curve'} ({solver})" if style == "-" else None)
    ax.set_xlabel("t [ms]")
    ax.set_ylabel("bound receptors")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


# --- calibration -----------------------------------------------------------


def kappa_a_from_steady_state(i_ss, N, a, kappa_d):
    """Invert ``i_ss = N kappa_a / (kappa_a + a kappa_d)`` for ``kappa_a``."""
    if not 0 < i_ss < N:
        raise ValidationError(f"steady state {i_ss} outside (0, N={N}); cannot invert")
    return a * kappa_d * i_ss / (N - i_ss)


@dataclass
class CalibrationResult:
    kappa_a: float
    kappa_a_helper: float
    steady_state: float
    steady_state_se: float
    n_runs: int
    scenario: Scenario

    @property
    def relative_to_helper(self):
        return self.kappa_a / self.kappa_a_helper - 1.0


def calibrate(scenario: Scenario, seed=None, n_runs=None, backend=None) -> CalibrationResult:
    """Fit ``kappa_a`` to the PBS steady state without saturation or enzymes.

    Each run's bound count is averaged over the final ``calibration_window``
    fraction of the horizon; the mean over runs is inverted through the
    unsaturated steady-state formula. The returned scenario carries the fitted
    value as an explicit ``kappa_a``, which SSD and the oracle then use while
    PBS keeps the intrinsic ``kappa_a0``.
    """
    base = dataclasses.replace(scenario.config, saturation_enabled=False, degradation_enabled=False)
    base = validate(base)
    seed = scenario.seed if seed is None else int(seed)
    traces = pbs.simulate(base, seed=seed, n_runs=n_runs, backend=backend)
    t_end = traces[0].times[-1]
    tail = traces[0].times >= (1.0 - scenario.calibration_window) * t_end
    per_run = np.array([tr.bound[tail].mean() for tr in traces])
    i_ss = float(per_run.mean())
    se = float(per_run.std(ddof=1) / math.sqrt(len(per_run))) if len(per_run) > 1 else 0.0
    kin, geo = base.kinetics, base.geometry
    N = base.schedule.total
    kappa_a = kappa_a_from_steady_state(i_ss, N, geo.a, kin.kappa_d)
    helper = effective_adsorption(kin.kappa_a0, kin.r, kin.C_star, geo.face_area)
    new_kin = dataclasses.replace(scenario.config.kinetics, kappa_a=kappa_a)
    calibrated = dataclasses.replace(scenario, config=dataclasses.replace(scenario.config, kinetics=new_kin))
    return CalibrationResult(kappa_a, helper, i_ss, se, len(traces), calibrated)
