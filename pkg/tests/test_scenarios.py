import dataclasses
import json
import warnings

import numpy as np
import pytest

from synapse_ssd import core, scenarios, ssd
from synapse_ssd.errors import ConfigWarning, NoOverlap, ParseError, ValidationError
from synapse_ssd.series import TimeSeries


def small_scenario(**changes):
    d = json.loads(json.dumps(scenarios.scenario_to_dict(scenarios.load_scenario("fig3_single_release"))))
    d["config"]["disc"]["t_end"] = 150.0
    d["config"]["schedule"]["events"] = [{"t": 0.0, "N": 300}]
    d["config"]["disc"]["n_runs"] = 2
    d["sweep"] = {"parameter": "C_star", "values": [50, 203]}
    d["oracle"] = {"M": 64, "dt_fd": 0.15, "n_smoothing": 2}
    d.update(changes)
    return d


def write(tmp_path, data, name="sc.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


@pytest.mark.parametrize("name", scenarios.BUNDLED)
def test_bundled_scenarios_load(name):
    sc = scenarios.load_scenario(name)
    assert sc.name == name
    for _, _, _, cfg in sc.points():
        assert cfg.disc.T == 0.3 and cfg.disc.Q == 100


def test_fig3_is_table1_with_C_star_sweep():
    sc = scenarios.load_scenario("fig3_single_release.json")
    assert sc.sweep.parameter == "C_star"
    assert set(sc.saturation_modes) == {True, False}
    ref = core.validate(core.table1_config())
    pts = {(v, sat): cfg for _, v, sat, cfg in sc.points()}
    assert pts[(203, True)].disc.n_runs == 20
    assert pts[(203, True)] == dataclasses.replace(
        ref, disc=dataclasses.replace(ref.disc, n_runs=20))
    # the intrinsic rate stays fixed, so the effective rate follows C*
    assert pts[(50, True)].kinetics.kappa_a == pytest.approx(ref.kinetics.kappa_a * 50 / 203)


def test_fig2_keeps_effective_rate_fixed():
    sc = scenarios.load_scenario("fig2_steady_state")
    rates = {cfg.kinetics.kappa_a for *_, cfg in sc.points()}
    assert rates == {1.5294e-5}
    assert all(cfg.kinetics.kappa_e_CE == 0.0 for *_, cfg in sc.points())


def test_empty_file(tmp_path):
    p = tmp_path / "empty.json"
    p.write_text("")
    with pytest.raises(ParseError, match="empty"):
        scenarios.load_scenario(p)


def test_bad_json_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "name": "x",\n  "solvers": [ssd]\n}')
    with pytest.raises(ParseError, match="line 3"):
        scenarios.load_scenario(p)


def test_missing_file():
    with pytest.raises(ParseError, match="no such"):
        scenarios.load_scenario("/nonexistent/scenario.json")


def test_ms_schedule_normalised(tmp_path):
    d = small_scenario()
    d["config"]["schedule"]["events"] = [{"t": "0 ms", "N": 300}, {"t": "0.09 ms", "N": 300}]
    sc = scenarios.load_scenario(write(tmp_path, d))
    assert sc.config.schedule.events == ((0.0, 300.0), (90.0, 300.0))


@pytest.mark.parametrize("change,exc", [
    ({"solvers": []}, ValidationError),
    ({"solvers": ["fem"]}, ValidationError),
    ({"sweep": {"parameter": "colour", "values": [1]}}, ValidationError),
    ({"sweep": {"parameter": "C_star", "values": [0, 50]}}, ValidationError),
    ({"sweep": {"parameter": "C_star"}}, ParseError),
    ({"extra": 1}, ParseError),
    ({"seed": "one"}, ParseError),
    ({"saturation": "yes"}, ParseError),
])
def test_invalid_scenarios(tmp_path, change, exc):
    with pytest.raises(exc):
        scenarios.load_scenario(write(tmp_path, small_scenario(**change)))


def test_invalid_config_field_path(tmp_path):
    d = small_scenario()
    d["config"]["kinetics"]["D"] = "fast"
    with pytest.raises(ParseError, match=r"config\.kinetics\.D"):
        scenarios.load_scenario(write(tmp_path, d))


def test_scenario_dict_round_trip():
    sc = scenarios.load_scenario("fig4_multi_release")
    again = scenarios.scenario_from_dict(scenarios.scenario_to_dict(sc))
    assert [cfg for *_, cfg in again.points()] == [cfg for *_, cfg in sc.points()]


def test_compare_identical_is_zero():
    s = ssd.run(core.validate(core.table1_config(t_end=60.0)))
    rep = scenarios.compare(s, s)
    assert rep["max_abs"] == 0.0 and rep["peak_relative"] == 0.0


def test_compare_uses_coarser_grid():
    t_fine = np.linspace(0, 10, 101)
    t_coarse = np.linspace(0, 10, 11)
    fine = TimeSeries(t_fine, t_fine**2, t_fine, t_fine)
    coarse = TimeSeries(t_coarse, t_coarse**2, t_coarse, t_coarse)
    rep = scenarios.compare(fine, coarse)
    assert rep["n_points"] == 11 and rep["max_abs"] == pytest.approx(0.0, abs=1e-12)
    shifted = TimeSeries(t_coarse, t_coarse**2 + 1.0, t_coarse, t_coarse)
    rep = scenarios.compare(fine, shifted)
    assert rep["max_abs"] == pytest.approx(1.0)
    assert rep["peak_relative"] == pytest.approx(1.0 / 100.0)


def test_compare_without_overlap():
    a = TimeSeries([0.0, 1.0], [0.0, 1.0], [0, 0], [0, 0])
    b = TimeSeries([2.0, 3.0], [0.0, 1.0], [0, 0], [0, 0])
    with pytest.raises(NoOverlap):
        scenarios.compare(a, b)


def test_run_writes_outputs(tmp_path):
    sc = scenarios.load_scenario(write(tmp_path, small_scenario(solvers=["ssd", "oracle", "pbs"])))
    res = scenarios.run_scenario(sc, out_dir=tmp_path / "out")
    assert res.ok
    names = {p.name for p in (tmp_path / "out").iterdir()}
    for solver in ("ssd", "oracle", "pbs"):
        for label in ("C_star=50_sat", "C_star=50_nosat", "C_star=203_sat", "C_star=203_nosat"):
            assert f"{solver}__{label}.csv" in names
    assert {"report.json", "fig3_single_release.png"} <= names
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert len(report["points"]) == 4
    point = report["points"][0]
    assert set(point["solvers"]) == {"ssd", "oracle", "pbs"}
    assert {"ssd-oracle", "ssd-pbs", "oracle-pbs"} == set(point["deviations"])
    for key in ("peak", "t_peak", "steady_state", "runtime_s"):
        assert key in point["solvers"]["ssd"]
    head = (tmp_path / "out" / "pbs__C_star=203_sat.csv").read_text().splitlines()[0]
    assert head == "t_us,bound_mean,bound_se"


def test_runs_are_reproducible_and_order_independent(tmp_path):
    d = small_scenario(solvers=["ssd", "pbs"])
    d["config"]["disc"]["t_end"] = 30.0
    sc = scenarios.load_scenario(write(tmp_path, d))
    scenarios.run_scenario(sc, out_dir=tmp_path / "a", plot=False)
    scenarios.run_scenario(sc, out_dir=tmp_path / "b", plot=False)
    d["sweep"]["values"] = d["sweep"]["values"][::-1]
    scenarios.run_scenario(scenarios.load_scenario(write(tmp_path, d, "rev.json")),
                           out_dir=tmp_path / "c", plot=False)
    for p in (tmp_path / "a").glob("*.csv"):
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()
        assert p.read_bytes() == (tmp_path / "c" / p.name).read_bytes()


def test_solver_failure_is_recorded(tmp_path):
    d = small_scenario(solvers=["ssd", "oracle"])
    d["config"]["kinetics"]["kappa_a"] = 5e-2
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConfigWarning)
        sc = scenarios.load_scenario(write(tmp_path, d))
        res = scenarios.run_scenario(sc, out_dir=tmp_path / "out", plot=False)
    assert not res.ok
    failed = {(f["solver"], f["label"]) for f in res.report.failures}
    assert ("ssd", "C_star=203_sat") in failed
    assert (tmp_path / "out" / "ssd__C_star=203_sat.FAILED").exists()
    assert ("oracle", "C_star=203_sat") in res.curves


def test_empty_solver_override_rejected():
    sc = scenarios.load_scenario("fig4_multi_release")
    with pytest.raises(ValidationError):
        scenarios.run_scenario(sc, solvers=())


def test_fig2_saturated_steady_states_below_formula():
    sc = scenarios.load_scenario("fig2_steady_state")
    res = scenarios.run_scenario(sc, solvers=["ssd"])
    kin = sc.points()[0][3].kinetics
    formula = 1000.0 * kin.kappa_a / (kin.kappa_a + 0.02 * kin.kappa_d)
    for point in res.report.points:
        steady = point["solvers"]["ssd"]["steady_state"]
        if point["saturation"]:
            assert steady < formula
        else:
            assert steady == pytest.approx(formula, rel=1e-3)


def test_fig4_enhancement_smaller_with_saturation():
    sc = scenarios.load_scenario("fig4_multi_release")
    res = scenarios.run_scenario(sc)

    def ratio(series):
        t, b = series.times, series.bound
        return b[(t > 999.0) & (t < 1999.0)].max() / b[t < 999.0].max()

    for n in sc.sweep.values:
        sat = res.curves[("ssd", f"N={n}_sat")]
        nosat = res.curves[("ssd", f"N={n}_nosat")]
        assert ratio(sat) < ratio(nosat)


def test_kappa_a_inversion():
    kappa_a = 1.5294e-5
    i_ss = 1000.0 * kappa_a / (kappa_a + 0.02 * 8.5e-3)
    assert scenarios.kappa_a_from_steady_state(i_ss, 1000.0, 0.02, 8.5e-3) == pytest.approx(kappa_a)
    with pytest.raises(ValidationError):
        scenarios.kappa_a_from_steady_state(1000.0, 1000.0, 0.02, 8.5e-3)


def test_calibrate_small(tmp_path):
    d = small_scenario()
    d["config"]["schedule"]["events"] = [{"t": 0.0, "N": 400}]
    d["config"]["kinetics"]["kappa_d"] = 0.1
    d["config"]["disc"]["t_end"] = 60.0
    sc = scenarios.load_scenario(write(tmp_path, d))
    res = scenarios.calibrate(sc, n_runs=2)
    assert res.n_runs == 2 and res.kappa_a > 0
    assert res.scenario.config.kinetics.kappa_a == res.kappa_a
    assert res.kappa_a_helper == pytest.approx(1.5294e-5, rel=1e-3)
    # the calibrated scenario keeps the intrinsic rate for PBS
    assert res.scenario.config.kinetics.kappa_a0 == 1.02e-4
