import dataclasses
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synapse_ssd import core, spectral, ssd
from synapse_ssd.errors import ConfigWarning, NonFiniteState
from synapse_ssd.series import TimeSeries


def cfg_of(**kw):
    return core.validate(core.table1_config(**kw))


@pytest.fixture(scope="module")
def table1():
    return cfg_of(t_end=3000.0)


@pytest.fixture(scope="module")
def basis(table1):
    return spectral.build_basis(table1.geometry, table1.kinetics.D, table1.disc.Q)


@pytest.fixture(scope="module")
def table1_run(table1):
    return ssd.run(table1)


def test_init_is_zero(table1, basis):
    s = ssd.init(table1, basis)
    assert s.k == 0 and s.i_hat == 0.0 and s.p_prev == 0.0
    assert not s.ybar.any()
    assert ssd.bound_count(s) == 0.0
    assert np.all(spectral.output_concentration(s.ybar, np.linspace(0, 0.02, 9), basis) == 0.0)


def test_saturation_coefficients(table1):
    kin = table1.kinetics
    assert ssd.saturation_coefficients(0.0, kin) == (kin.kappa_a, 0.0)
    assert ssd.saturation_coefficients(kin.C_star, kin)[0] == 0.0
    assert ssd.saturation_coefficients(kin.C_star / 2, kin)[0] == pytest.approx(kin.kappa_a / 2)
    ka, kd = ssd.saturation_coefficients(50.0, kin, saturation_enabled=False)
    assert ka == kin.kappa_a and kd == pytest.approx(50 * kin.kappa_d)


def test_zero_rates_collapse_to_pure_diffusion(basis):
    cfg = cfg_of(kappa_a=0.0, kappa_d=0.0, kappa_e_CE=0.0)
    m = ssd.update_matrix(basis, cfg, 0.0)
    assert np.array_equal(m, np.diag(basis.exp_AT(cfg.disc.T)))
    s0 = ssd.initial_state(cfg, basis)
    s1 = ssd.step(s0, basis, cfg)
    assert np.array_equal(s1.ybar, basis.exp_AT(cfg.disc.T) * s0.ybar)
    assert s1.ybar[0] == s0.ybar[0] == 1000.0


def test_release_at_next_step_fills_every_mode(basis):
    cfg = cfg_of(release_times=(0.3,))
    s = ssd.step(ssd.init(cfg, basis), basis, cfg)
    assert np.array_equal(s.ybar, np.full(basis.Q, 1000.0))
    assert s.i_hat == 0.0


def test_step_matches_run(basis):
    cfg = cfg_of(t_end=30.0, release_times=(0.0, 15.0))
    series = ssd.run(cfg, basis=basis)
    s = ssd.initial_state(cfg, basis)
    bound = [s.i_hat]
    for _ in range(cfg.disc.n_steps):
        s = ssd.step(s, basis, cfg)
        bound.append(s.i_hat)
    assert np.allclose(series.bound, bound, rtol=1e-12, atol=1e-12)


def test_backends_agree(table1):
    a = ssd.run(table1, backend="numba")
    b = ssd.run(table1, backend="numpy")
    assert np.allclose(a.bound, b.bound, rtol=1e-12, atol=1e-10)
    assert a.metadata["backend"] == "numba" and b.metadata["backend"] == "numpy"


def test_run_is_deterministic(table1, table1_run):
    again = ssd.run(table1)
    assert np.array_equal(again.bound, table1_run.bound)
    assert again.to_csv() == table1_run.to_csv()


def test_run_length_and_metadata(table1, table1_run):
    assert len(table1_run) == table1.disc.n_steps + 1 == 10001
    assert table1_run.solver == "ssd"
    assert table1_run.metadata["config_hash"] == core.config_hash(table1)


def test_peak_near_0p3_ms(table1_run):
    t_peak, peak = table1_run.peak()
    assert 200.0 < t_peak < 400.0
    assert peak > 0


def test_zero_releases_give_zero_series(table1):
    cfg = dataclasses.replace(table1, schedule=core.ReleaseSchedule(()))
    s = ssd.run(cfg)
    assert not s.bound.any() and not s.solute_mass.any()


def test_triple_release_second_peak_larger_without_saturation():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConfigWarning)
        cfg = cfg_of(release_times=(0.0, 1000.0, 2000.0), saturation=False)
    s = ssd.run(cfg)
    first = s.bound[s.times < 1000.0]
    win = (s.times > 1000.0) & (s.times < 2000.0)
    second = s.bound[win]
    t2 = s.times[win][np.argmax(second)]
    assert second.max() > first.max()
    assert 1100.0 < t2 < 1350.0


@pytest.mark.parametrize("saturation", [True, False])
def test_mass_bookkeeping_without_degradation(saturation):
    cfg = cfg_of(degradation=False, saturation=saturation, release_times=(0.0, 600.0))
    s = ssd.run(cfg)
    released = np.where(s.times >= 600.0, 2000.0, 1000.0)
    assert np.max(np.abs(s.solute_mass + s.bound - released) / released) < 1e-3


def test_degradation_only_decay():
    cfg = cfg_of(kappa_a=0.0, kappa_d=0.0)
    s = ssd.run(cfg)
    expected = 1000.0 * np.exp(-cfg.kinetics.kappa_e_CE * s.times)
    assert np.max(np.abs(s.solute_mass / expected - 1.0)) < 1e-6
    assert not s.bound.any()


def test_bounds_hold_with_saturation(table1_run):
    assert table1_run.metadata["bounds_violation"] == 0.0


def test_linear_in_N_without_saturation():
    a = ssd.run(cfg_of(saturation=False, N=1000.0))
    b = ssd.run(cfg_of(saturation=False, N=2000.0))
    assert np.allclose(b.bound, 2 * a.bound, rtol=1e-12, atol=1e-12)


def test_subadditive_with_saturation():
    a = ssd.run(cfg_of(N=1000.0))
    b = ssd.run(cfg_of(N=2000.0))
    assert b.peak()[1] < 2 * a.peak()[1]


def test_halving_T_barely_moves_the_peak(table1_run):
    cfg = cfg_of()
    half = dataclasses.replace(cfg, disc=dataclasses.replace(cfg.disc, T=0.15))
    p0 = table1_run.peak()[1]
    p1 = ssd.run(half).peak()[1]
    assert abs(p1 / p0 - 1.0) < 5e-3


def test_unsaturated_steady_state_formula():
    cfg = cfg_of(saturation=False, degradation=False)
    s = ssd.run(cfg)
    kin = cfg.kinetics
    target = 1000.0 * kin.kappa_a / (kin.kappa_a + 0.02 * kin.kappa_d)
    assert target == pytest.approx(82.5388, abs=1e-3)
    assert s.bound[-1] == pytest.approx(target, rel=1e-6)


def test_receptors_fill_without_dissociation():
    cfg = cfg_of(kappa_d=0.0, degradation=False, kappa_a=1.5e-4, t_end=30000.0)
    s = ssd.run(cfg)
    c_star = cfg.kinetics.C_star
    assert s.bound[-1] == pytest.approx(c_star, rel=1e-3)
    assert s.bound.max() <= c_star * (1 + 1e-6)


def test_divergence_is_reported():
    with pytest.warns(ConfigWarning, match="unstable"):
        cfg = cfg_of(kappa_a=5e-2)
    with pytest.raises(NonFiniteState, match="smaller T"), pytest.warns(ConfigWarning):
        ssd.run(cfg)


def test_clamp_keeps_bound_in_range():
    with pytest.warns(ConfigWarning):
        cfg = cfg_of(kappa_a=5e-3, t_end=30.0)
    with pytest.warns(ConfigWarning):
        s = ssd.run(cfg, clamp=True)
    assert s.bound.min() >= 0.0 and s.bound.max() <= cfg.kinetics.C_star


def test_output_stride(table1, table1_run):
    strided = dataclasses.replace(table1, disc=dataclasses.replace(table1.disc, output_stride=10))
    s = ssd.run(strided)
    assert len(s) == 1001
    assert np.array_equal(s.bound, table1_run.bound[::10])


def test_csv_round_trip(tmp_path, table1_run):
    path = tmp_path / "ssd.csv"
    text = table1_run.to_csv(path)
    assert text.splitlines()[0] == "t_us,bound,c_at_a,solute_mass"
    back = TimeSeries.from_csv(path)
    assert np.array_equal(back.bound, table1_run.bound)
    assert np.array_equal(back.times, table1_run.times)


@settings(max_examples=15, deadline=None)
@given(
    kappa_a=st.floats(1e-6, 5e-5),
    kappa_d=st.floats(0.0, 2e-2),
    c_star=st.integers(20, 400),
    n=st.floats(100.0, 3000.0),
)
def test_bookkeeping_and_bounds_property(kappa_a, kappa_d, c_star, n):
    cfg = cfg_of(kappa_a=kappa_a, kappa_d=kappa_d, C_star=c_star, N=n, degradation=False,
                 t_end=600.0)
    s = ssd.run(cfg)
    assert np.max(np.abs(s.solute_mass + s.bound - n)) <= 1e-3 * n
    assert s.metadata["bounds_violation"] == 0.0
