"""Impedance extraction: closed forms without modulation, loop closure
against dense assembly, sweep bookkeeping and resonance search."""

import numpy as np
import pytest

from mmc_hss import hss_core, impedance_engine as ie, mmc_model as mm
from mmc_hss.errors import DegenerateResponseError, PoleAtResonanceError


@pytest.fixture(scope="module")
def params():
    return mm.CircuitParams(
        vdc=320e3, arm_inductance=0.36, arm_resistance=1.0,
        sm_capacitance=140e-6, sm_per_arm=20, fundamental_freq=50.0,
        modulation_index=0.847, load_resistance=550.0,
    )


@pytest.fixture(scope="module")
def params_m0():
    return mm.CircuitParams(
        vdc=320e3, arm_inductance=0.36, arm_resistance=1.0,
        sm_capacitance=140e-6, sm_per_arm=20, fundamental_freq=50.0,
        modulation_index=0.0, load_resistance=550.0,
    )


@pytest.fixture(scope="module")
def op(params):
    return mm.steady_state(params, 4)


OPEN = mm.ControlConfig(mode="open")
ACV = mm.ControlConfig(mode="acv", kpv=1.0, krv=20.0, sampling_period=1e-4)
CCC = mm.ControlConfig(mode="ccc", ra=20.0, sampling_period=1e-4)


def _series_arm(params, f):
    # one arm: R + jwL + stack capacitance, the m = 0 circulating path
    w = 2.0 * np.pi * f
    return (params.arm_resistance + 1j * w * params.arm_inductance
            + 1.0 / (4j * w * params.arm_capacitance))


# ----------------------------------------------------------- m = 0 closed form


def test_m0_matches_closed_form(params_m0):
    # without modulation the harmonics decouple and the ac-side impedance
    # is exactly half an arm, at any probe frequency
    for f in (7.0, 35.0, 123.7, 250.0, 499.0):
        z = ie.impedance_at(params_m0, OPEN, f, order=4).impedance
        want = 0.5 * _series_arm(params_m0, f)
        assert abs(z - want) <= 1e-10 * abs(want)
        assert z.real == pytest.approx(0.5, rel=1e-9)


def test_m0_circulating_matches_closed_form(params_m0):
    for f in (15.0, 80.3, 300.0):
        z = ie.circulating_impedance_at(params_m0, OPEN, f, order=4).impedance
        want = _series_arm(params_m0, f)
        assert abs(z - want) <= 1e-10 * abs(want)


def test_m0_notch_at_arm_resonance(params_m0):
    # series resonance of L against the four-fold stack capacitance
    f_notch = 1.0 / (2.0 * np.pi * np.sqrt(
        4.0 * params_m0.arm_inductance * params_m0.arm_capacitance))
    res = ie.sweep(params_m0, OPEN, freqs=np.arange(45.0, 56.01, 0.25))
    notches = ie.find_resonances(res, "notch")
    assert len(notches) == 1
    assert notches[0].kind == "notch"
    assert notches[0].freq_hz == pytest.approx(f_notch, abs=0.05)
    # |Z| bottoms out at R/2; parabolic refinement lands close to it
    assert 0.49 < notches[0].magnitude < 0.56


def test_m0_ccc_adds_emulated_resistance_in_series(params_m0):
    # without modulation the circulating loop is exactly a series element
    # ra * exp(-1.5 Ts s) in the circulating path
    op0 = mm.steady_state(params_m0, 4)
    for f in (10.0, 123.0):
        zo = ie.circulating_impedance_at(params_m0, OPEN, f, op=op0).impedance
        zc = ie.circulating_impedance_at(params_m0, CCC, f, op=op0).impedance
        w = 2.0 * np.pi * f
        want = 20.0 * np.exp(-1.5j * 1e-4 * w)
        assert abs((zc - zo) - want) <= 1e-12 * abs(want)


# -------------------------------------------------------------- loop closure


def test_response_scales_linearly_with_probe(params, op):
    wp = 2.0 * np.pi * 37.0
    x1 = ie._closed_loop_response(params, ACV, op, 4, wp, v_p=1.0)
    x2 = ie._closed_loop_response(params, ACV, op, 4, wp, v_p=17.3)
    floor = 1e-13 * np.abs(x2.data).max()
    np.testing.assert_allclose(x2.data, 17.3 * x1.data, rtol=1e-12, atol=floor)


def test_channel_solve_matches_dense_assembly_off_pole(params, op):
    wp = 2.0 * np.pi * 37.0
    n_p = hss_core.build_shift(4, 4, params.omega1, omega_off=wp)

    a, b, u = mm.build_acv_perturbation(params, ACV, op, 4, wp)
    x = np.linalg.solve(a - n_p.matrix, -(b @ u.data))
    i_gp = x[4 * 4 + 3]
    z_dense = -(1.0 + 550.0 * i_gp) / i_gp
    z_chan = ie.impedance_at(params, ACV, 37.0, order=4, op=op).impedance
    assert abs(z_chan - z_dense) <= 1e-12 * abs(z_dense)

    a2, u2 = mm.build_ccc_perturbation(params, CCC, op, 4, wp)
    x2 = np.linalg.solve(a2 - n_p.matrix, -u2.data)
    i_gp2 = x2[4 * 4 + 3]
    z_dense2 = -(1.0 + 550.0 * i_gp2) / i_gp2
    z_chan2 = ie.impedance_at(params, CCC, 37.0, order=4, op=op).impedance
    assert abs(z_chan2 - z_dense2) <= 1e-12 * abs(z_dense2)


def test_channel_solve_survives_resonator_pole(params, op):
    # 100 and 200 Hz put a sideband exactly on the undamped 50 Hz pole:
    # the assembled operator does not exist, the channel solve does
    with pytest.raises(PoleAtResonanceError):
        mm.build_acv_perturbation(params, ACV, op, 4, 2.0 * np.pi * 200.0)
    z200 = ie.impedance_at(params, ACV, 200.0, order=4, op=op)
    assert z200.magnitude == pytest.approx(102.9163, rel=1e-4)
    assert z200.phase_deg == pytest.approx(95.746, abs=1e-2)
    z100 = ie.impedance_at(params, ACV, 100.0, order=4, op=op)
    assert z100.magnitude == pytest.approx(2181.31, rel=1e-3)
    assert z100.phase_deg == pytest.approx(38.452, abs=0.05)


def test_acv_impedance_vanishes_at_fundamental(params, op):
    # infinite resonant gain at f1 forces the terminal-voltage deviation to
    # zero: the converter looks like a short to a 50 Hz probe (this sharp
    # feature is why sweeps guard-band the fundamental)
    z = ie.impedance_at(params, ACV, 50.0, order=4, op=op)
    assert z.magnitude < 1e-9


def test_zero_gain_loops_equal_open_loop(params):
    z_open = ie.impedance_at(params, OPEN, 37.0).impedance
    z_acv0 = ie.impedance_at(
        params, mm.ControlConfig(mode="acv", kpv=0.0, krv=0.0), 37.0).impedance
    z_ccc0 = ie.impedance_at(
        params, mm.ControlConfig(mode="ccc", ra=0.0), 37.0).impedance
    assert z_acv0 == pytest.approx(z_open, rel=1e-13)
    assert z_ccc0 == pytest.approx(z_open, rel=1e-13)


def test_truncation_refinement_converges(params):
    # doubling the kept sidebands shrinks the update between orders
    for f in (21.0, 80.0):
        z = {h: ie.impedance_at(params, OPEN, f, order=h).impedance
             for h in (2, 4, 6, 8)}
        d24 = abs(z[4] - z[2])
        d46 = abs(z[6] - z[4])
        d68 = abs(z[8] - z[6])
        assert d24 > d46 > d68


def test_impedance_at_validation(params):
    with pytest.raises(ValueError):
        ie.impedance_at(params, OPEN, 0.0)
    with pytest.raises(ValueError):
        ie.impedance_at(params, OPEN, -10.0)
    with pytest.raises(ValueError):
        ie.impedance_at(params, OPEN, 35.0, order=0)
    with pytest.raises(ValueError):
        ie.impedance_at(params, OPEN, 35.0, order=17)
    with pytest.raises(ValueError):
        ie.circulating_impedance_at(params, OPEN, 0.0)


def test_degenerate_response_detected(params, monkeypatch):
    def no_response(a, n_p, u, b=None):
        return hss_core.HarmonicVector(4, 4, np.zeros(36, dtype=complex))

    monkeypatch.setattr(ie.hss_core, "solve_perturbation", no_response)
    with pytest.raises(DegenerateResponseError):
        ie.impedance_at(params, OPEN, 35.0, order=4)


def test_point_accessors(params_m0):
    z = ie.impedance_at(params_m0, OPEN, 35.0)
    assert z.mode == "open"
    assert z.order == 4
    assert z.freq_hz == 35.0
    assert z.magnitude == pytest.approx(abs(z.impedance))
    assert z.magnitude_db == pytest.approx(20 * np.log10(abs(z.impedance)))
    # capacitive below the arm resonance
    assert -90.5 < z.phase_deg < -85.0


# -------------------------------------------------------------------- sweeps


def test_sweep_default_grid_open(params):
    res = ie.sweep(params, OPEN)
    assert len(res.points) == 496
    assert res.excluded == ()
    assert res.failures == ()
    f = res.frequencies
    assert f[0] == 5.0 and f[-1] == 500.0
    assert np.all(np.diff(f) > 0)
    assert np.all(np.isfinite(res.impedances))


def test_sweep_guard_band_around_fundamental(params):
    grid = np.arange(44.0, 57.0, 1.0)
    res = ie.sweep(params, ACV, freqs=grid)
    assert res.excluded == (48.0, 49.0, 50.0, 51.0, 52.0)
    assert len(res.points) == len(grid) - 5
    # explicit zero width keeps every point, including f1 itself
    res_all = ie.sweep(params, ACV, freqs=grid, guard_band_hz=0.0)
    assert res_all.excluded == ()
    assert len(res_all.points) == len(grid)
    # damped resonator or plain modes never guard-band by default
    assert ie._guard_band(OPEN) == 0.0
    assert ie._guard_band(CCC) == 0.0
    assert ie._guard_band(mm.ControlConfig(
        mode="acv", kpv=1.0, krv=20.0, resonant_damping=5.0)) == 0.0
    assert ie._guard_band(ACV) == ie.DEFAULT_GUARD_BAND_HZ


def test_sweep_input_validation(params):
    with pytest.raises(ValueError):
        ie.sweep(params, OPEN, freqs=np.array([]))
    with pytest.raises(ValueError):
        ie.sweep(params, OPEN, freqs=np.array([10.0, -5.0]))


def test_sweep_records_isolated_failures(params, monkeypatch):
    real = ie.impedance_at

    def flaky(p, c, f, order=4, op=None):
        if f in (20.0,):
            raise DegenerateResponseError("synthetic failure")
        return real(p, c, f, order, op=op)

    monkeypatch.setattr(ie, "impedance_at", flaky)
    grid = np.arange(10.0, 22.0, 1.0)  # 12 points, 1 failure is under 10%
    res = ie.sweep(params, OPEN, freqs=grid)
    assert len(res.points) == 11
    assert len(res.failures) == 1
    assert res.failures[0][0] == 20.0
    assert "synthetic failure" in res.failures[0][1]


def test_sweep_raises_when_too_many_points_fail(params, monkeypatch):
    def broken(p, c, f, order=4, op=None):
        raise DegenerateResponseError("synthetic failure")

    monkeypatch.setattr(ie, "impedance_at", broken)
    with pytest.raises(DegenerateResponseError):
        ie.sweep(params, OPEN, freqs=np.arange(10.0, 20.0, 1.0))


def test_sweep_threaded_matches_sequential(params, monkeypatch):
    grid = np.arange(30.0, 50.0, 1.0)
    seq = ie.sweep(params, OPEN, freqs=grid)
    monkeypatch.setenv("MMC_HSS_THREADS", "3")
    par = ie.sweep(params, OPEN, freqs=grid)
    np.testing.assert_array_equal(par.frequencies, seq.frequencies)
    np.testing.assert_array_equal(par.impedances, seq.impedances)


def test_workers_from_env(monkeypatch):
    monkeypatch.delenv("MMC_HSS_THREADS", raising=False)
    assert ie.workers_from_env() == 1
    monkeypatch.setenv("MMC_HSS_THREADS", "4")
    assert ie.workers_from_env() == 4
    monkeypatch.setenv("MMC_HSS_THREADS", "zero")
    with pytest.raises(ValueError):
        ie.workers_from_env()
    monkeypatch.setenv("MMC_HSS_THREADS", "0")
    with pytest.raises(ValueError):
        ie.workers_from_env()


# ----------------------------------------------------------------- resonances


def _fake_sweep(freqs, mags):
    pts = tuple(
        ie.ImpedancePoint(f, m + 0j, "open", 4) for f, m in zip(freqs, mags)
    )
    return ie.SweepResult(None, None, 4, pts)


def test_find_resonances_on_synthetic_data():
    res = _fake_sweep(
        [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0],
        [5.0, 3.0, 2.0, 3.0, 5.0, 7.0, 6.0],
    )
    both = ie.find_resonances(res)
    assert [r.kind for r in both] == ["notch", "peak"]
    # symmetric neighbours: refinement keeps the grid point
    assert both[0].freq_hz == pytest.approx(3.0)
    assert both[0].magnitude == pytest.approx(2.0)
    assert both[1].freq_hz == pytest.approx(6.0, abs=0.5)
    assert ie.find_resonances(res, "peak")[0].kind == "peak"
    assert ie.find_resonances(res, "notch")[0].kind == "notch"
    with pytest.raises(ValueError):
        ie.find_resonances(res, "trough")


def test_open_loop_resonance_map(params):
    # the reference leg shows a large low-frequency peak plus mid-band
    # structure; pin where they sit on the default grid
    res = ie.sweep(params, OPEN)
    peaks = ie.find_resonances(res, "peak")
    freqs = [round(r.freq_hz, 1) for r in peaks]
    assert freqs == [21.1, 77.8, 99.4, 119.5]
    assert peaks[0].magnitude == pytest.approx(1896.0, rel=0.05)
    assert peaks[2].magnitude == pytest.approx(255.8, rel=0.05)
