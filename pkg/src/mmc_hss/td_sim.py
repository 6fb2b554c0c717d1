"""Nonlinear time-domain reference simulation.

Fixed-step fourth-order Runge-Kutta integration of the averaged two-arm
converter model, with the sampled-data controllers reproduced literally:
commands are computed once per control period from sampled measurements
and take effect one period after sampling, held constant in between. The
module exists to cross-check the frequency-domain machinery in
impedance_engine against an independent formulation, so it shares no
linearization or harmonic-balance code with the rest of the package;
everything here is plain time stepping.

Impedance measurement follows a two-run protocol: a baseline run and a
perturbed run integrate the identical schedule, phasors are extracted
from both at the probe frequency, and the baseline phasor is subtracted
so that steady-state harmonics cancel exactly and only the perturbation
response remains. Probe frequencies must be commensurate with the
fundamental so the measurement window holds an integer number of periods
of both.

Integration steps are aligned with control periods and cycle boundaries,
so halving the step leaves every sampling instant in place; that keeps
the global error scaling clean (16x per halving for the fourth-order
scheme) and makes runs bit-reproducible.
"""

from __future__ import annotations

import functools
import math
import os
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DegenerateResponseError, DivergenceError
from .impedance_engine import ImpedancePoint
from .mmc_model import CircuitParams, ControlConfig

# hard ceiling on any state before the run is declared divergent
_BLOWUP_LIMIT = 1e12

# fraction of V_dc/2 used as probe amplitude when none is given
_DEFAULT_PROBE_FRACTION = 0.02

# common-mode insertion-index probe amplitude for circulating-loop runs
_DEFAULT_INSERTION_PROBE = 0.002

_CSV_HEADER = "t_s,i_c_a,v_cu_v,v_cl_v,i_g_a,v_g_v"

_COLUMNS = {
    "t": 0,
    "i_c": 1,
    "v_cu": 2,
    "v_cl": 3,
    "i_g": 4,
    "v_g": 5,
    "n_u": 6,
    "n_l": 7,
}


@dataclass(frozen=True)
class SimConfig:
    """Knobs for one simulation campaign.

    dt must divide the fundamental period into at least 200 steps; the
    default resolves a 50 Hz cycle with 2000. settle_cycles is a budget,
    not a fixed cost: settling stops early once consecutive cycles agree
    to periodicity_tol (relative rms, per state). The perturbation is
    faded in over ramp_cycles with a raised-cosine envelope, then
    post_ramp_cycles are discarded before the measurement window opens.
    measure_cycles counts common periods of the fundamental and the
    probe, not fundamental cycles.
    """

    dt: float = 1e-5
    settle_cycles: int = 300
    measure_cycles: int = 2
    ramp_cycles: int = 20
    post_ramp_cycles: int = 30
    perturb_freq: float = 0.0
    perturb_amplitude: float = 0.0
    periodicity_tol: float = 1e-6
    reference_settle_cycles: int = 800

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        for name in ("settle_cycles", "measure_cycles",
                     "reference_settle_cycles"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be at least 1")
        for name in ("ramp_cycles", "post_ramp_cycles"):
            if int(getattr(self, name)) < 0:
                raise ValueError(f"{name} must not be negative")
        if self.perturb_freq < 0.0:
            raise ValueError("perturb_freq must not be negative")
        if self.perturb_amplitude < 0.0:
            raise ValueError("perturb_amplitude must not be negative")
        if self.periodicity_tol <= 0.0:
            raise ValueError("periodicity_tol must be positive")


@dataclass(frozen=True)
class TimeSeries:
    """Sampled trajectory over the measurement window.

    t is absolute simulation time (the settling phase happened before
    t[0]), sampled uniformly at dt. v_g is the point-of-connection
    voltage including the series perturbation source, n_u and n_l the
    insertion indices actually applied, controller contributions and
    probes included. periodicity_residual reports the cycle-to-cycle
    mismatch reached at the end of settling.
    """

    params: CircuitParams
    dt: float
    t: np.ndarray
    i_c: np.ndarray
    v_cu: np.ndarray
    v_cl: np.ndarray
    i_g: np.ndarray
    v_g: np.ndarray
    n_u: np.ndarray
    n_l: np.ndarray
    periodicity_residual: float = 0.0
    settle_cycles_used: int = 0

    def __post_init__(self):
        for name in ("t", "i_c", "v_cu", "v_cl", "i_g", "v_g",
                     "n_u", "n_l"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
            if arr.shape != self.t.shape:
                raise ValueError("trajectory columns must share one length")

    def column(self, name: str) -> np.ndarray:
        if name not in _COLUMNS:
            raise KeyError(f"unknown signal {name!r}")
        return getattr(self, name)


def write_trajectory_csv(series: TimeSeries, path) -> None:
    """Dump the electrical columns to CSV (insertion indices omitted)."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(_CSV_HEADER + "\n")
        for k in range(series.t.size):
            row = (series.t[k], series.i_c[k], series.v_cu[k],
                   series.v_cl[k], series.i_g[k], series.v_g[k])
            fh.write(",".join(f"{v:.9g}" for v in row) + "\n")


# ---------------------------------------------------------------------------
# integration kernel
#
# The right-hand side and the span stepper are written as flat float
# arithmetic so they can be compiled with numba when it is installed;
# the pure-Python versions are the fallback and the reference. Set
# MMC_HSS_NO_JIT=1 to force the fallback.


def _rhs_py(t, y0, y1, y2, y3,
            r_arm, l_arm, c_arm, vdc, l_eff, r_out,
            w1, mod1, th1, mod2, th2,
            use_acv, vm, dn,
            wp, vamp, pamp, t_r0, t_r1):
    second = 0.5 * mod2 * math.cos(2.0 * w1 * t + th2)
    if use_acv == 1:
        base = vm / vdc
    else:
        base = 0.5 * mod1 * math.cos(w1 * t + th1)
    nu = 0.5 - base - second + dn
    nl = 0.5 + base - second + dn

    vp = 0.0
    if vamp != 0.0 or pamp != 0.0:
        if t >= t_r1:
            env = 1.0
        elif t < t_r0:
            env = 0.0
        else:
            env = 0.5 - 0.5 * math.cos(math.pi * (t - t_r0) / (t_r1 - t_r0))
        if env != 0.0:
            carrier = env * math.cos(wp * t)
            vp = vamp * carrier
            probe = pamp * carrier
            nu += probe
            nl += probe

    iu = y0 + 0.5 * y3
    il = y0 - 0.5 * y3
    d0 = (0.5 * vdc - r_arm * y0 - 0.5 * (nu * y1 + nl * y2)) / l_arm
    d1 = nu * iu / c_arm
    d2 = nl * il / c_arm
    d3 = (-nu * y1 + nl * y2 - r_out * y3 - 2.0 * vp) / l_eff
    return d0, d1, d2, d3, nu, nl, vp


_RHS = _rhs_py


def _advance_py(y, step0, n_steps, dt,
                r_arm, l_arm, c_arm, vdc, l_eff, r_out, r_load, l_load,
                w1, mod1, th1, mod2, th2,
                use_acv, use_ccc, kp_eff, rot_c, rot_s, g1, g2, ra_over_vdc,
                ctrl_every, vref, icref, ctrl,
                wp, vamp, pamp, ramp_s0, ramp_s1,
                rec):
    y0 = y[0]
    y1 = y[1]
    y2 = y[2]
    y3 = y[3]
    xa = ctrl[0]
    xb = ctrl[1]
    vm_pend = ctrl[2]
    vm_app = ctrl[3]
    dn_pend = ctrl[4]
    dn_app = ctrl[5]
    n_ref = vref.shape[0]
    rec_on = rec.shape[0] > 0
    closed = use_acv == 1 or use_ccc == 1
    t_r0 = ramp_s0 * dt
    t_r1 = ramp_s1 * dt
    h2 = 0.5 * dt

    for i in range(n_steps):
        s = step0 + i
        t = s * dt
        boundary = closed and s % ctrl_every == 0
        if boundary:
            # the command computed one sample ago takes effect now
            vm_app = vm_pend
            dn_app = dn_pend
        d0, d1, d2, d3, nu, nl, vp = _RHS(
            t, y0, y1, y2, y3,
            r_arm, l_arm, c_arm, vdc, l_eff, r_out,
            w1, mod1, th1, mod2, th2,
            use_acv, vm_app, dn_app, wp, vamp, pamp, t_r0, t_r1)
        vg = vp + r_load * y3 + l_load * d3
        if rec_on:
            rec[i, 0] = t
            rec[i, 1] = y0
            rec[i, 2] = y1
            rec[i, 3] = y2
            rec[i, 4] = y3
            rec[i, 5] = vg
            rec[i, 6] = nu
            rec[i, 7] = nl
        if boundary:
            idx = (s // ctrl_every) % n_ref
            if use_acv == 1:
                err = vref[idx] - vg
                vm_pend = kp_eff * err + xa
                xa_new = rot_c * xa + rot_s * xb + g1 * err
                xb_new = -rot_s * xa + rot_c * xb + g2 * err
                xa = xa_new
                xb = xb_new
            if use_ccc == 1:
                dn_pend = ra_over_vdc * (y0 - icref[idx])

        e0, e1, e2, e3, nu, nl, vp = _RHS(
            t + h2, y0 + h2 * d0, y1 + h2 * d1, y2 + h2 * d2, y3 + h2 * d3,
            r_arm, l_arm, c_arm, vdc, l_eff, r_out,
            w1, mod1, th1, mod2, th2,
            use_acv, vm_app, dn_app, wp, vamp, pamp, t_r0, t_r1)
        f0, f1, f2, f3, nu, nl, vp = _RHS(
            t + h2, y0 + h2 * e0, y1 + h2 * e1, y2 + h2 * e2, y3 + h2 * e3,
            r_arm, l_arm, c_arm, vdc, l_eff, r_out,
            w1, mod1, th1, mod2, th2,
            use_acv, vm_app, dn_app, wp, vamp, pamp, t_r0, t_r1)
        g0_, g1_, g2_, g3_, nu, nl, vp = _RHS(
            t + dt, y0 + dt * f0, y1 + dt * f1, y2 + dt * f2, y3 + dt * f3,
            r_arm, l_arm, c_arm, vdc, l_eff, r_out,
            w1, mod1, th1, mod2, th2,
            use_acv, vm_app, dn_app, wp, vamp, pamp, t_r0, t_r1)
        sixth = dt / 6.0
        y0 += sixth * (d0 + 2.0 * e0 + 2.0 * f0 + g0_)
        y1 += sixth * (d1 + 2.0 * e1 + 2.0 * f1 + g1_)
        y2 += sixth * (d2 + 2.0 * e2 + 2.0 * f2 + g2_)
        y3 += sixth * (d3 + 2.0 * e3 + 2.0 * f3 + g3_)

    y[0] = y0
    y[1] = y1
    y[2] = y2
    y[3] = y3
    ctrl[0] = xa
    ctrl[1] = xb
    ctrl[2] = vm_pend
    ctrl[3] = vm_app
    ctrl[4] = dn_pend
    ctrl[5] = dn_app


_ADVANCE = _advance_py

if not os.environ.get("MMC_HSS_NO_JIT"):
    try:
        from numba import njit
    except ImportError:
        njit = None
    if njit is not None:
        _RHS = njit(cache=True)(_rhs_py)
        _ADVANCE = njit(cache=True)(_advance_py)


# ---------------------------------------------------------------------------
# run orchestration


def _steps_per_cycle(params: CircuitParams, dt: float) -> int:
    ratio = params.period / dt
    spc = int(round(ratio))
    if abs(ratio - spc) > 1e-9 * max(1.0, ratio):
        raise ValueError("dt must divide the fundamental period exactly")
    if spc < 200:
        raise ValueError("dt too coarse: need at least 200 steps per cycle")
    return spc


def _control_strides(params, config, dt, spc):
    ratio = config.sampling_period / dt
    every = int(round(ratio))
    if every < 1 or abs(ratio - every) > 1e-9 * max(1.0, ratio):
        raise ValueError("dt must divide the control sampling period")
    if spc % every != 0:
        raise ValueError(
            "control sampling period must divide the fundamental period")
    return every, spc // every


def _frac_gcd(a: Fraction, b: Fraction) -> Fraction:
    num = math.gcd(a.numerator * b.denominator, b.numerator * a.denominator)
    return Fraction(num, a.denominator * b.denominator)


def _common_cycles(params: CircuitParams, freqs) -> int:
    """Fundamental cycles in one common period of f1 and every probe."""
    g = Fraction(params.fundamental_freq).limit_denominator(10 ** 6)
    for f in freqs:
        if f <= 0.0:
            raise ValueError("probe frequency must be positive")
        g = _frac_gcd(g, Fraction(float(f)).limit_denominator(10 ** 6))
    cycles = Fraction(
        params.fundamental_freq).limit_denominator(10 ** 6) / g
    if cycles.denominator != 1:
        raise ValueError("could not reduce probe grid to a common period")
    if cycles.numerator > 400:
        raise ValueError(
            "probe frequencies are not commensurate with the fundamental "
            "(common period longer than 400 cycles)")
    return int(cycles)


def _check_state(y, t):
    for v in y:
        if not math.isfinite(v) or abs(v) > _BLOWUP_LIMIT:
            raise DivergenceError(
                f"simulation diverged by t = {t:.6f} s", time=t)


def _cycle_residual(cur, prev):
    worst = 0.0
    for j in range(1, 5):
        diff = cur[:, j] - prev[:, j]
        num = math.sqrt(float(np.mean(diff * diff)))
        den = math.sqrt(float(np.mean(cur[:, j] ** 2)))
        worst = max(worst, num / max(den, 1.0))
    return worst


_ZERO_REF = np.zeros(1)


class _Runner:
    """Bundles the kernel's argument soup for one (params, config, dt)."""

    def __init__(self, params, config, dt, vref, icref):
        self.params = params
        self.config = config
        self.dt = dt
        self.spc = _steps_per_cycle(params, dt)
        use_acv = 1 if (config is not None and config.has_acv) else 0
        use_ccc = 1 if (config is not None and config.has_ccc) else 0
        if use_acv or use_ccc:
            every, _ = _control_strides(params, config, dt, self.spc)
            w1ts = params.omega1 * config.sampling_period
            rot_c = math.cos(w1ts)
            rot_s = math.sin(w1ts)
            g1 = config.krv * math.sin(w1ts) / params.omega1
            g2 = config.krv * (math.cos(w1ts) - 1.0) / params.omega1
            kp_eff = config.kpv + config.kf
            ra_over_vdc = config.ra / params.vdc
        else:
            every, rot_c, rot_s, g1, g2 = 1, 1.0, 0.0, 0.0, 0.0
            kp_eff, ra_over_vdc = 0.0, 0.0
        self.args = (
            params.arm_resistance, params.arm_inductance,
            params.arm_capacitance, params.vdc,
            params.arm_inductance + 2.0 * params.load_inductance,
            params.arm_resistance + 2.0 * params.load_resistance,
            params.load_resistance, params.load_inductance,
            params.omega1, params.modulation_index, params.modulation_phase,
            params.modulation_index_2h, params.modulation_phase_2h,
            use_acv, use_ccc, kp_eff, rot_c, rot_s, g1, g2, ra_over_vdc,
            every,
            np.ascontiguousarray(vref, dtype=float),
            np.ascontiguousarray(icref, dtype=float),
        )
        self.ctrl = np.zeros(6)
        if use_acv:
            # seed the resonant state on the open-loop modulation voltage so
            # the loop starts near its own steady state instead of winding up
            amp = 0.5 * params.modulation_index * params.vdc
            self.ctrl[0] = amp * math.cos(params.modulation_phase)
            self.ctrl[1] = -amp * math.sin(params.modulation_phase)
            self.ctrl[2] = self.ctrl[3] = self.ctrl[0]

    def advance(self, y, step0, n_steps, wp=0.0, vamp=0.0, pamp=0.0,
                ramp_s0=0, ramp_s1=0, rec=None):
        if rec is None:
            rec = np.empty((0, 8))
        _ADVANCE(y, step0, n_steps, self.dt, *self.args, self.ctrl,
                 wp, vamp, pamp, ramp_s0, ramp_s1, rec)
        return step0 + n_steps


def _settle(runner, y, step, budget, tol):
    """Advance whole cycles until two agree to tol; returns diagnostics."""
    spc = runner.spc
    buf = np.empty((spc, 8))
    prev = np.empty((spc, 8))
    residual = math.inf
    used = 0
    for cyc in range(budget):
        step = runner.advance(y, step, spc, rec=buf)
        _check_state(y, step * runner.dt)
        used = cyc + 1
        if cyc > 0:
            residual = _cycle_residual(buf, prev)
            if residual <= tol:
                break
        buf, prev = prev, buf
    else:
        warnings.warn(
            f"settling budget exhausted at residual {residual:.3e} "
            f"(tolerance {tol:.1e})", RuntimeWarning, stacklevel=2)
    return step, residual, used


@functools.lru_cache(maxsize=8)
def _reference_cycle(params: CircuitParams, dt: float, sampling_period: float,
                     budget: int, tol: float):
    """Settled open-loop cycle, sampled at the controller rate.

    Returns (v_g samples, i_c samples, end state, residual, cycles used).
    Cached because every closed-loop run at the same operating point needs
    the same references.
    """
    runner = _Runner(params, None, dt, _ZERO_REF, _ZERO_REF)
    every = int(round(sampling_period / dt))
    if every < 1 or runner.spc % every != 0:
        raise ValueError(
            "control sampling period must divide the fundamental period")
    y = np.array([0.0, params.vdc, params.vdc, 0.0])
    step, residual, used = _settle(runner, y, 0, budget, tol)
    buf = np.empty((runner.spc, 8))
    runner.advance(y, step, runner.spc, rec=buf)
    _check_state(y, (step + runner.spc) * dt)
    vref = buf[::every, 5].copy()
    icref = buf[::every, 1].copy()
    vref.setflags(write=False)
    icref.setflags(write=False)
    return vref, icref, y.copy(), residual, used


def _run(params, config, sim, f_p, v_amp, probe_amp,
         window_cycles=None) -> TimeSeries:
    """One full schedule: settle, ramp the probe in, record a window.

    The baseline run of a measurement pair uses the same schedule with
    zero amplitude, so both runs share every sampling instant and any
    residual settling error subtracts out exactly.
    """
    dt = sim.dt
    closed = config is not None and config.mode != "open"
    if closed:
        vref, icref, y0, _, _ = _reference_cycle(
            params, dt, config.sampling_period,
            sim.reference_settle_cycles, sim.periodicity_tol)
        runner = _Runner(params, config, dt, vref, icref)
        y = y0.copy()
    else:
        runner = _Runner(params, None if config is None else config, dt,
                         _ZERO_REF, _ZERO_REF)
        y = np.array([0.0, params.vdc, params.vdc, 0.0])
    spc = runner.spc

    step, residual, used = _settle(
        runner, y, 0, sim.settle_cycles, sim.periodicity_tol)

    wp = 2.0 * math.pi * f_p
    if f_p > 0.0:
        n_common = _common_cycles(params, (f_p,))
        ramp_s0 = step
        ramp_s1 = step + sim.ramp_cycles * spc
        lead = (sim.ramp_cycles + sim.post_ramp_cycles) * spc
        if lead:
            step = runner.advance(y, step, lead, wp, v_amp, probe_amp,
                                  ramp_s0, ramp_s1)
            _check_state(y, step * dt)
    else:
        n_common = 1
        ramp_s0 = ramp_s1 = step
    if window_cycles is None:
        window_cycles = sim.measure_cycles * n_common
    elif window_cycles % n_common:
        raise ValueError("window does not hold whole probe periods")

    n_win = window_cycles * spc
    rec = np.empty((n_win, 8))
    step = runner.advance(y, step, n_win, wp, v_amp, probe_amp,
                          ramp_s0, ramp_s1, rec)
    _check_state(y, step * dt)

    return TimeSeries(
        params=params, dt=dt, t=rec[:, 0],
        i_c=rec[:, 1], v_cu=rec[:, 2], v_cl=rec[:, 3], i_g=rec[:, 4],
        v_g=rec[:, 5], n_u=rec[:, 6], n_l=rec[:, 7],
        periodicity_residual=residual, settle_cycles_used=used)


def simulate(params: CircuitParams, config: ControlConfig | None,
             sim: SimConfig, perturb: tuple | None = None) -> TimeSeries:
    """Integrate to periodic steady state, then record a window.

    perturb is an optional (frequency_hz, amplitude_v) pair overriding the
    values in sim; the perturbation is a series voltage source at the
    point of connection, faded in after settling. Without a perturbation
    the window spans measure_cycles fundamental cycles of the settled
    orbit. Raises DivergenceError if any state leaves physical range and
    warns if the settling budget runs out before the orbit is periodic.
    """
    if perturb is not None:
        f_p, amp = perturb
    else:
        f_p, amp = sim.perturb_freq, sim.perturb_amplitude
    if f_p < 0.0 or (f_p == 0.0 and amp != 0.0):
        raise ValueError("perturbation needs a positive frequency")
    if f_p > 0.0 and amp <= 0.0:
        amp = _DEFAULT_PROBE_FRACTION * 0.5 * params.vdc
    return _run(params, config, sim, f_p, amp, 0.0)


def extract_phasor(series: TimeSeries, signal: str, freq_hz: float) -> complex:
    """Amplitude phasor of one signal at freq_hz over the whole window.

    Convention: a signal A*cos(2*pi*f*t + phi) yields A*exp(1j*phi).
    The window must hold a whole number of periods of freq_hz, otherwise
    the projection is meaningless and a ValueError is raised.
    """
    x = series.column(signal)
    n = x.size
    if n == 0:
        raise ValueError("empty series")
    if freq_hz <= 0.0:
        raise ValueError("frequency must be positive")
    periods = freq_hz * n * series.dt
    if abs(periods - round(periods)) > 1e-6 * max(1.0, periods) \
            or round(periods) < 1:
        raise ValueError(
            f"window of {n * series.dt:.6g} s does not hold a whole number "
            f"of periods of {freq_hz:g} Hz")
    kernel = np.exp(-2j * math.pi * freq_hz * series.t)
    return complex(2.0 / n * np.sum(x * kernel))


def _probe_amplitude(params, sim):
    if sim.perturb_amplitude > 0.0:
        return sim.perturb_amplitude
    return _DEFAULT_PROBE_FRACTION * 0.5 * params.vdc


def _mode_of(config) -> str:
    return "open" if config is None else config.mode


def measure_impedance(params: CircuitParams, config: ControlConfig | None,
                      sim: SimConfig, freq_hz: float | None = None
                      ) -> ImpedancePoint:
    """Terminal impedance at one probe frequency, by baseline subtraction.

    Runs the schedule twice, once without and once with the series
    voltage probe, extracts the probe-frequency phasors of terminal
    voltage and current from both, subtracts, and returns
    -delta_V / delta_I. The returned point carries order 0 because no
    harmonic truncation is involved.
    """
    f_p = sim.perturb_freq if freq_hz is None else float(freq_hz)
    if f_p <= 0.0:
        raise ValueError("measurement needs a positive probe frequency")
    amp = _probe_amplitude(params, sim)
    base = _run(params, config, sim, f_p, 0.0, 0.0)
    pert = _run(params, config, sim, f_p, amp, 0.0)
    v = extract_phasor(pert, "v_g", f_p) - extract_phasor(base, "v_g", f_p)
    i = extract_phasor(pert, "i_g", f_p) - extract_phasor(base, "i_g", f_p)
    if abs(i) < 1e-12 * amp / max(abs(params.load_impedance(
            2.0 * math.pi * f_p)), 1.0):
        raise DegenerateResponseError(
            f"no measurable current response at {f_p:g} Hz")
    return ImpedancePoint(f_p, -v / i, _mode_of(config), 0)


def measure_impedance_many(params: CircuitParams,
                           config: ControlConfig | None,
                           sim: SimConfig, freqs) -> dict:
    """Impedance at several probe frequencies sharing one baseline run.

    All frequencies and the fundamental must share a common period; the
    measurement window is sized to hold all of them at once, so the
    baseline needs to be integrated only once per campaign. Returns
    {frequency: ImpedancePoint}.
    """
    freqs = [float(f) for f in freqs]
    if not freqs:
        return {}
    window = sim.measure_cycles * _common_cycles(params, freqs)
    amp = _probe_amplitude(params, sim)
    base = _run(params, config, sim, max(freqs), 0.0, 0.0,
                window_cycles=window)
    out = {}
    for f_p in freqs:
        pert = _run(params, config, sim, f_p, amp, 0.0,
                    window_cycles=window)
        v = extract_phasor(pert, "v_g", f_p) \
            - extract_phasor(base, "v_g", f_p)
        i = extract_phasor(pert, "i_g", f_p) \
            - extract_phasor(base, "i_g", f_p)
        if abs(i) < 1e-12 * amp / max(abs(params.load_impedance(
                2.0 * math.pi * f_p)), 1.0):
            raise DegenerateResponseError(
                f"no measurable current response at {f_p:g} Hz")
        out[f_p] = ImpedancePoint(f_p, -v / i, _mode_of(config), 0)
    return out


def measure_circulating_impedance(params: CircuitParams,
                                  config: ControlConfig | None,
                                  sim: SimConfig,
                                  freq_hz: float | None = None,
                                  probe: float = _DEFAULT_INSERTION_PROBE,
                                  ) -> ImpedancePoint:
    """Impedance of the internal circulating loop at one frequency.

    The probe here is a small common-mode wiggle added to both insertion
    indices (the same entry point a circulating-current controller uses),
    not a terminal voltage. The returned value is the loop impedance
    -V_dc * delta_n / delta_I_c after baseline subtraction.
    """
    f_p = sim.perturb_freq if freq_hz is None else float(freq_hz)
    if f_p <= 0.0:
        raise ValueError("measurement needs a positive probe frequency")
    if probe <= 0.0:
        raise ValueError("probe amplitude must be positive")
    base = _run(params, config, sim, f_p, 0.0, 0.0)
    pert = _run(params, config, sim, f_p, 0.0, probe)
    i = extract_phasor(pert, "i_c", f_p) - extract_phasor(base, "i_c", f_p)
    if abs(i) < 1e-12 * probe * params.vdc:
        raise DegenerateResponseError(
            f"no measurable circulating response at {f_p:g} Hz")
    return ImpedancePoint(f_p, -params.vdc * probe / i, _mode_of(config), 0)


def reset_caches() -> None:
    """Drop cached open-loop reference cycles (mainly for tests)."""
    _reference_cycle.cache_clear()


__all__ = [
    "SimConfig", "TimeSeries", "simulate", "extract_phasor",
    "measure_impedance", "measure_impedance_many",
    "measure_circulating_impedance", "write_trajectory_csv",
    "reset_caches",
]
