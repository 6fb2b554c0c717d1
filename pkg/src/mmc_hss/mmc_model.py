"""Averaged MMC phase-leg model in harmonic state-space form.

State vector x = [i_c, v_cu, v_cl, i_g]:

    i_c   circulating current (half the sum of the arm currents)
    v_cu  summed submodule capacitor voltage, upper arm
    v_cl  summed submodule capacitor voltage, lower arm
    i_g   output (ac-side) current

with arm currents i_u = i_c + i_g/2, i_l = i_c - i_g/2. Both arms are
averaged: the inserted arm voltage is n_u*v_cu (resp. n_l*v_cl) with
continuous insertion indices n_u, n_l in [0, 1]. The ac terminal feeds a
series R-L load, which is folded into the output-current row instead of
carrying v_g as an extra state: a series load inductance appears as
L_eff = L + 2*L_load and the load resistance inside the damping term, so
every operator stays purely block-Toeplitz.

The four state equations (arm resistance R, arm inductance L, arm-equivalent
capacitance C = C_sm / N_sm):

    L    di_c/dt  = V_dc/2 - R*i_c - (n_u*v_cu + n_l*v_cl)/2
    C    dv_cu/dt = n_u*(i_c + i_g/2)
    C    dv_cl/dt = n_l*(i_c - i_g/2)
    L_eff di_g/dt = -n_u*v_cu + n_l*v_cl - (R + 2*R_load)*i_g - 2*v_p

where v_p is the series perturbation source behind the load (zero in steady
state). The ac terminal voltage is v_g = v_p + Z_load*i_g.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from . import hss_core
from .errors import PoleAtResonanceError

CONTROL_MODES = ("open", "acv", "ccc", "acv+ccc")

# undamped resonant filter counts as on-pole below this relative detuning
_POLE_REL_TOL = 1e-9


@dataclass(frozen=True)
class CircuitParams:
    """Electrical parameters of one phase leg plus its passive load."""

    vdc: float                     # pole-to-pole dc voltage, V
    arm_inductance: float          # per arm, H
    arm_resistance: float          # per arm, ohm
    sm_capacitance: float          # per submodule, F
    sm_per_arm: int
    fundamental_freq: float        # Hz
    modulation_index: float        # fundamental insertion-index amplitude
    modulation_phase: float = 0.0  # rad
    modulation_index_2h: float = 0.0   # optional second-harmonic injection
    modulation_phase_2h: float = 0.0
    load_resistance: float = 0.0   # series ac load, ohm
    load_inductance: float = 0.0   # series ac load, H

    def __post_init__(self):
        positive = {
            "vdc": self.vdc,
            "arm_inductance": self.arm_inductance,
            "sm_capacitance": self.sm_capacitance,
            "fundamental_freq": self.fundamental_freq,
        }
        for name, val in positive.items():
            if not val > 0.0:
                raise ValueError(f"{name} must be positive, got {val}")
        if self.sm_per_arm < 1:
            raise ValueError("sm_per_arm must be >= 1")
        if self.arm_resistance < 0.0:
            raise ValueError("arm_resistance must be >= 0")
        if not 0.0 <= self.modulation_index <= 1.0:
            raise ValueError(
                f"modulation_index must lie in [0, 1], got {self.modulation_index}"
            )
        if not 0.0 <= self.modulation_index_2h <= 1.0:
            raise ValueError("modulation_index_2h must lie in [0, 1]")
        if self.modulation_index + self.modulation_index_2h > 1.0:
            raise ValueError("combined modulation exceeds the linear range")
        if self.load_resistance < 0.0 or self.load_inductance < 0.0:
            raise ValueError("load must be passive (R, L >= 0)")

    @property
    def omega1(self) -> float:
        return 2.0 * math.pi * self.fundamental_freq

    @property
    def period(self) -> float:
        return 1.0 / self.fundamental_freq

    @property
    def arm_capacitance(self) -> float:
        """Series equivalent of the submodule stack, C_sm / N_sm."""
        return self.sm_capacitance / self.sm_per_arm

    def load_impedance(self, omega: float) -> complex:
        return self.load_resistance + 1j * omega * self.load_inductance


@dataclass(frozen=True)
class ControlConfig:
    """Controller selection and gains.

    mode is one of "open", "acv" (ac terminal voltage loop), "ccc"
    (circulating-current damping), "acv+ccc". The voltage loop is a
    proportional-resonant filter tuned at the fundamental plus an optional
    plain additive gain kf, all behind the sampling delay
    exp(-1.5*Ts*s). resonant_damping > 0 (rad/s) turns the ideal resonator
    into its damped variant. The circulating loop is a proportional gain
    ra (ohm) behind the same delay.
    """

    mode: str = "open"
    kpv: float = 0.0
    krv: float = 0.0
    kf: float = 0.0
    resonant_damping: float = 0.0
    ra: float = 0.0
    sampling_period: float = 100e-6

    def __post_init__(self):
        if self.mode not in CONTROL_MODES:
            raise ValueError(
                f"control mode must be one of {CONTROL_MODES}, got {self.mode!r}"
            )
        if self.sampling_period <= 0.0:
            raise ValueError("sampling_period must be positive")
        if self.kpv < 0.0 or self.krv < 0.0 or self.resonant_damping < 0.0:
            raise ValueError("kpv, krv and resonant_damping must be >= 0")

    @property
    def has_acv(self) -> bool:
        return self.mode in ("acv", "acv+ccc")

    @property
    def has_ccc(self) -> bool:
        return self.mode in ("ccc", "acv+ccc")


def insertion_indices(params: CircuitParams, t):
    """Continuous insertion indices (n_u, n_l) at times t.

    Direct modulation: the fundamental appears with opposite sign in the
    two arms, an optional second harmonic with equal sign.
    """
    t = np.asarray(t, dtype=float)
    w1 = params.omega1
    fund = params.modulation_index * np.cos(w1 * t + params.modulation_phase)
    sec = params.modulation_index_2h * np.cos(
        2.0 * w1 * t + params.modulation_phase_2h
    )
    n_u = 0.5 * (1.0 - fund - sec)
    n_l = 0.5 * (1.0 + fund - sec)
    return n_u, n_l


def insertion_coeffs(params: CircuitParams) -> dict:
    """Fourier coefficients {k: (n_u_k, n_l_k)} of the insertion indices."""
    m1 = 0.25 * params.modulation_index * cmath.exp(1j * params.modulation_phase)
    m2 = 0.25 * params.modulation_index_2h * cmath.exp(
        1j * params.modulation_phase_2h
    )
    out = {0: (0.5 + 0j, 0.5 + 0j)}
    if m1 != 0:
        out[1] = (-m1, m1)
        out[-1] = (-m1.conjugate(), m1.conjugate())
    if m2 != 0:
        out[2] = (-m2, -m2)
        out[-2] = (-m2.conjugate(), -m2.conjugate())
    return out


def _coupling_block(params: CircuitParams, n_u_k: complex, n_l_k: complex
                    ) -> np.ndarray:
    """State-coupling block contributed by one harmonic of (n_u, n_l)."""
    ind = params.arm_inductance
    cap = params.arm_capacitance
    l_eff = ind + 2.0 * params.load_inductance
    return np.array([
        [0.0, -n_u_k / (2.0 * ind), -n_l_k / (2.0 * ind), 0.0],
        [n_u_k / cap, 0.0, 0.0, n_u_k / (2.0 * cap)],
        [n_l_k / cap, 0.0, 0.0, -n_l_k / (2.0 * cap)],
        [0.0, -n_u_k / l_eff, n_l_k / l_eff, 0.0],
    ], dtype=complex)


def _base_blocks(params: CircuitParams) -> dict:
    blocks = {}
    for k, (nu, nl) in insertion_coeffs(params).items():
        blocks[k] = _coupling_block(params, nu, nl)
    ind = params.arm_inductance
    l_eff = ind + 2.0 * params.load_inductance
    blocks[0][0, 0] = -params.arm_resistance / ind
    blocks[0][3, 3] = -(params.arm_resistance
                        + 2.0 * params.load_resistance) / l_eff
    return blocks


def build_base_hss(params: CircuitParams, order: int):
    """Harmonic operators (A, N, U) of the unperturbed leg.

    A is the block-Toeplitz lift of the periodic state matrix with the load
    folded in, N the fundamental frequency shift, U the dc-link forcing.
    The periodic steady state is X = -(A - N)^{-1} U.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    a = hss_core.build_toeplitz(_base_blocks(params), order, 4)
    n = hss_core.build_shift(order, 4, params.omega1)
    forcing = hss_core.HarmonicVector.from_blocks(
        order, 4, {0: [params.vdc / (2.0 * params.arm_inductance), 0.0, 0.0, 0.0]}
    )
    return a, n, forcing


@dataclass(frozen=True)
class SteadyOperatingPoint:
    """Periodic steady state of the leg as harmonic stacks."""

    params: CircuitParams
    order: int
    stack: hss_core.HarmonicVector

    _INDEX = {"i_c": 0, "v_cu": 1, "v_cl": 2, "i_g": 3}

    def coeff(self, name: str, k: int) -> complex:
        """Fourier coefficient k of one state signal (or of "v_g")."""
        if name == "v_g":
            z = self.params.load_impedance(k * self.params.omega1)
            return z * complex(self.stack.block(k)[3])
        return complex(self.stack.block(k)[self._INDEX[name]])

    def signal(self, name: str) -> hss_core.HarmonicCoeffs:
        w1 = self.params.omega1
        if name == "v_g":
            ks = np.arange(-self.order, self.order + 1)
            zs = np.array([self.params.load_impedance(k * w1) for k in ks])
            ig = self.stack.signal(w1, 3).coeffs
            return hss_core.HarmonicCoeffs(self.order, w1, zs * ig)
        return self.stack.signal(w1, self._INDEX[name])

    def waveform(self, name: str, t) -> np.ndarray:
        return hss_core.reconstruct_time(self.signal(name), t).real


def steady_state(params: CircuitParams, order: int) -> SteadyOperatingPoint:
    """Solve the periodic steady state at truncation order `order`."""
    a, n, u = build_base_hss(params, order)
    x = hss_core.solve_steady_state(a, n, u)
    return SteadyOperatingPoint(params, order, x)


# ------------------------------------------------------------------ control


def _resonator_denominator(config: ControlConfig, omega1: float, s: complex
                           ) -> complex:
    return s * s + 2.0 * config.resonant_damping * s + omega1 * omega1


def on_resonant_pole(config: ControlConfig, omega1: float, s: complex) -> bool:
    """True when s sits on (or numerically at) an undamped resonator pole."""
    if config.krv == 0.0 or config.resonant_damping > 0.0:
        return False
    den = _resonator_denominator(config, omega1, s)
    return abs(den) < _POLE_REL_TOL * omega1 * omega1


def control_transfer(config: ControlConfig, omega1: float, s: complex,
                     loop: str = "acv") -> complex:
    """Loop-filter frequency response including the sampling delay.

    loop="acv": (kf + kpv + krv*s/(s^2 + 2*wc*s + w1^2)) * exp(-1.5*Ts*s).
    loop="ccc": ra * exp(-1.5*Ts*s).
    Raises PoleAtResonanceError when the undamped resonator is evaluated on
    its pole.
    """
    delay = cmath.exp(-1.5 * config.sampling_period * s)
    if loop == "ccc":
        return config.ra * delay
    if loop != "acv":
        raise ValueError(f"unknown loop {loop!r}")
    if on_resonant_pole(config, omega1, s):
        raise PoleAtResonanceError(
            f"resonant filter evaluated on its pole at s = {s}"
        )
    den = _resonator_denominator(config, omega1, s)
    hv = config.kpv + config.krv * s / den
    return (config.kf + hv) * delay


def _inverse_acv_gain(config: ControlConfig, omega1: float, s: complex
                      ) -> complex:
    """1 / control_transfer(..., loop="acv"), exact (0) on the resonator pole."""
    den = _resonator_denominator(config, omega1, s)
    num = (config.kf + config.kpv) * den + config.krv * s
    if num == 0:
        return complex(math.inf)
    return den * cmath.exp(1.5 * config.sampling_period * s) / num


# ------------------------------------------------- perturbation construction


def build_openloop_perturbation(params: CircuitParams, order: int,
                                omega_p: float, v_p: complex = 1.0):
    """Operators (A, N_p, U_p) for the series-voltage perturbation, open loop.

    The state operator equals the steady-state one; only the frequency shift
    (offset omega_p) and the forcing differ. U_p carries the perturbation
    in the output-current row at harmonic offset 0.
    """
    a = hss_core.build_toeplitz(_base_blocks(params), order, 4)
    n_p = hss_core.build_shift(order, 4, params.omega1, omega_off=omega_p)
    l_eff = params.arm_inductance + 2.0 * params.load_inductance
    u_p = hss_core.HarmonicVector.from_blocks(
        order, 4, {0: [0.0, 0.0, 0.0, -2.0 * v_p / l_eff]}
    )
    return a, n_p, u_p


@dataclass(frozen=True)
class FeedbackChannel:
    """One scalar controller channel closed around the harmonic stack.

    The channel output w_q (one per source harmonic q, at frequency
    omega_p + q*omega1) is the insertion-index perturbation produced by the
    loop: w = gain * (pickup . X_q + vp_pickup * v_p). Its effect on the
    state equations distributes across destination harmonics through the
    Toeplitz injection blocks f_k (steady-state waveform products):
    dX_p += f_{p-q} * w_q. inverse_gains are exact analytic inverses so a
    resonant pole (infinite gain) is representable as inverse 0.
    """

    name: str
    gains: np.ndarray          # (2h+1,) complex, per source harmonic
    inverse_gains: np.ndarray  # (2h+1,) complex
    injection: np.ndarray      # (2h+1, 4), row k+h holds f_k
    pickup: np.ndarray         # (2h+1, 4), row q+h dotted with X_q
    vp_pickup: np.ndarray      # (2h+1,), direct v_p term in the pickup

    def injection_block(self, k: int) -> np.ndarray:
        h = (self.injection.shape[0] - 1) // 2
        if abs(k) > h:
            return np.zeros(4, dtype=complex)
        return self.injection[k + h]


def _acv_injection(params: CircuitParams, op: SteadyOperatingPoint,
                   order: int) -> np.ndarray:
    """Injection blocks of a differential insertion perturbation
    (upper +w, lower -w)."""
    ind = params.arm_inductance
    cap = params.arm_capacitance
    l_eff = ind + 2.0 * params.load_inductance
    f = np.zeros((2 * order + 1, 4), dtype=complex)
    for k in range(-min(order, op.order), min(order, op.order) + 1):
        vcu, vcl = op.coeff("v_cu", k), op.coeff("v_cl", k)
        ic, ig = op.coeff("i_c", k), op.coeff("i_g", k)
        f[k + order] = [
            -(vcu - vcl) / (2.0 * ind),
            (ic + 0.5 * ig) / cap,
            -(ic - 0.5 * ig) / cap,
            -(vcu + vcl) / l_eff,
        ]
    return f


def _ccc_injection(params: CircuitParams, op: SteadyOperatingPoint,
                   order: int) -> np.ndarray:
    """Injection blocks of a common-mode insertion perturbation
    (both arms +w)."""
    ind = params.arm_inductance
    cap = params.arm_capacitance
    l_eff = ind + 2.0 * params.load_inductance
    f = np.zeros((2 * order + 1, 4), dtype=complex)
    for k in range(-min(order, op.order), min(order, op.order) + 1):
        vcu, vcl = op.coeff("v_cu", k), op.coeff("v_cl", k)
        ic, ig = op.coeff("i_c", k), op.coeff("i_g", k)
        f[k + order] = [
            -(vcu + vcl) / (2.0 * ind),
            (ic + 0.5 * ig) / cap,
            (ic - 0.5 * ig) / cap,
            -(vcu - vcl) / l_eff,
        ]
    return f


def feedback_channels(params: CircuitParams, config: ControlConfig,
                      op: SteadyOperatingPoint, order: int, omega_p: float
                      ) -> list:
    """Controller channels active for config.mode at offset omega_p.

    The ac-voltage loop regulates v_g with negative feedback; its insertion
    perturbation is w = +G_v/V_dc * v_gp on the upper arm (opposite on the
    lower), which opposes the terminal-voltage deviation. The circulating
    loop emulates a series arm resistance: w = ra*G_d/V_dc * i_cp on both
    arms.
    """
    channels = []
    ks = np.arange(-order, order + 1)
    freqs = omega_p + ks * params.omega1
    if config.has_acv:
        gains = np.empty(2 * order + 1, dtype=complex)
        inv = np.empty(2 * order + 1, dtype=complex)
        for i, w in enumerate(freqs):
            inv_g = _inverse_acv_gain(config, params.omega1, 1j * w)
            if not cmath.isfinite(inv_g):
                # dead channel (all gains zero)
                inv[i], gains[i] = complex(math.inf), 0.0
            elif inv_g == 0:
                # on the resonant pole: infinite gain, exact inverse 0
                inv[i], gains[i] = 0.0, complex(math.inf)
            else:
                inv[i] = params.vdc * inv_g
                gains[i] = 1.0 / inv[i]
        pickup = np.zeros((2 * order + 1, 4), dtype=complex)
        pickup[:, 3] = [params.load_impedance(w) for w in freqs]
        vp_pickup = np.zeros(2 * order + 1)
        vp_pickup[order] = 1.0
        channels.append(FeedbackChannel(
            "acv", gains, inv, _acv_injection(params, op, order),
            pickup, vp_pickup,
        ))
    if config.has_ccc:
        delay = np.exp(-1.5j * config.sampling_period * freqs)
        gains = (config.ra / params.vdc) * delay
        inv = np.full_like(gains, np.inf)
        nonzero = gains != 0
        inv[nonzero] = 1.0 / gains[nonzero]
        pickup = np.zeros((2 * order + 1, 4), dtype=complex)
        pickup[:, 0] = 1.0
        channels.append(FeedbackChannel(
            "ccc", gains, inv.astype(complex),
            _ccc_injection(params, op, order),
            pickup, np.zeros(2 * order + 1),
        ))
    return channels


def _toeplitz_times_columndiag(injection: np.ndarray, col_factors: np.ndarray,
                               pickup_rows: np.ndarray, order: int
                               ) -> np.ndarray:
    """Dense lift of sum_q f_{p-q} * col_factors[q] * pickup_rows[q]."""
    n = 2 * order + 1
    dense = np.zeros((4 * n, 4 * n), dtype=complex)
    for q in range(n):
        w = col_factors[q]
        if w == 0:
            continue
        row = pickup_rows[q]
        for p in range(n):
            k = p - q
            if abs(k) > order:
                continue
            f = injection[k + order]
            dense[4 * p:4 * p + 4, 4 * q:4 * q + 4] += w * np.outer(f, row)
    return dense


def _channel_pole_check(params: CircuitParams, config: ControlConfig,
                        order: int, omega_p: float):
    ks = np.arange(-order, order + 1)
    for w in omega_p + ks * params.omega1:
        if on_resonant_pole(config, params.omega1, 1j * w):
            raise PoleAtResonanceError(
                f"source harmonic at {w / (2 * math.pi):.6g} Hz sits on the "
                "resonant-controller pole; the assembled operator does not "
                "exist there"
            )


def build_acv_perturbation(params: CircuitParams, config: ControlConfig,
                           op: SteadyOperatingPoint, order: int,
                           omega_p: float, v_p: complex = 1.0):
    """Dense perturbed operators (A_p, B_p, U_p) with the voltage loop closed.

    Dense rather than block-Toeplitz because the loop filter is evaluated at
    each source-column frequency omega_p + q*omega1 before the steady-state
    waveform products spread the result across rows. Raises
    PoleAtResonanceError when a source frequency sits exactly on an undamped
    resonator pole (the gain is infinite there; use the channel solve in
    impedance_engine instead).
    """
    if not config.has_acv:
        raise ValueError("config.mode does not include the ac-voltage loop")
    _channel_pole_check(params, config, order, omega_p)
    base, _, _ = build_openloop_perturbation(params, order, omega_p, v_p)
    chan = [c for c in feedback_channels(params, config, op, order, omega_p)
            if c.name == "acv"][0]
    a_dense = base.matrix + _toeplitz_times_columndiag(
        chan.injection, chan.gains, chan.pickup, order
    )
    # B: v_p at source harmonic q enters both directly (output row) and
    # through the loop pickup
    n = 2 * order + 1
    b_dense = np.zeros((4 * n, 4 * n), dtype=complex)
    l_eff = params.arm_inductance + 2.0 * params.load_inductance
    for q in range(n):
        b_dense[4 * q + 3, 4 * q + 3] = -2.0 / l_eff
        for p in range(n):
            k = p - q
            if abs(k) > order:
                continue
            b_dense[4 * p:4 * p + 4, 4 * q + 3] += (
                chan.gains[q] * chan.injection[k + order]
            )
    u_p = hss_core.HarmonicVector.from_blocks(
        order, 4, {0: [0.0, 0.0, 0.0, v_p]}
    )
    return a_dense, b_dense, u_p


def build_ccc_perturbation(params: CircuitParams, config: ControlConfig,
                           op: SteadyOperatingPoint, order: int,
                           omega_p: float, v_p: complex = 1.0):
    """Dense perturbed operator (A_p, U_p) with the circulating loop closed.

    The proportional loop reshapes only the circulating-current column; the
    forcing is the open-loop one.
    """
    if not config.has_ccc:
        raise ValueError("config.mode does not include the circulating loop")
    base, _, u_p = build_openloop_perturbation(params, order, omega_p, v_p)
    chan = [c for c in feedback_channels(params, config, op, order, omega_p)
            if c.name == "ccc"][0]
    a_dense = base.matrix + _toeplitz_times_columndiag(
        chan.injection, chan.gains, chan.pickup, order
    )
    return a_dense, u_p


def circulating_probe_forcing(params: CircuitParams, op: SteadyOperatingPoint,
                              order: int, n_hat: complex = 1.0
                              ) -> hss_core.HarmonicVector:
    """Forcing stack of a common-mode insertion-index probe.

    A probe delta_n(t) = eps*cos(omega_p*t) applied to both insertion
    indices forces the perturbed system with n_hat = eps/2 times the
    common-mode injection blocks. The ratio -vdc*n_hat / I_c(omega_p) is the
    circulating-path impedance.
    """
    f = _ccc_injection(params, op, order)
    blocks = {k: n_hat * f[k + order] for k in range(-order, order + 1)}
    return hss_core.HarmonicVector.from_blocks(order, 4, blocks)
