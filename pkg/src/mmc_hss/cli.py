"""Command-line front end.

Four workflows over one flat key = value configuration file:

  steady   print the periodic steady-state harmonics
  sweep    analytic impedance over a frequency grid, to CSV
  measure  time-domain impedance at listed frequencies, to CSV
  compare  analytic vs time-domain at listed frequencies, with tolerances

Exit codes: 0 success, 2 configuration problem, 3 numerical failure,
4 tolerance failure (compare only). CSV columns are fixed:
freq_hz,z_re_ohm,z_im_ohm,z_mag_db,z_phase_deg with phase in (-180, 180]
and 9 significant digits, so identical configurations produce
byte-identical files.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass

import numpy as np

from . import impedance_engine, mmc_model, td_sim
from .errors import (DegenerateResponseError, DivergenceError,
                     PoleAtResonanceError, SingularSystemError)

_CSV_HEADER = "freq_hz,z_re_ohm,z_im_ohm,z_mag_db,z_phase_deg"


class ConfigError(ValueError):
    """Bad configuration file or option; maps to exit code 2."""


def _positive(x):
    if x <= 0:
        raise ValueError("must be positive")
    return x


def _nonneg(x):
    if x < 0:
        raise ValueError("must not be negative")
    return x


def _fraction(x):
    if not 0.0 <= x <= 1.0:
        raise ValueError("must be within [0, 1]")
    return x


def _count(x):
    if x < 1:
        raise ValueError("must be at least 1")
    return x


def _mode(s):
    if s not in mmc_model.CONTROL_MODES:
        raise ValueError(f"must be one of {', '.join(mmc_model.CONTROL_MODES)}")
    return s


def _any_float(x):
    return x


# key -> (default, parser, per-key constraint); file order is free,
# unknown keys are rejected with their line number
_KEYS = {
    "vdc_v": (320e3, float, _positive),
    "arm_inductance_h": (0.36, float, _positive),
    "arm_resistance_ohm": (1.0, float, _nonneg),
    "sm_capacitance_f": (140e-6, float, _positive),
    "sm_per_arm": (20, int, _count),
    "fundamental_hz": (50.0, float, _positive),
    "modulation_index": (0.847, float, _fraction),
    "modulation_phase_rad": (0.0, float, _any_float),
    "modulation_index_2h": (0.0, float, _fraction),
    "modulation_phase_2h_rad": (0.0, float, _any_float),
    "load_resistance_ohm": (550.0, float, _nonneg),
    "load_inductance_h": (0.0, float, _nonneg),
    "control_mode": ("open", str, _mode),
    "kpv": (1.0, float, _nonneg),
    "krv": (20.0, float, _nonneg),
    "kf": (0.0, float, _nonneg),
    "resonant_damping": (0.0, float, _nonneg),
    "ra_ohm": (20.0, float, _any_float),
    "sampling_period_s": (1e-4, float, _positive),
    "dt_s": (1e-5, float, _positive),
    "settle_cycles": (300, int, _count),
    "measure_cycles": (2, int, _count),
    "ramp_cycles": (20, int, _nonneg),
    "post_ramp_cycles": (30, int, _nonneg),
    "perturb_amplitude_v": (0.0, float, _nonneg),
    "periodicity_tol": (1e-6, float, _positive),
    "reference_settle_cycles": (800, int, _count),
    "harmonic_order": (4, int, _count),
    "sweep_start_hz": (5.0, float, _positive),
    "sweep_stop_hz": (500.0, float, _positive),
    "sweep_step_hz": (1.0, float, _positive),
    "guard_band_hz": (-1.0, float, _any_float),  # negative = automatic
    "out_csv": ("", str, lambda s: s),
}


@dataclass(frozen=True)
class RunConfig:
    """Validated bundle of everything a workflow needs."""

    params: mmc_model.CircuitParams
    control: mmc_model.ControlConfig
    sim: td_sim.SimConfig
    harmonic_order: int
    sweep_start_hz: float
    sweep_stop_hz: float
    sweep_step_hz: float
    guard_band_hz: float
    out_csv: str

    @property
    def guard_band(self) -> float | None:
        """None requests the engine's automatic guard band."""
        return None if self.guard_band_hz < 0.0 else self.guard_band_hz

    def sweep_grid(self) -> np.ndarray:
        if self.sweep_stop_hz < self.sweep_start_hz:
            raise ConfigError("sweep_stop_hz is below sweep_start_hz")
        return np.arange(self.sweep_start_hz,
                         self.sweep_stop_hz + 0.5 * self.sweep_step_hz,
                         self.sweep_step_hz)

    def dump(self, path) -> None:
        """Write the effective configuration; re-parsing it is an identity.

        Floats are written with repr, which round-trips exactly; strings
        are written bare because the parser takes values verbatim.
        """
        values = _config_values(self)
        with open(path, "w", encoding="ascii") as fh:
            fh.write("# effective configuration\n")
            for key in _KEYS:
                v = values[key]
                fh.write(f"{key} = {v}\n" if isinstance(v, str)
                         else f"{key} = {v!r}\n")


def _config_values(cfg: RunConfig) -> dict:
    p, c, s = cfg.params, cfg.control, cfg.sim
    return {
        "vdc_v": p.vdc,
        "arm_inductance_h": p.arm_inductance,
        "arm_resistance_ohm": p.arm_resistance,
        "sm_capacitance_f": p.sm_capacitance,
        "sm_per_arm": p.sm_per_arm,
        "fundamental_hz": p.fundamental_freq,
        "modulation_index": p.modulation_index,
        "modulation_phase_rad": p.modulation_phase,
        "modulation_index_2h": p.modulation_index_2h,
        "modulation_phase_2h_rad": p.modulation_phase_2h,
        "load_resistance_ohm": p.load_resistance,
        "load_inductance_h": p.load_inductance,
        "control_mode": c.mode,
        "kpv": c.kpv,
        "krv": c.krv,
        "kf": c.kf,
        "resonant_damping": c.resonant_damping,
        "ra_ohm": c.ra,
        "sampling_period_s": c.sampling_period,
        "dt_s": s.dt,
        "settle_cycles": s.settle_cycles,
        "measure_cycles": s.measure_cycles,
        "ramp_cycles": s.ramp_cycles,
        "post_ramp_cycles": s.post_ramp_cycles,
        "perturb_amplitude_v": s.perturb_amplitude,
        "periodicity_tol": s.periodicity_tol,
        "reference_settle_cycles": s.reference_settle_cycles,
        "harmonic_order": cfg.harmonic_order,
        "sweep_start_hz": cfg.sweep_start_hz,
        "sweep_stop_hz": cfg.sweep_stop_hz,
        "sweep_step_hz": cfg.sweep_step_hz,
        "guard_band_hz": cfg.guard_band_hz,
        "out_csv": cfg.out_csv,
    }


def _build_config(values: dict, lines: dict) -> RunConfig:
    def line_of(key):
        return f" (line {lines[key]})" if key in lines else ""

    try:
        params = mmc_model.CircuitParams(
            vdc=values["vdc_v"],
            arm_inductance=values["arm_inductance_h"],
            arm_resistance=values["arm_resistance_ohm"],
            sm_capacitance=values["sm_capacitance_f"],
            sm_per_arm=values["sm_per_arm"],
            fundamental_freq=values["fundamental_hz"],
            modulation_index=values["modulation_index"],
            modulation_phase=values["modulation_phase_rad"],
            modulation_index_2h=values["modulation_index_2h"],
            modulation_phase_2h=values["modulation_phase_2h_rad"],
            load_resistance=values["load_resistance_ohm"],
            load_inductance=values["load_inductance_h"],
        )
        control = mmc_model.ControlConfig(
            mode=values["control_mode"],
            kpv=values["kpv"],
            krv=values["krv"],
            kf=values["kf"],
            resonant_damping=values["resonant_damping"],
            ra=values["ra_ohm"],
            sampling_period=values["sampling_period_s"],
        )
        sim = td_sim.SimConfig(
            dt=values["dt_s"],
            settle_cycles=values["settle_cycles"],
            measure_cycles=values["measure_cycles"],
            ramp_cycles=values["ramp_cycles"],
            post_ramp_cycles=values["post_ramp_cycles"],
            perturb_amplitude=values["perturb_amplitude_v"],
            periodicity_tol=values["periodicity_tol"],
            reference_settle_cycles=values["reference_settle_cycles"],
        )
    except ValueError as exc:
        # cross-field constraint; point at the last explicit key if any
        hint = next((k for k in reversed(list(lines))), None)
        where = line_of(hint) if hint else ""
        raise ConfigError(f"invalid configuration{where}: {exc}") from exc
    return RunConfig(
        params=params, control=control, sim=sim,
        harmonic_order=values["harmonic_order"],
        sweep_start_hz=values["sweep_start_hz"],
        sweep_stop_hz=values["sweep_stop_hz"],
        sweep_step_hz=values["sweep_step_hz"],
        guard_band_hz=values["guard_band_hz"],
        out_csv=values["out_csv"],
    )


def parse_config(path) -> RunConfig:
    """Read a flat key = value file; every key optional, none unknown.

    Reports the first offending key with its line number. Values use
    plain Python float syntax; '#' starts a comment.
    """
    values = {k: default for k, (default, _, _) in _KEYS.items()}
    lines = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    for lineno, line in enumerate(raw, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"line {lineno}: expected 'key = value', "
                              f"got {text!r}")
        key, _, value = text.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        _, conv, check = _KEYS[key]
        try:
            parsed = check(conv(value))
        except ValueError as exc:
            raise ConfigError(
                f"line {lineno}: key {key!r}: {exc}") from exc
        values[key] = parsed
        lines[key] = lineno
    return _build_config(values, lines)


# ---------------------------------------------------------------------------
# output helpers


def _csv_rows(points) -> str:
    out = [_CSV_HEADER]
    for pt in points:
        z = pt.impedance
        out.append(",".join(f"{v:.9g}" for v in (
            pt.freq_hz, z.real, z.imag, pt.magnitude_db, pt.phase_deg)))
    return "\n".join(out) + "\n"


def _write_csv(path, points) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(_csv_rows(points))


def _parse_freqs(text) -> list:
    try:
        freqs = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --freqs list: {exc}") from exc
    if not freqs:
        raise ConfigError("--freqs list is empty")
    if any(f <= 0 for f in freqs):
        raise ConfigError("--freqs entries must be positive")
    return sorted(freqs)


# ---------------------------------------------------------------------------
# workflows


def _order_of(args, cfg) -> int:
    order = args.h if getattr(args, "h", 0) else cfg.harmonic_order
    if order < 1:
        raise ConfigError("truncation order must be at least 1")
    return order


def _out_path(args, cfg) -> str:
    """--out wins; the out_csv config key is the fallback."""
    path = args.out or cfg.out_csv
    if not path:
        raise ConfigError("no output path: pass --out or set out_csv")
    return path


def cmd_steady(args) -> int:
    cfg = parse_config(args.config)
    if args.dump_config:
        cfg.dump(args.dump_config)
    order = _order_of(args, cfg)
    op = mmc_model.steady_state(cfg.params, order)
    print(f"periodic steady state, truncation order {order}")
    print(f"{'state':6s} {'k':>3s} {'amplitude':>15s} {'phase_deg':>10s}")
    for name in ("i_c", "v_cu", "v_cl", "i_g", "v_g"):
        for k in range(0, order + 1):
            coeff = op.coeff(name, k)
            amp = coeff.real if k == 0 else 2.0 * abs(coeff)
            if k == 0:
                print(f"{name:6s} {k:3d} {amp:15.6g} {'':>10s}")
            else:
                phase = math.degrees(np.angle(2.0 * coeff))
                print(f"{name:6s} {k:3d} {amp:15.6g} {phase:10.2f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = parse_config(args.config)
    order = _order_of(args, cfg)
    out = _out_path(args, cfg)
    result = impedance_engine.sweep(
        cfg.params, cfg.control, cfg.sweep_grid(), order=order,
        guard_band_hz=cfg.guard_band)
    _write_csv(out, result.points)
    print(f"wrote {len(result.points)} rows to {out}"
          f" ({len(result.excluded)} guard-band exclusions,"
          f" {len(result.failures)} failures)")
    for freq, message in result.failures:
        print(f"  failed at {freq:g} Hz: {message}", file=sys.stderr)
    return 0


def cmd_measure(args) -> int:
    cfg = parse_config(args.config)
    freqs = _parse_freqs(args.freqs)
    out = _out_path(args, cfg)
    control = cfg.control
    points = td_sim.measure_impedance_many(cfg.params, control, cfg.sim,
                                           freqs)
    ordered = [points[f] for f in freqs]
    _write_csv(out, ordered)
    print(f"wrote {len(ordered)} rows to {out}")
    if args.dump_trajectory:
        series = td_sim.simulate(cfg.params, control, cfg.sim)
        td_sim.write_trajectory_csv(series, args.dump_trajectory)
        print(f"wrote steady trajectory to {args.dump_trajectory}")
    return 0


def cmd_compare(args) -> int:
    cfg = parse_config(args.config)
    freqs = _parse_freqs(args.freqs)
    analytic = {
        f: impedance_engine.impedance_at(cfg.params, cfg.control, f,
                                         order=cfg.harmonic_order)
        for f in freqs
    }
    measured = td_sim.measure_impedance_many(cfg.params, cfg.control,
                                             cfg.sim, freqs)
    worst_mag = 0.0
    worst_phase = 0.0
    print(f"{'freq_hz':>8s} {'analytic_ohm':>13s} {'td_ohm':>13s} "
          f"{'dmag_pct':>9s} {'dphase_deg':>10s}")
    for f in freqs:
        za = analytic[f].impedance
        zt = measured[f].impedance
        dmag = abs(abs(zt) - abs(za)) / abs(za) * 100.0
        dphase = abs(math.degrees(np.angle(zt * np.conj(za))))
        worst_mag = max(worst_mag, dmag)
        worst_phase = max(worst_phase, dphase)
        print(f"{f:8g} {abs(za):13.6g} {abs(zt):13.6g} "
              f"{dmag:9.3f} {dphase:10.3f}")
    ok = worst_mag <= args.tol_mag and worst_phase <= args.tol_phase
    print(f"max deviation: {worst_mag:.3f} % magnitude, "
          f"{worst_phase:.3f} deg phase "
          f"(tolerances {args.tol_mag:g} %, {args.tol_phase:g} deg): "
          f"{'OK' if ok else 'FAIL'}")
    return 0 if ok else 4


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mmc-hss",
        description="ac-side small-signal impedance of a modular "
                    "multilevel converter",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_steady = sub.add_parser("steady", help="print steady-state harmonics")
    p_steady.add_argument("--config", required=True)
    p_steady.add_argument("--h", type=int, default=0,
                          help="override truncation order")
    p_steady.add_argument("--dump-config", default="",
                          help="write the effective configuration here")
    p_steady.set_defaults(func=cmd_steady)

    p_sweep = sub.add_parser("sweep", help="analytic impedance sweep to CSV")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--out", default="",
                         help="output CSV; falls back to out_csv")
    p_sweep.add_argument("--h", type=int, default=0,
                         help="override truncation order")
    p_sweep.set_defaults(func=cmd_sweep)

    p_meas = sub.add_parser("measure",
                            help="time-domain impedance at listed "
                                 "frequencies to CSV")
    p_meas.add_argument("--config", required=True)
    p_meas.add_argument("--freqs", required=True,
                        help="comma-separated frequencies in Hz")
    p_meas.add_argument("--out", default="",
                        help="output CSV; falls back to out_csv")
    p_meas.add_argument("--dump-trajectory", default="",
                        help="also write the settled trajectory here")
    p_meas.set_defaults(func=cmd_measure)

    p_cmp = sub.add_parser("compare",
                           help="analytic vs time-domain at listed "
                                "frequencies")
    p_cmp.add_argument("--config", required=True)
    p_cmp.add_argument("--freqs", required=True,
                       help="comma-separated frequencies in Hz")
    p_cmp.add_argument("--tol-mag", type=float, default=5.0,
                       help="magnitude tolerance, percent")
    p_cmp.add_argument("--tol-phase", type=float, default=5.0,
                       help="phase tolerance, degrees")
    p_cmp.set_defaults(func=cmd_compare)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SingularSystemError, PoleAtResonanceError,
            DegenerateResponseError, DivergenceError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ArithmeticError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
