"""Command-line workflows: configuration parsing, CSV output contracts,
exit codes."""

import os

import numpy as np
import pytest

from mmc_hss import cli

_REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


@pytest.fixture()
def cfg_default(tmp_path):
    return _write(tmp_path, "default.cfg", "# all defaults\n")


@pytest.fixture()
def cfg_m0(tmp_path):
    return _write(tmp_path, "m0.cfg", "modulation_index = 0\n")


# ------------------------------------------------------------ config parsing


def test_parse_defaults(cfg_default):
    cfg = cli.parse_config(cfg_default)
    assert cfg.params.vdc == 320e3
    assert cfg.params.arm_inductance == 0.36
    assert cfg.params.sm_per_arm == 20
    assert cfg.control.mode == "open"
    assert cfg.sim.dt == 1e-5
    assert cfg.harmonic_order == 4
    assert cfg.guard_band is None  # negative sentinel means automatic
    grid = cfg.sweep_grid()
    assert grid[0] == 5.0 and grid[-1] == 500.0 and grid.size == 496


def test_parse_overrides_comments_and_spacing(tmp_path):
    cfg = cli.parse_config(_write(tmp_path, "a.cfg", """
# reference leg, voltage loop closed
control_mode = acv
kpv = 2.5        # stiffer than usual
modulation_index=0.9
guard_band_hz = 3.5
out_csv = result.csv
"""))
    assert cfg.control.mode == "acv"
    assert cfg.control.kpv == 2.5
    assert cfg.control.krv == 20.0  # untouched default
    assert cfg.params.modulation_index == 0.9
    assert cfg.guard_band == 3.5
    assert cfg.out_csv == "result.csv"


def test_parse_rejects_with_line_numbers(tmp_path):
    with pytest.raises(cli.ConfigError, match="line 1: unknown key"):
        cli.parse_config(_write(tmp_path, "b.cfg", "arm_henries = 1\n"))
    with pytest.raises(cli.ConfigError,
                       match=r"line 2: key 'modulation_index': must be "
                             r"within \[0, 1\]"):
        cli.parse_config(_write(tmp_path, "c.cfg",
                                "# comment\nmodulation_index = 1.2\n"))
    with pytest.raises(cli.ConfigError, match="line 1: key 'vdc_v'"):
        cli.parse_config(_write(tmp_path, "d.cfg", "vdc_v = lots\n"))
    with pytest.raises(cli.ConfigError, match="expected 'key = value'"):
        cli.parse_config(_write(tmp_path, "e.cfg", "just some words\n"))
    with pytest.raises(cli.ConfigError, match="cannot read config"):
        cli.parse_config(str(tmp_path / "missing.cfg"))


def test_dump_and_reparse_is_identity(tmp_path):
    src = _write(tmp_path, "src.cfg", """
control_mode = acv+ccc
kpv = 1.25
modulation_phase_rad = -0.31830988618379069
sweep_step_hz = 0.5
out_csv = z.csv
""")
    cfg = cli.parse_config(src)
    dumped = tmp_path / "dumped.cfg"
    cfg.dump(dumped)
    again = cli.parse_config(str(dumped))
    assert cli._config_values(cfg) == cli._config_values(again)


def test_sweep_grid_validation(tmp_path):
    cfg = cli.parse_config(_write(tmp_path, "g.cfg",
                                  "sweep_start_hz = 100\n"
                                  "sweep_stop_hz = 50\n"))
    with pytest.raises(cli.ConfigError):
        cfg.sweep_grid()


# --------------------------------------------------------------- csv contract


def test_sweep_csv_schema_and_determinism(tmp_path, capsys):
    cfg = _write(tmp_path, "narrow.cfg",
                 "sweep_start_hz = 30\nsweep_stop_hz = 40\n")
    out1, out2 = str(tmp_path / "z1.csv"), str(tmp_path / "z2.csv")
    assert cli.main(["sweep", "--config", cfg, "--out", out1]) == 0
    assert "wrote 11 rows" in capsys.readouterr().out
    assert cli.main(["sweep", "--config", cfg, "--out", out2]) == 0

    text = open(out1).read()
    assert text == open(out2).read()  # byte-identical reruns
    lines = text.splitlines()
    assert lines[0] == "freq_hz,z_re_ohm,z_im_ohm,z_mag_db,z_phase_deg"
    assert len(lines) == 12
    for line in lines[1:]:
        tokens = line.split(",")
        assert len(tokens) == 5
        freq, re, im, mag_db, phase = map(float, tokens)
        assert 30.0 <= freq <= 40.0
        assert -180.0 < phase <= 180.0
        assert mag_db == pytest.approx(
            20 * np.log10(abs(complex(re, im))), rel=1e-6)
        # 9 significant digits, formatting idempotent
        assert all(f"{float(tok):.9g}" == tok for tok in tokens)


def test_sweep_guard_band_row_counts(tmp_path, capsys):
    acv = _write(tmp_path, "acv.cfg", "control_mode = acv\n")
    out = str(tmp_path / "acv.csv")
    assert cli.main(["sweep", "--config", acv, "--out", out]) == 0
    msg = capsys.readouterr().out
    assert "wrote 491 rows" in msg
    assert "5 guard-band exclusions" in msg
    assert len(open(out).read().splitlines()) == 492


def test_out_csv_config_key_is_the_fallback(tmp_path, capsys):
    out = tmp_path / "fallback.csv"
    cfg = _write(tmp_path, "fb.cfg",
                 f"sweep_start_hz = 30\nsweep_stop_hz = 32\nout_csv = {out}\n")
    assert cli.main(["sweep", "--config", cfg]) == 0
    assert f"wrote 3 rows to {out}" in capsys.readouterr().out
    assert len(out.read_text().splitlines()) == 4

    explicit = str(tmp_path / "explicit.csv")
    assert cli.main(["sweep", "--config", cfg, "--out", explicit]) == 0
    assert explicit in capsys.readouterr().out  # --out wins over out_csv

    bare = _write(tmp_path, "bare.cfg",
                  "sweep_start_hz = 30\nsweep_stop_hz = 32\n")
    assert cli.main(["sweep", "--config", bare]) == 2
    assert "no output path" in capsys.readouterr().err


# ----------------------------------------------------------------- workflows


def test_steady_prints_harmonic_table(cfg_default, capsys):
    assert cli.main(["steady", "--config", cfg_default]) == 0
    out = capsys.readouterr().out
    assert "truncation order 4" in out
    assert "52.0764" in out   # dc circulating current
    assert "47.7573" in out   # second-harmonic circulating amplitude
    assert "245.934" in out   # fundamental output current amplitude


def test_steady_order_override_and_dump(cfg_m0, tmp_path, capsys):
    dump = str(tmp_path / "eff.cfg")
    assert cli.main(["steady", "--config", cfg_m0, "--h", "2",
                     "--dump-config", dump]) == 0
    out = capsys.readouterr().out
    assert "truncation order 2" in out
    assert "320000" in out
    assert cli.parse_config(dump).params.modulation_index == 0.0
    assert cli.main(["steady", "--config", cfg_m0, "--h", "-3"]) == 2


def test_measure_writes_csv_and_trajectory(cfg_m0, tmp_path, capsys):
    out = str(tmp_path / "m.csv")
    traj = str(tmp_path / "traj.csv")
    code = cli.main(["measure", "--config", cfg_m0, "--freqs", "35,10",
                     "--out", out, "--dump-trajectory", traj])
    assert code == 0
    lines = open(out).read().splitlines()
    assert len(lines) == 3
    rows = [line.split(",") for line in lines[1:]]
    assert [float(r[0]) for r in rows] == [10.0, 35.0]  # sorted
    for row in rows:
        f = float(row[0])
        w = 2 * np.pi * f
        want = 0.5 * (1.0 + 1j * w * 0.36 + 1.0 / (4j * w * 7e-6))
        got = complex(float(row[1]), float(row[2]))
        assert abs(got - want) < 1e-6 * abs(want)
    assert open(traj).readline().strip() == "t_s,i_c_a,v_cu_v,v_cl_v,i_g_a,v_g_v"


def test_compare_on_shipped_reference_config(capsys):
    cfg = os.path.join(_REPO_ROOT, "paper_sim.cfg")
    code = cli.main(["compare", "--config", cfg,
                     "--freqs", "10,35,80,120,200",
                     "--tol-mag", "5", "--tol-phase", "5"])
    out = capsys.readouterr().out
    assert code == 0
    assert out.strip().endswith("OK")


def test_compare_within_default_tolerances(cfg_m0, capsys):
    assert cli.main(["compare", "--config", cfg_m0, "--freqs", "35"]) == 0
    out = capsys.readouterr().out
    assert "max deviation" in out
    assert out.rstrip().endswith("OK")


def test_compare_fails_on_impossible_tolerance(cfg_m0, capsys):
    code = cli.main(["compare", "--config", cfg_m0, "--freqs", "35",
                     "--tol-mag", "0", "--tol-phase", "0"])
    assert code == 4
    assert capsys.readouterr().out.rstrip().endswith("FAIL")


# ---------------------------------------------------------------- exit codes


def test_exit_code_2_on_config_problems(tmp_path, capsys, cfg_m0):
    bad = _write(tmp_path, "bad.cfg", "modulation_index = 2\n")
    assert cli.main(["steady", "--config", bad]) == 2
    assert "config error" in capsys.readouterr().err
    assert cli.main(["steady", "--config",
                     str(tmp_path / "nothere.cfg")]) == 2
    capsys.readouterr()
    out = str(tmp_path / "x.csv")
    assert cli.main(["measure", "--config", cfg_m0, "--freqs", "abc",
                     "--out", out]) == 2
    assert cli.main(["measure", "--config", cfg_m0, "--freqs", "-5",
                     "--out", out]) == 2
    # incommensurate probe frequency surfaces as a config problem too
    assert cli.main(["measure", "--config", cfg_m0, "--freqs", "7.3",
                     "--out", out]) == 2
    capsys.readouterr()


def test_exit_code_3_on_divergence(tmp_path, capsys):
    cfg = _write(tmp_path, "diverge.cfg",
                 "control_mode = acv\nkpv = 200\nkrv = 0\n")
    out = str(tmp_path / "d.csv")
    code = cli.main(["measure", "--config", cfg, "--freqs", "35",
                     "--out", out])
    assert code == 3
    assert "numerical error" in capsys.readouterr().err


def test_argparse_usage_error_exits_nonzero():
    with pytest.raises(SystemExit):
        cli.main([])
    with pytest.raises(SystemExit):
        cli.main(["sweep"])  # missing required --config
