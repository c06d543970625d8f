"""Config parsing, validation diagnostics, and end-to-end runs."""

import numpy as np
import pytest

from misfit import cli

BASE = """\
[mesh]
xmin = -7.5
xmax = 7.5
ymin = -7.5
ymax = 7.5
nx = 16
ny = 16

[particles]
circles = 0 0 5

[materials]
lambda = 58.17
mu = 26.13
misfit = 0.01
gamma0 = 0.0
tau_s = -1.0
l_s = 10.0
"""


def _write(tmp_path, text, name="case.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_parses_baseline(tmp_path):
    cfg = cli.load_config(_write(tmp_path, BASE), "solve")
    assert cfg.mode == "solve"
    assert cfg.length_scale == pytest.approx(5.0)
    assert cfg.stress_scale == pytest.approx(26.13)
    lam, mu = cfg.lame_reduced()
    assert lam == pytest.approx(58.17 / 26.13)
    assert mu == pytest.approx(1.0)


def test_unknown_key_reports_line(tmp_path):
    text = BASE + "bogus = 1\n"
    p = _write(tmp_path, text)
    with pytest.raises(cli.ConfigError) as err:
        cli.load_config(p, "solve")
    nline = text.splitlines().index("bogus = 1") + 1
    assert f"{p}:{nline}" in str(err.value)
    assert "bogus" in str(err.value)


def test_unknown_section_rejected(tmp_path):
    p = _write(tmp_path, BASE + "\n[extras]\nx = 1\n")
    with pytest.raises(cli.ConfigError) as err:
        cli.load_config(p, "solve")
    assert "extras" in str(err.value)


def test_bad_float_reports_key_line(tmp_path):
    text = BASE.replace("mu = 26.13", "mu = soft")
    p = _write(tmp_path, text)
    with pytest.raises(cli.ConfigError) as err:
        cli.load_config(p, "solve")
    nline = text.splitlines().index("mu = soft") + 1
    assert f"{p}:{nline}" in str(err.value)


def test_extent_ordering(tmp_path):
    p = _write(tmp_path, BASE.replace("xmax = 7.5", "xmax = -9.0"))
    with pytest.raises(cli.ConfigError) as err:
        cli.load_config(p, "solve")
    assert "xmax" in str(err.value) or "extent" in str(err.value).lower()


def test_circle_outside_domain(tmp_path):
    p = _write(tmp_path, BASE.replace("circles = 0 0 5", "circles = 40 0 5"))
    with pytest.raises(cli.ConfigError):
        cli.load_config(p, "solve")


def test_moduli_exclusive(tmp_path):
    p = _write(tmp_path, BASE + "c11 = 246.5\nc12 = 147.3\nc44 = 124.7\n")
    with pytest.raises(cli.ConfigError) as err:
        cli.load_config(p, "solve")
    assert "lambda" in str(err.value) or "c11" in str(err.value)


def test_mode_mismatch(tmp_path):
    p = _write(tmp_path, BASE + "\n[run]\nmode = verify\n")
    with pytest.raises(cli.ConfigError):
        cli.load_config(p, "solve")


def test_evolve_requires_positive_gamma(tmp_path):
    text = BASE + "\n[evolution]\nmax_steps = 5\n"
    p = _write(tmp_path, text)
    with pytest.raises(cli.ConfigError) as err:
        cli.load_config(p, "evolve")
    assert "gamma0" in str(err.value)


def test_verify_requires_centered_circle(tmp_path):
    p = _write(tmp_path, BASE.replace("circles = 0 0 5", "circles = 1 0 5"))
    with pytest.raises(cli.ConfigError):
        cli.load_config(p, "verify")


def test_verify_rejects_anisotropic(tmp_path):
    text = BASE.replace("lambda = 58.17\nmu = 26.13\n",
                        "c11 = 246.5\nc12 = 147.3\nc44 = 124.7\n")
    p = _write(tmp_path, text)
    with pytest.raises(cli.ConfigError) as err:
        cli.load_config(p, "verify")
    assert "isotropic" in str(err.value).lower()


def test_cubic_isotropy_accepted_for_verify(tmp_path):
    # c11 - c12 = 2 c44 makes the cubic law isotropic
    text = BASE.replace("lambda = 58.17\nmu = 26.13\n",
                        "c11 = 110.43\nc12 = 58.17\nc44 = 26.13\n")
    cfg = cli.load_config(_write(tmp_path, text), "verify")
    lam, mu = cfg.lame_reduced()
    assert lam == pytest.approx(58.17 / 26.13, rel=1e-9)
    assert mu == pytest.approx(1.0, rel=1e-9)


def test_characteristic_length_from_physical_units(tmp_path):
    text = BASE.replace("gamma0 = 0.0", "gamma0 = 0.02")
    text = text.replace("lambda = 58.17\nmu = 26.13\n",
                        "c11 = 246.5\nc12 = 147.3\nc44 = 124.7\n")
    text = text.replace("circles = 0 0 5", "circles = 0 0 356.410942")
    text = text.replace("-7.5", "-1069.23").replace("7.5", "1069.23")
    text = text.replace("misfit = 0.01", "misfit = 0.003")
    cfg = cli.load_config(_write(tmp_path, text), "solve")
    assert cfg.characteristic_length() == pytest.approx(20.0, rel=1e-6)


def test_main_exit_codes(tmp_path, capsys):
    good = _write(tmp_path, BASE)
    bad = _write(tmp_path, BASE + "bogus = 1\n", name="bad.ini")
    out = tmp_path / "out"
    rc = cli.main(["solve", "--config", str(good), "--out", str(out)])
    assert rc == 0
    rc = cli.main(["solve", "--config", str(bad), "--out", str(out)])
    assert rc == 2
    assert "bogus" in capsys.readouterr().err


def test_solve_outputs(tmp_path):
    p = _write(tmp_path, BASE)
    out = tmp_path / "run"
    assert cli.main(["solve", "--config", str(p), "--out", str(out)]) == 0
    assert (out / "state.vtk").exists()
    assert (out / "contours.csv").exists()
    summary = (out / "summary.csv").read_text()
    assert "bulk_energy" in summary
    assert "config_hash" in summary


def test_solve_deterministic_rerun(tmp_path):
    p = _write(tmp_path, BASE)
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    cli.main(["solve", "--config", str(p), "--out", str(out1)])
    cli.main(["solve", "--config", str(p), "--out", str(out2)])
    for name in ("state.vtk", "contours.csv", "summary.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_verify_mode_writes_profile(tmp_path):
    text = BASE.replace("nx = 16", "nx = 20").replace("ny = 16", "ny = 20")
    p = _write(tmp_path, text)
    out = tmp_path / "v"
    assert cli.main(["verify", "--config", str(p), "--out", str(out)]) == 0
    prof = (out / "profile.csv").read_text()
    assert "max_rel_err_u_out_band" in prof
    assert "max_rel_err_strain_out_band" in prof
    data = np.loadtxt([l for l in prof.splitlines() if not l.startswith("#")],
                      delimiter=",", skiprows=1)
    assert data.shape[1] == 5


def test_evolve_smoke(tmp_path):
    text = BASE.replace("gamma0 = 0.0", "gamma0 = 0.02")
    text = text.replace("tau_s = -1.0", "tau_s = 0.0")
    text = text.replace("l_s = 10.0", "l_s = 0.0")
    text = text.replace("nx = 16", "nx = 24").replace("ny = 16", "ny = 24")
    text += "\n[evolution]\nmax_steps = 3\n\n[output]\nsnapshot_period = 2\n"
    p = _write(tmp_path, text)
    out = tmp_path / "evo"
    assert cli.main(["evolve", "--config", str(p), "--out", str(out)]) == 0
    metrics = (out / "metrics.csv").read_text()
    assert "a4" in metrics and "energy" in metrics
    assert (out / "contour_trail.csv").exists()
    assert (out / "state_0000.vtk").exists()
