import json
import subprocess
import sys

import numpy as np
import pytest

from sibi import cli, io
from sibi.endor import CouplingTable, read_coupling_csv, synthesize_spectrum, write_coupling_csv
from sibi.lattice import read_bath_csv

SMALL = ["--side", "30", "--n-configs", "2", "--workers", "1"]


def run(argv, capsys=None):
    code = cli.main(argv)
    out = capsys.readouterr() if capsys else None
    return code, out


# --------------------------------------------------------------- parsing

def test_defaults_and_units():
    cfg = cli.resolve(["decay", "--B", "320"], environ={})
    assert cfg.params["B"] == [320.0] and cfg.transition == (12, 9)
    spec = cfg.lattice_spec()
    assert spec.side_length == 80.0 and spec.occupancy_p == 0.0467 and spec.seed == 0
    assert str(cfg.output_dir) == "."


def test_parse_helpers():
    assert cli.parse_transition("12,9") == (12, 9)
    assert cli.parse_transition([15, 6]) == (15, 6)
    np.testing.assert_allclose(cli.parse_range("100:600:6"), [0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
    np.testing.assert_allclose(cli.parse_vector("1,1,0"), [1, 1, 0])
    with pytest.raises(ValueError):
        cli.parse_transition("12")


def test_config_file_and_flag_precedence(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("# settings\nseed = 9\nside = 40\nn_configs = 3\n")
    cfg = cli.resolve(["decay", "--config", str(conf), "--B", "320", "--side", "50"], environ={})
    assert cfg.seed == 9 and cfg.params["n_configs"] in (3, "3")
    assert cfg.lattice_spec().side_length == 50.0


def test_config_file_unknown_key(tmp_path):
    conf = tmp_path / "bad.conf"
    conf.write_text("seed = 1\nbogus = 2\n")
    with pytest.raises(ValueError, match=r"bad\.conf:2"):
        cli.resolve(["owp", "--config", str(conf)], environ={})


def test_output_dir_from_environment(tmp_path):
    cfg = cli.resolve(["owp"], environ={cli.OUTPUT_ENV: str(tmp_path)})
    assert cfg.output_dir == tmp_path
    cfg = cli.resolve(["owp", "--output-dir", str(tmp_path / "x")], environ={cli.OUTPUT_ENV: str(tmp_path)})
    assert cfg.output_dir == tmp_path / "x"


@pytest.mark.parametrize("argv", [["decay", "--B", "2500"], ["decay", "--B", "300", "--occupancy", "1.5"],
                                  ["decay", "--B", "300", "--side", "5"], ["endor", "--B", "300", "--sigma", "0"]])
def test_range_validation(argv):
    with pytest.raises(ValueError):
        cli.resolve(argv, environ={})


# -------------------------------------------------------------- commands

def test_owp_command(tmp_path, capsys):
    code, out = run(["owp", "--transition", "12,9", "--output-dir", str(tmp_path)], capsys)
    assert code == 0
    d = json.loads((tmp_path / "owp.json").read_text())
    assert abs(d["B_owp_mT"] - 188.0) <= 0.1
    assert d["version"] and str(tmp_path / "owp.json") in out.out
    assert io.read_owp(tmp_path / "owp.json").B_owp == pytest.approx(0.188, abs=1e-4)


def test_decay_command_round_trip(tmp_path, capsys):
    code, _ = run(["decay", "--B", "320", "--seed", "5", "--output-dir", str(tmp_path)] + SMALL, capsys)
    assert code == 0
    curve = io.read_echo_curve(tmp_path / "echo_B320mT.csv")
    assert curve.L[0] == 1.0 and curve.meta["seed"] == 5 and curve.meta["n_configs"] == 2
    text = (tmp_path / "echo_B320mT.csv").read_text()
    assert text.startswith("# version:") and "# seed: 5" in text
    fit = json.loads((tmp_path / "echo_B320mT_fit.json").read_text())
    assert "T_SD_s" in fit and "diverged" in fit


def test_decay_at_owp_stays_high(tmp_path):
    assert cli.main(["decay", "--B", "188.0", "--output-dir", str(tmp_path), "--side", "40",
                     "--n-configs", "3", "--workers", "1"]) == 0
    curve = io.read_echo_curve(tmp_path / "echo_B188mT.csv")
    assert curve.L.min() > 0.9
    assert json.loads((tmp_path / "echo_B188mT_fit.json").read_text())["diverged"] is True


def test_repeat_runs_byte_identical(tmp_path):
    outs = []
    for k, workers in enumerate(("1", "2")):
        d = tmp_path / str(k)
        assert cli.main(["sweep", "--B", "180", "320", "--output-dir", str(d), "--side", "30", "--n-configs", "2",
                         "--workers", workers, "--no-ladder"]) == 0
        outs.append(((d / "sweep.csv").read_bytes(), (d / "sweep.json").read_bytes()))
    assert outs[0] == outs[1]


def test_sweep_range_and_read_back(tmp_path):
    assert cli.main(["sweep", "--sweep", "300:320:2", "--output-dir", str(tmp_path), "--no-ladder"] + SMALL) == 0
    res = io.read_sweep(tmp_path / "sweep.csv")
    np.testing.assert_allclose(res.B_values, [0.3, 0.32])
    assert res.meta["seed"] == 0 and res.meta["n_configs"] == 2


def test_lattice_command(tmp_path):
    assert cli.main(["lattice", "--index", "2", "--seed", "4", "--output-dir", str(tmp_path), "--side", "40"]) == 0
    bath = read_bath_csv(tmp_path / "bath_2.csv")
    assert bath.seed == 4 ^ 2 and len(bath) > 0


def test_endor_single_field(tmp_path):
    table = tmp_path / "c.csv"
    write_coupling_csv(table, CouplingTable.isotropic([2e6, 4.5e6]))
    assert cli.main(["endor", "--couplings", str(table), "--B", "300", "--output-dir", str(tmp_path)]) == 0
    sp = io.read_spectrum(tmp_path / "spectrum_12-9_B300mT.csv")
    ref = synthesize_spectrum(CouplingTable.isotropic([2e6, 4.5e6]), (12, 9), 0.3)
    np.testing.assert_allclose(sp.amplitude, ref.amplitude, rtol=1e-12)


def test_endor_empty_table_flat(tmp_path):
    assert cli.main(["endor", "--B", "188", "--output-dir", str(tmp_path)]) == 0
    assert np.all(io.read_spectrum(tmp_path / "spectrum_12-9_B188mT.csv").amplitude == 0)


def test_endor_sweep_trajectories(tmp_path):
    table = tmp_path / "c.csv"
    write_coupling_csv(table, CouplingTable.isotropic([2e6]))
    assert cli.main(["endor", "--couplings", str(table), "--sweep", "100:600:51", "--output-dir", str(tmp_path)]) == 0
    rows = [ln.split(",") for ln in (tmp_path / "lines.csv").read_text().splitlines() if not ln.startswith("#")]
    assert rows[0] == ["B_mT", "transition", "coupling", "level", "frequency_MHz"]
    assert len(rows) == 1 + 51 * 2


def test_fit_spectrum_command(tmp_path):
    table = CouplingTable.isotropic([2e6, 4.5e6])
    files = []
    for B in (0.3, 0.45):
        path = tmp_path / f"s{B}.csv"
        io.write_spectrum(path, synthesize_spectrum(table, (12, 9), B))
        files.append(str(path))
    assert cli.main(["fit-spectrum", *files, "--output-dir", str(tmp_path)]) == 0
    got = read_coupling_csv(tmp_path / "couplings.csv")
    np.testing.assert_allclose(np.sort(got.a_iso), [2e6, 4.5e6], rtol=1e-3)


# ---------------------------------------------------------------- errors

def test_error_is_single_json_line(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("frequency_MHz,amplitude\n1.0,x\n")
    code, out = run(["fit-spectrum", str(bad), "--output-dir", str(tmp_path)], capsys)
    assert code == 1
    lines = out.err.strip().splitlines()
    assert len(lines) == 1
    err = json.loads(lines[0])
    assert err["error"] == "ValueError" and "bad.csv:2" in err["message"]


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sibi.cli", "decay", "--B", "-5"], capture_output=True, text=True,
                          cwd=tmp_path)
    assert proc.returncode == 1
    assert json.loads(proc.stderr.strip())["error"]
