import csv
import math
import subprocess
import sys
from pathlib import Path

import pytest

from spincool.cli import main, read_curve
from spincool.config import ConfigError, load_molecule
from spincool.sequences import inversion_recovery

EXPERIMENTS = Path(__file__).resolve().parents[1] / "experiments"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def read_report(path: Path) -> dict:
    rows = [r for r in csv.reader(path.read_text().splitlines()) if r and not r[0].startswith("#")]
    return {r[0]: float(r[1]) for r in rows[1:]}


def read_kv(path: Path) -> dict:
    return dict(line.split(" = ", 1) for line in path.read_text().splitlines())


def write_experiment(tmp_path: Path, body: str) -> Path:
    p = tmp_path / "exp.toml"
    p.write_text(body)
    return p


# -- run ------------------------------------------------------------------------------------


def test_run_glycine_wait(tmp_path, capsys):
    code, out, _ = run(capsys, "run", EXPERIMENTS / "glycine_hccwait.toml", "--out", tmp_path)
    assert code == 0
    assert out.startswith("spec_hash = ")
    expected = 1 + 2 * math.exp(-19.04 / 31.6)
    assert read_report(tmp_path / "report.csv")["C1"] == pytest.approx(expected, abs=1e-3)
    assert expected == pytest.approx(2.09, abs=0.01)
    names = {p.name for p in tmp_path.iterdir()}
    assert names == {"report.csv", "report.txt", "spectrum_C13.csv", "spectrum_H1.csv", "trajectory.csv"}
    h = read_kv(tmp_path / "report.txt")["spec_hash"]
    for name in names - {"report.txt"}:
        assert (tmp_path / name).read_text().startswith(f"# spec_hash = {h}\n")


def test_report_records_temperatures(tmp_path, capsys):
    run(capsys, "run", EXPERIMENTS / "glycine_hccwait.toml", "--out", tmp_path)
    rows = list(csv.reader((tmp_path / "report.csv").read_text().splitlines()[1:]))
    assert rows[0] == ["spin", "factor", "temperature_K"]
    c1 = next(r for r in rows if r[0] == "C1")
    assert float(c1[2]) == pytest.approx(297.0 / float(c1[1]))


def test_trajectory_lists_marks(tmp_path, capsys):
    run(capsys, "run", EXPERIMENTS / "glycine_hccwait.toml", "--out", tmp_path)
    lines = (tmp_path / "trajectory.csv").read_text().splitlines()[1:]
    assert [line.split(",")[0] for line in lines] == ["step", "start", "relay", "wait", "end"]


def test_identical_runs_are_byte_identical(tmp_path, capsys):
    for d in ("a", "b"):
        assert run(capsys, "run", EXPERIMENTS / "glutamate_potent.toml", "--out", tmp_path / d)[0] == 0
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_missing_molecule_file(tmp_path, capsys):
    exp = write_experiment(tmp_path, 'molecule = "mols/absent.toml"\n[sequence]\nname = "hcc"\n')
    code, _, err = run(capsys, "run", exp)
    assert code != 0
    assert err.count("\n") == 1
    assert str(tmp_path / "mols" / "absent.toml") in err
    assert err.startswith("spincool: error: ConfigError: ")


def test_missing_experiment_file(tmp_path, capsys):
    code, _, err = run(capsys, "run", tmp_path / "nope.toml")
    assert code == 2
    assert "nope.toml" in err


def test_unknown_key_is_single_line_with_position(tmp_path, capsys):
    exp = write_experiment(tmp_path, 'molecule = "glycine"\nspeed = 3\n[sequence]\nname = "hcc"\n')
    code, _, err = run(capsys, "run", exp)
    assert code == 2
    assert f"{exp}:2:1: unknown key 'speed'" in err
    assert err.count("\n") == 1


def test_bad_sequence_parameter(tmp_path, capsys):
    exp = write_experiment(tmp_path, 'molecule = "glycine"\n[sequence]\nname = "hcc"\n[sequence.params]\nd9 = 1.0\n')
    code, _, err = run(capsys, "run", exp)
    assert code == 2
    assert "unknown sequence parameter 'd9'" in err


def test_sequence_file_experiment(tmp_path, capsys):
    code, _, _ = run(capsys, "run", EXPERIMENTS / "custom_inept.toml", "--out", tmp_path)
    assert code == 0
    assert read_report(tmp_path / "report.csv")["C2"] > 3.9


def test_schedule_experiment(tmp_path, capsys):
    code, _, _ = run(capsys, "run", EXPERIMENTS / "glycine_ac.toml", "--out", tmp_path)
    assert code == 0
    lines = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert [line.split(",")[0] for line in lines[2:]] == [f"round_{i}" for i in range(4)]


def test_inversion_recovery_experiment(tmp_path, capsys):
    code, _, _ = run(capsys, "run", EXPERIMENTS / "glycine_ir_c1.toml", "--out", tmp_path, "--seed", 3)
    assert code == 0
    kv = read_kv(tmp_path / "report.txt")
    assert float(kv["fit.t1"]) == pytest.approx(31.6, rel=0.03)
    assert kv["fit.converged"] == "true"
    assert len(read_curve(tmp_path / "curve.csv")) == 17


def test_gd_override_is_flagged(tmp_path, capsys):
    code, _, _ = run(capsys, "run", EXPERIMENTS / "glutamate_1mM_potent.toml", "--out", tmp_path)
    assert code == 0
    kv = read_kv(tmp_path / "report.txt")
    assert kv["meta.t1_derived_from_relaxivity"] == "true"
    assert "meta.t2_scaling" in kv


def test_step_override_agrees_with_exact(tmp_path, capsys):
    exp = write_experiment(tmp_path, 'molecule = "glycine"\n[sequence]\nname = "hcc"\n')
    run(capsys, "run", exp, "--out", tmp_path / "exact")
    run(capsys, "run", exp, "--out", tmp_path / "split", "--step", 1e-6)
    a, b = read_report(tmp_path / "exact" / "report.csv"), read_report(tmp_path / "split" / "report.csv")
    for k in a:
        assert b[k] == pytest.approx(a[k], abs=1e-6)


def test_grid_runs_in_parallel(tmp_path, capsys):
    code, out, _ = run(capsys, "run", EXPERIMENTS / "glycine_d3_grid.toml", "--out", tmp_path / "par", "--jobs", 2)
    assert code == 0
    assert out.count("spec_hash = ") == 5
    run(capsys, "run", EXPERIMENTS / "glycine_d3_grid.toml", "--out", tmp_path / "seq")
    points = sorted(p.name for p in (tmp_path / "par").iterdir() if p.is_dir())
    assert points == [f"point_{i:03d}" for i in range(5)]
    for p in points:
        assert (tmp_path / "par" / p / "report.csv").read_bytes() == (tmp_path / "seq" / p / "report.csv").read_bytes()
    grid = (tmp_path / "par" / "grid.csv").read_text().splitlines()
    assert grid[0] == "point,d3,spec_hash"
    assert len({row.split(",")[2] for row in grid[1:]}) == 5
    c1 = [read_report(tmp_path / "par" / p / "report.csv")["C1"] for p in points]
    assert c1 == sorted(c1, reverse=True)


# -- fit --------------------------------------------------------------------------------------


def test_fit_command(tmp_path, capsys, glycine):
    curve = tmp_path / "curve.csv"
    rows = inversion_recovery(glycine, "C2", 17)
    curve.write_text("# simulated\ntau_s,polarization\n" + "".join(f"{t!r},{e!r}\n" for t, e in rows))
    code, out, _ = run(capsys, "fit", curve)
    assert code == 0
    kv = dict(line.split(" = ") for line in out.splitlines())
    assert float(kv["t1"]) == pytest.approx(3.75, rel=1e-3)
    assert kv["converged"] == "true"


def test_fit_rejects_degenerate_curve(tmp_path, capsys):
    curve = tmp_path / "flat.csv"
    curve.write_text("1,0.5\n2,0.5\n3,0.5\n")
    code, _, err = run(capsys, "fit", curve)
    assert code == 2
    assert "degenerate" in err


def test_curve_reader_allows_only_leading_header(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("tau,eps\n1,0.1\nbad,row\n")
    with pytest.raises(ConfigError, match=":3:1:"):
        read_curve(p)


# -- scan-d7 and list ---------------------------------------------------------------------------


def test_scan_d7(tmp_path, capsys):
    exp = write_experiment(tmp_path, 'molecule = "glycine"\n[sequence]\nname = "hcc"\n[overrides]\nrelaxation = false\n')
    code, out, _ = run(capsys, "scan-d7", exp, "--halfwidth", 0.05, "--grid-step", 0.01, "--out", tmp_path / "o")
    assert code == 0
    kv = dict(line.split(" = ") for line in out.splitlines())
    assert float(kv["d7_best"]) == pytest.approx(float(kv["d7_nominal"]), rel=1e-12)
    assert (tmp_path / "o" / "scan_d7.txt").read_text() == out


def test_list_catalog(capsys):
    code, out, _ = run(capsys, "list")
    assert code == 0
    mols, seqs = out.split("sequences:")
    assert len(mols.strip().splitlines()) - 1 == 4
    assert {line.strip() for line in seqs.strip().splitlines()} == {
        "inept", "hcc", "hcc_wait", "potent", "potent_plus", "inversion_recovery"}


def test_list_with_empty_library(tmp_path, capsys):
    code, out, _ = run(capsys, "list", "--library", tmp_path)
    assert code == 0
    assert "glutamate_gd_310" in out
    assert "(user)" not in out


def test_list_with_user_molecule(tmp_path, capsys):
    (tmp_path / "mine.toml").write_text(load_molecule("glycine").dumps())
    _, out, _ = run(capsys, "list", "--library", tmp_path)
    assert "mine  (user)" in out


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "spincool", "run", str(tmp_path / "missing.toml")],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert proc.stderr.strip().endswith(f"experiment file not found: {tmp_path / 'missing.toml'}")
