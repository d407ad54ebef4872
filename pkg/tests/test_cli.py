import csv
import os

import pytest

from subdtune import cli
from subdtune.cli import main, parse_levels, parse_weights, format_weights, read_config
from subdtune.mesh import WeightAssignment, grid_mesh, write_mesh


def _rows(path):
    with open(path) as fh:
        lines = fh.readlines()
    return lines[0], list(csv.DictReader(lines[1:]))


def test_spectrum_writes_csv_with_metadata(tmp_path, capsys):
    assert main(["spectrum", "--valence", "5", "--out", str(tmp_path)]) == 0
    head, rows = _rows(tmp_path / "spectrum_v5.csv")
    assert head.startswith("# subdtune=") and "valence=5" in head
    assert len(rows) == 61
    assert float(rows[1]["lambda"]) == pytest.approx(0.55, abs=5e-4)
    assert "C2 necessary condition: fails" in capsys.readouterr().out


def test_spectrum_from_table_shape(tmp_path):
    assert main(["spectrum", "--valence", "5", "--shape", "saddle", "--out", str(tmp_path)]) == 0
    _, rows = _rows(tmp_path / "spectrum_v5.csv")
    assert float(rows[1]["lambda"]) == pytest.approx(0.585, abs=1e-6)


def test_spectrum_missing_table_entry(tmp_path, capsys):
    assert main(["spectrum", "--valence", "7", "--shape", "cup", "--out", str(tmp_path)]) == 2
    assert "no cup weights for valence 7" in capsys.readouterr().err


def test_tune_rejects_regular_valence(tmp_path, capsys):
    assert main(["tune", "--valence", "4", "--out", str(tmp_path)]) == 2
    assert "regular valence not tunable" in capsys.readouterr().err
    assert main(["tune", "--valence", "3", "--out", str(tmp_path)]) == 2


def test_tune_merges_into_table(tmp_path):
    out = tmp_path / "w.csv"
    args = ["tune", "--valence", "5", "--lambda-range", "0.5:0.6", "--step", "0.02",
            "--tol", "1e-3", "--out", str(out)]
    assert main(args + ["--shape", "cup"]) == 0
    assert main(args + ["--shape", "saddle"]) == 0
    head, rows = _rows(out)
    assert head.startswith("#")
    assert sorted(r["shape"] for r in rows) == ["cup", "saddle"]


def test_tune_bad_range(tmp_path):
    assert main(["tune", "--valence", "5", "--lambda-range", "0.5", "--out", str(tmp_path)]) == 2


def test_solve_and_decompose_round_trip(tmp_path, capsys):
    out = str(tmp_path)
    assert main(["solve", "--mesh", "asymmetric_plate.obj", "--level", "1", "--load",
                 "sinusoidal", "--out", out]) == 0
    head, rows = _rows(tmp_path / "solution.csv")
    assert "level=1" in head and "policy=auto" in head and "ev_weights=" in head
    assert list(rows[0]) == ["vertex_id", "x", "y", "w"]
    _, decided = _rows(tmp_path / "decisions.csv")
    capsys.readouterr()
    sub = tmp_path / "again"
    assert main(["decompose", "--mesh", "asymmetric_plate.obj", "--load", "sinusoidal",
                 "--solution", str(tmp_path / "solution.csv"), "--out", str(sub)]) == 0
    _, again = _rows(sub / "decisions.csv")
    assert [r["ev_id"] for r in again] == [r["ev_id"] for r in decided]
    assert "R =" in capsys.readouterr().out


def test_decompose_solution_level_mismatch(tmp_path):
    out = str(tmp_path)
    assert main(["solve", "--mesh", "symmetric_plate.obj", "--level", "1", "--policy", "cc",
                 "--out", out]) == 0
    path = tmp_path / "solution.csv"
    text = path.read_text().replace("level=1", "level=2", 1)
    path.write_text(text)
    assert main(["decompose", "--mesh", "symmetric_plate.obj", "--solution", str(path),
                 "--out", out]) == 2


def test_decompose_needs_high_valence(tmp_path, capsys):
    mesh = tmp_path / "grid.obj"
    write_mesh(grid_mesh(4, 4, 10.0, 10.0), str(mesh))
    assert main(["decompose", "--mesh", str(mesh), "--level", "1", "--out", str(tmp_path)]) == 2
    assert "no extraordinary vertex" in capsys.readouterr().err


def test_convergence_writes_svg(tmp_path):
    assert main(["convergence", "--mesh", "symmetric_plate.obj", "--levels", "1:2",
                 "--policies", "cc", "--load", "sinusoidal", "--out", str(tmp_path)]) == 0
    head, rows = _rows(tmp_path / "convergence.csv")
    assert "levels=1:2" in head and len(rows) == 2
    assert rows[0]["rate_l2"] == "" and float(rows[1]["rate_l2"]) > 2
    for norm in ("energy", "l2"):
        svg = (tmp_path / f"convergence_{norm}.svg").read_text()
        assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")


def test_convergence_bad_policy(tmp_path):
    assert main(["convergence", "--mesh", "symmetric_plate.obj", "--policies", "best",
                 "--out", str(tmp_path)]) == 2


def test_missing_mesh_is_io_error(tmp_path, capsys):
    missing = str(tmp_path / "nope.obj")
    assert main(["solve", "--mesh", missing, "--out", str(tmp_path)]) == 1
    assert "nope.obj" in capsys.readouterr().err


def test_bad_mesh_is_precondition_error(tmp_path):
    mesh = tmp_path / "bad.obj"
    mesh.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nf 1 2 3\n")
    assert main(["solve", "--mesh", str(mesh), "--out", str(tmp_path)]) == 2


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise cli.P.NumericalError("factorisation failed")
    monkeypatch.setattr(cli.P, "solve_policy", boom)
    assert main(["solve", "--mesh", "symmetric_plate.obj", "--level", "1",
                 "--out", str(tmp_path)]) == 3


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# run settings\nlevels = 1:1\npolicies = cc\nload = sinusoidal\n"
                   f"out = {tmp_path / 'from_cfg'}\n")
    assert main(["--config", str(cfg), "convergence", "--mesh", "symmetric_plate.obj"]) == 0
    head, _ = _rows(tmp_path / "from_cfg" / "convergence.csv")
    assert "load=sinusoidal" in head
    assert main(["--config", str(cfg), "convergence", "--mesh", "symmetric_plate.obj",
                 "--load", "uniform", "--out", str(tmp_path / "flag")]) == 0
    head, _ = _rows(tmp_path / "flag" / "convergence.csv")
    assert "load=uniform" in head


def test_config_rejects_unknown_keys(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("colour = blue\n")
    assert main(["--config", str(cfg), "spectrum", "--valence", "5",
                 "--out", str(tmp_path)]) == 2
    cfg.write_text("just text\n")
    with pytest.raises(cli.UsageError, match="expected key = value"):
        read_config(cfg)


def test_level_parsing():
    assert parse_levels("1:3") == [1, 2, 3]
    assert parse_levels("2,4") == [2, 4]
    for bad in ("0:9", "a:b", ""):
        with pytest.raises(cli.UsageError):
            parse_levels(bad)


def test_weight_metadata_round_trip():
    wa = WeightAssignment({4: (13.5, 0.9, 1.1), 0: (12.0, 1.0, 1.0)})
    back = parse_weights(format_weights(wa))
    assert dict(back.items()) == dict(wa.items())
    assert format_weights(WeightAssignment()) == "classic"
    with pytest.raises(cli.UsageError):
        parse_weights("3-1/2/3")


def test_no_temporary_files_left(tmp_path):
    main(["spectrum", "--valence", "6", "--out", str(tmp_path)])
    assert all(not n.startswith(".tmp") for n in os.listdir(tmp_path))
