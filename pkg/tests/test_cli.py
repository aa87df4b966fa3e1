import json

import pytest

from resonate.cli import build_parser, main, reference_eigenvalues
from resonate.geometry import CavitySpec, RectangleSpec
from resonate.outputs import read_csv, read_json


def _config(tmp_path, text):
    path = tmp_path / "config.yaml"
    path.write_text(text)
    return path


def test_reference_eigenvalues():
    rect = reference_eigenvalues(RectangleSpec(1.0, 2.0), 3)
    assert rect == pytest.approx([12.3370, 19.7392, 32.0762], abs=1e-4)
    disc = reference_eigenvalues(CavitySpec.disc(1.0), 3)
    # the second disc eigenvalue is double
    assert disc[1] == disc[2]
    assert disc[0] == pytest.approx(5.7832, abs=1e-4)


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_report_on_empty_directory(tmp_path, capsys):
    code = main(["report", "--out", str(tmp_path / "run")])
    assert code == 4
    error = read_json(tmp_path / "run" / "error.json")
    assert error["error"] == "MissingArtifactError"
    lines = [line for line in capsys.readouterr().err.splitlines() if line.startswith("{")]
    assert json.loads(lines[-1])["exit_code"] == 4


def test_bad_config_exits_with_two(tmp_path):
    path = _config(tmp_path, "mesh:\n  h: -1\n")
    assert main(["mesh", "--config", str(path)]) == 2
    error = read_json(tmp_path / "run" / "error.json")
    assert "mesh.h" in error["message"]


def test_wrong_geometry_for_command(tmp_path):
    path = _config(tmp_path, "geometry:\n  kind: rectangle\n")
    assert main(["resonance", "--config", str(path)]) == 2


def test_mesh_command_writes_a_manifest(tmp_path):
    path = _config(tmp_path, "geometry:\n  kind: rectangle\n  width: 1\n  height: 1\nmesh:\n  h: 0.2\n")
    assert main(["mesh", "--config", str(path)]) == 0
    run = tmp_path / "run"
    manifest = read_json(run / "manifest.json")
    assert manifest["outputs"]["mesh"] == ["mesh.svg", "mesh.txt", "mesh_quality.json"]
    assert "mesh.txt" in manifest["mesh_hashes"]
    assert read_json(run / "mesh_quality.json")["area"] == pytest.approx(1.0)


def test_rectangle_eigenvalues_end_to_end(tmp_path):
    path = _config(tmp_path, "geometry:\n  kind: rectangle\nmesh:\n  h: 0.2\n")
    out = tmp_path / "out"
    code = main(["eigs", "--config", str(path), "--set", "mesh.h=0.1", "--set", "spectra.count=3", "--out", str(out)])
    assert code == 0
    table = read_csv(out / "eigenvalues.csv")
    assert list(table["index"]) == [1, 2, 3]
    assert (table["relative_error"] < 1e-3).all()
    assert main(["report", "--config", str(path), "--out", str(out)]) == 0
    assert read_json(out / "summary.json")["passed"]
