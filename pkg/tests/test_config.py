import textwrap

import pytest

from resonate.config import RunConfig, apply_override, load_config, parse_override, worker_count
from resonate.errors import ConfigError
from resonate.geometry import DumbbellSpec, RectangleSpec, ResonatorSpec


def _write(tmp_path, text):
    path = tmp_path / "config.yaml"
    path.write_text(textwrap.dedent(text))
    return path


def test_defaults_without_a_file():
    config = load_config()
    assert isinstance(config, RunConfig)
    assert config.mesh.neck_layers == 8
    assert config.source is None
    assert isinstance(config.geometry.build(), ResonatorSpec)


def test_file_values_and_types(tmp_path):
    path = _write(tmp_path, """
        geometry:
          kind: rectangle
          width: 1
          height: 2
        mesh:
          h: 0.1
        sweep:
          epsilons: [0.4, 0.3, 0.2]
        seed: 7
    """)
    config = load_config(path)
    assert config.source == str(path)
    assert isinstance(config.mesh.h, float)
    assert config.sweep.epsilons == [0.4, 0.3, 0.2]
    assert config.seed == 7
    assert isinstance(config.geometry.build(), RectangleSpec)


def test_unknown_key_reports_its_line(tmp_path):
    path = _write(tmp_path, """
        mesh:
          h: 0.1
          hh: 0.2
    """)
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert f"{path}:4: mesh.hh: unknown key" in str(info.value)
    assert info.value.details["line"] == 4


def test_wrong_type_is_rejected(tmp_path):
    path = _write(tmp_path, """
        fem:
          order: two
    """)
    with pytest.raises(ConfigError, match="fem.order"):
        load_config(path)


def test_range_problem_names_the_key(tmp_path):
    path = _write(tmp_path, """
        mesh:
          neck_layers: 4
    """)
    with pytest.raises(ConfigError, match=r":3: mesh.neck_layers: must be at least 8"):
        load_config(path)


def test_unknown_section(tmp_path):
    path = _write(tmp_path, "solver:\n  tol: 1\n")
    with pytest.raises(ConfigError, match="solver: unknown key"):
        load_config(path)


def test_malformed_yaml(tmp_path):
    path = _write(tmp_path, "mesh: [h\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")


def test_overrides_win_over_the_file(tmp_path):
    path = _write(tmp_path, "mesh:\n  h: 0.1\n")
    config = load_config(path, ["mesh.h=0.05", "geometry.kind=dumbbell", "sweep.epsilons=[0.3, 0.2]"])
    assert config.mesh.h == 0.05
    assert config.sweep.epsilons == [0.3, 0.2]
    assert isinstance(config.geometry.build(), DumbbellSpec)


def test_override_parsing():
    assert parse_override("wave.offset=1.5") == ("wave.offset", 1.5)
    with pytest.raises(ConfigError):
        parse_override("mesh.h")
    with pytest.raises(ConfigError):
        apply_override({}, "bogus.h=1")


def test_ellipse_needs_semi_axes():
    with pytest.raises(ConfigError, match="geometry.cavity.semi_x"):
        load_config(overrides=["geometry.cavity={kind: ellipse}"])


def test_snapshot_omits_the_source(tmp_path):
    snapshot = load_config(_write(tmp_path, "seed: 3\n")).snapshot()
    assert "source" not in snapshot
    assert snapshot["seed"] == 3


def test_worker_count_respects_the_environment(monkeypatch):
    monkeypatch.setenv("RESONATE_THREADS", "2")
    assert worker_count() == 2
    assert worker_count(8) == 2
    assert worker_count(1) == 1
    monkeypatch.delenv("RESONATE_THREADS")
    assert worker_count(0) == 1
