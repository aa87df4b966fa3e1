import json
import math

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from resonate.outputs import read_csv, read_json, save_svg, sha256, write_csv, write_json


def test_json_plain_types(tmp_path):
    data = {
        "rho": np.complex128(9.8 - 0.01j),
        "values": np.array([1.0, np.nan]),
        "count": np.int64(3),
        "ok": np.bool_(True),
        "inf": math.inf,
    }
    path = write_json(data, tmp_path / "out.json")
    back = read_json(path)
    assert back["rho"] == {"re": 9.8, "im": -0.01}
    assert back["values"] == [1.0, None]
    assert back["count"] == 3 and back["ok"] is True
    assert back["inf"] is None
    assert path.read_text().endswith("}\n")


def test_json_is_key_sorted(tmp_path):
    path = write_json({"b": 1, "a": 2}, tmp_path / "out.json")
    assert list(json.loads(path.read_text())) == ["a", "b"]


def test_csv_keeps_full_precision(tmp_path):
    value = 1.0 / 3.0
    path = write_csv(pd.DataFrame({"x": [value], "name": ["a"]}), tmp_path / "t.csv")
    assert read_csv(path)["x"][0] == value
    assert path.read_text().splitlines()[0] == "x,name"


def test_rewrites_are_byte_identical(tmp_path):
    table = pd.DataFrame({"x": np.linspace(0, 1, 7)})
    a = sha256(write_csv(table, tmp_path / "a.csv"))
    b = sha256(write_csv(table, tmp_path / "b.csv"))
    assert a == b


def test_svg_has_no_date_and_is_reproducible(tmp_path):
    paths = []
    for name in ("a.svg", "b.svg"):
        fig, ax = plt.subplots()
        ax.plot([0, 1], [1, 0])
        paths.append(save_svg(fig, tmp_path / name))
    text = paths[0].read_text()
    assert "<dc:date>" not in text
    assert sha256(paths[0]) == sha256(paths[1])
