import json

import numpy as np
import pandas as pd

from src.reports import decay_figure, dumps_json, kernel_figure, save_figure, sweep_figure, write_csv, write_json


def test_json_is_sorted_and_keeps_full_precision():
    text = dumps_json({"b": 0.1, "a": [1, 2.5], "flag": np.bool_(True)})
    assert text.index('"a"') < text.index('"b"') < text.index('"flag"')
    assert '"b": 0.10000000000000001' in text
    assert json.loads(text) == {"a": [1, 2.5], "b": 0.1, "flag": True}


def test_json_special_values():
    document = json.loads(dumps_json({"nan": float("nan"), "z": 1.5 - 2.0j, "arr": np.array([1.0, 2.0]), "empty": {}}))
    assert document["nan"] == "nan"
    assert document["z"] == {"im": -2.0, "re": 1.5}
    assert document["arr"] == [1.0, 2.0]
    assert document["empty"] == {}


def test_write_json_and_csv(tmp_path):
    path = write_json({"x": 1}, tmp_path / "nested" / "doc.json")
    assert json.loads(path.read_text()) == {"x": 1}
    table = pd.DataFrame({"p": [8, 16], "T": [0.1, 1.0 / 3.0]})
    csv = write_csv(table, tmp_path / "table.csv").read_text()
    lines = csv.splitlines()
    assert lines[0] == "p,T"
    assert lines[1] == "8,0.10000000000000001"
    assert float(lines[2].split(",")[1]) == 1.0 / 3.0


def test_figures(tmp_path):
    sweep = pd.DataFrame({"p": [8, 16, 32], "T": [1.1, 1.05, 1.02], "stderr": [0.0, 0.0, np.nan]})
    assert len(sweep_figure(sweep).data) == 1
    assert len(sweep_figure(sweep, np.array([1.0, 0.3])).data) == 2
    decay = pd.DataFrame({"p": [32, 64], "abs_kernel": [1e-3, 1e-6], "slope": [-10.0, -10.0]})
    assert "log-log slope" in decay_figure(decay).layout.title.text
    pairs = pd.DataFrame({"err": [1e-4, 2e-4], "s_stat": [0.01, 0.02]})
    assert len(kernel_figure(pairs).data) == 2
    written = save_figure(sweep_figure(sweep), tmp_path / "sweep.svg")
    assert written.is_file()
    assert written.suffix in (".svg", ".html")


def test_json_floats_carry_seventeen_digits():
    text = dumps_json({"third": 1.0 / 3.0, "whole": 2.0})
    assert '"third": 0.33333333333333331' in text
    assert '"whole": 2' in text
    assert json.loads(text)["third"] == 1.0 / 3.0
