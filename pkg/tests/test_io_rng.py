import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adamfield.io import config_hash, fmt, read_csv, write_csv, write_dat, write_manifest
from adamfield.rng import stream, worker_count


@given(st.floats(allow_nan=False))
def test_fmt_round_trips_doubles(x):
    assert float(fmt(x)) == x


def test_fmt_special_values():
    assert fmt(True) == "true" and fmt(np.bool_(False)) == "false"
    assert fmt(np.int64(7)) == "7" and fmt(None) == "" and fmt("a") == "a"


def test_csv_and_dat(tmp_path):
    write_csv(tmp_path / "sub" / "a.csv", ["x", "y"], [[1, 0.1], [2, 1 / 3]])
    header, rows = read_csv(tmp_path / "sub" / "a.csv")
    assert header == ["x", "y"] and float(rows[1][1]) == 1 / 3
    write_dat(tmp_path / "a.dat", ["x", "y"], [[1, 0.5]])
    assert (tmp_path / "a.dat").read_text() == "# x y\n1 0.5\n"


def test_config_hash_ignores_key_order():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_manifest(tmp_path):
    m = write_manifest(tmp_path / "m.json", "simulate", {"a": 1}, 3, ["x.csv"], {"n": np.int64(4)})
    loaded = json.loads((tmp_path / "m.json").read_text())
    assert loaded["config_hash"] == config_hash({"a": 1}) == m["config_hash"]
    assert loaded["results"]["n"] == 4 and "numpy" in loaded["versions"]


def test_streams_are_keyed():
    a = stream(1, 2, 3).random(5)
    assert np.array_equal(a, stream(1, 2, 3).random(5))
    assert not np.array_equal(a, stream(1, 3, 2).random(5))
    assert not np.array_equal(a, stream(1, 2).random(5))
    with pytest.raises(ValueError):
        stream(-1)


def test_worker_count(monkeypatch):
    monkeypatch.setenv("ADAMFIELD_THREADS", "3")
    assert worker_count() == 3 and worker_count(2) == 2
    monkeypatch.setenv("ADAMFIELD_THREADS", "zero")
    assert worker_count() >= 1
