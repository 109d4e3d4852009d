import copy
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import CONFIGS
from maryland_nls import ExperimentConfig, derive_seed
from maryland_nls.config import ERROR_CODES, load, validate
from maryland_nls.exceptions import ConfigError, CorruptArtifact
from maryland_nls.io import dumps, fmt_float, read_csv, read_json, write_csv, write_json

BASE = {
    "model": {"eps": 0.02, "alpha": [0.6180339887498949], "theta": 0.3, "radius": 6},
    "solver": {"anchors": [{"site": [0], "amplitude": 1.3}]},
    "probes": {"scales": [3, 5]},
}


def _patched(path, value):
    raw = copy.deepcopy(BASE)
    node = raw
    for key in path[:-1]:
        node = node.setdefault(key, {})
    if value is _DROP:
        node.pop(path[-1])
    else:
        node[path[-1]] = value
    return raw


_DROP = object()

CASES = [
    ("E_UNKNOWN_KEY", ("model", "colour"), 1),
    ("E_UNKNOWN_KEY", ("extras",), {}),
    ("E_TYPE", ("model", "radius"), 2.5),
    ("E_MISSING", ("model", "eps"), _DROP),
    ("E_DIMENSION", ("model", "d"), 2),
    ("E_RANGE", ("model", "theta"), 1.5),
    ("E_TAU", ("model", "tau"), 1.0),
    ("E_ANCHOR_AMPLITUDE", ("solver", "anchors"), [{"site": [0]}]),
    ("E_ANCHOR_DISTINCT", ("solver", "anchors"),
     [{"site": [1], "amplitude": 1.3}, {"site": [1], "amplitude": 1.5}]),
    ("E_ANCHOR_WINDOW", ("solver", "anchors"), [{"site": [0], "amplitude": 3.0}]),
    ("E_ANCHOR_SITE", ("solver", "anchors"), [{"site": [9], "amplitude": 1.3}]),
    ("E_CAP", ("cap",), 50),
    ("E_SCALES", ("probes", "scales"), [5, 3]),
    ("E_SCALES", ("probes", "sigma_interval"), [1.0, -1.0]),
    ("E_SEED", ("seed",), -1),
]


def test_base_is_valid():
    cfg = validate(copy.deepcopy(BASE))
    assert cfg["model"]["d"] == 1 and cfg["model"]["tau"] == 2.0 and cfg["solver"]["b"] == 1


@pytest.mark.parametrize("code,path,value", CASES)
def test_error_codes(code, path, value):
    with pytest.raises(ConfigError) as info:
        validate(_patched(path, value))
    assert info.value.code == code


def test_every_code_is_exercised():
    assert {c for c, *_ in CASES} | {"E_READ"} == set(ERROR_CODES)


def test_unreadable_files(tmp_path):
    with pytest.raises(ConfigError) as info:
        load(tmp_path / "missing.yaml")
    assert info.value.code == "E_READ"
    bad = tmp_path / "bad.yaml"
    bad.write_text("model: [unclosed")
    with pytest.raises(ConfigError) as info:
        load(bad)
    assert info.value.code == "E_READ"


@pytest.mark.parametrize("name", ["desk_d1.yaml", "desk_d2.yaml", "quick_d1.yaml"])
def test_shipped_configs_load(name):
    cfg = ExperimentConfig.from_file(CONFIGS / name)
    assert cfg.params().d == len(cfg.section("model")["alpha"])
    assert cfg.resonant().b == cfg.section("solver")["b"]


def test_seed_override_and_substreams():
    a = ExperimentConfig.from_file(CONFIGS / "quick_d1.yaml", seed=11)
    assert a.seed == 11
    assert a.sub_seed("ldt") == derive_seed(11, "ldt")
    assert derive_seed(11, "ldt") != derive_seed(11, "mc") != derive_seed(12, "ldt")
    assert 0 <= derive_seed(2 ** 64 - 1, "x") < 2 ** 64


@given(st.floats(allow_nan=True, allow_infinity=True))
def test_float_round_trip(x):
    text = fmt_float(x)
    back = float(text.replace("Infinity", "inf"))
    assert (math.isnan(x) and math.isnan(back)) or back == x


def test_json_round_trip(tmp_path):
    doc = {"a": np.float64(0.1), "b": [1, 2, 3], "c": {"d": np.arange(3)}, "e": None, "f": 1 + 2j}
    path = write_json(doc, tmp_path / "x.json")
    back = read_json(path)
    assert back["schema_version"] == "1.0"
    assert back["a"] == 0.1 and back["c"]["d"] == [0, 1, 2] and back["f"] == [1.0, 2.0]
    assert dumps(doc) == dumps(doc)


def test_corrupt_artifacts(tmp_path):
    (tmp_path / "x.json").write_text("{not json")
    with pytest.raises(CorruptArtifact):
        read_json(tmp_path / "x.json")
    (tmp_path / "y.json").write_text('{"a": 1}')
    with pytest.raises(CorruptArtifact):
        read_json(tmp_path / "y.json")
    (tmp_path / "z.csv").write_text("a,b\n1\n")
    with pytest.raises(CorruptArtifact):
        read_csv(tmp_path / "z.csv")
    write_csv(tmp_path / "w.csv", ["a", "b"], [[0.1, 2]])
    assert read_csv(tmp_path / "w.csv") == (["a", "b"], [["0.10000000000000001", "2"]])
