import json
import os

import pytest

from models.constructions import random_params
from models.errors import ArchParseError, ShapeError
from models.network import NetworkSpec
from storage.arch_storage import (
    bundled_arches,
    dumps_arch,
    load_arch,
    parse_arch,
    resolve_arch,
    save_arch,
    validate_arch_payload,
)
from storage.params_storage import load_params, params_from_dict, params_to_dict, save_params


@pytest.mark.parametrize("path", bundled_arches(), ids=os.path.basename)
def test_bundled_arches_round_trip(path):
    spec = load_arch(path)
    with open(path, encoding="utf-8") as file:
        assert dumps_arch(spec) == file.read()


def test_bundled_names_resolve():
    assert resolve_arch("claim3_H2").endswith("claim3_H2.json")
    assert load_arch("claim3_H2.json") == NetworkSpec(2, 2, ((2, 1, 2), (2, 2, 1)))
    with pytest.raises(ArchParseError):
        resolve_arch("no_such_arch")


def test_save_and_load_arch(tmp_path):
    spec = NetworkSpec(4, 3, ((3, 1, 2, False), (4, 4, 1)))
    path = tmp_path / "arch.json"
    save_arch(spec, str(path))
    assert load_arch(str(path)) == spec


@pytest.mark.parametrize("payload, message", [
    ([], "must be a JSON object"),
    ({"H": 2, "M": 2}, "Missing required field 'layers'"),
    ({"H": 2, "M": 2, "layers": [], "name": "x"}, "Unknown field 'name'"),
    ({"H": 0, "M": 2, "layers": [{"R": 1, "S": 1, "D": 1}]}, "'H' must be a positive integer"),
    ({"H": 2, "M": 2, "layers": []}, "non-empty list"),
    ({"H": 2, "M": 2, "layers": [{"R": 1, "S": 1}]}, "layers[0]: missing required field 'D'"),
    ({"H": 2, "M": 2, "layers": [{"R": 1.5, "S": 1, "D": 1}]}, "layers[0].R must be a positive integer"),
    ({"H": 2, "M": 2, "layers": [{"R": 1, "S": True, "D": 1}]}, "layers[0].S must be a positive integer"),
    ({"H": 2, "M": 2, "layers": [{"R": 1, "S": 1, "D": 1, "shared": "yes"}]}, "shared must be true or false"),
    ({"H": 2, "M": 2, "layers": [{"R": 1, "S": 1, "D": 1, "pad": 0}]}, "unknown field 'pad'"),
])
def test_arch_validation_messages(payload, message):
    assert message in validate_arch_payload(payload)


def test_valid_arch_payload():
    assert validate_arch_payload({"H": 2, "M": 2, "layers": [{"R": 2, "S": 2, "D": 1}]}) is None


def test_parse_error_reports_position():
    with pytest.raises(ArchParseError) as error:
        parse_arch('{\n  "H": 2,\n  "M": }', source="broken.json")
    assert str(error.value).startswith("broken.json:3:")
    assert error.value.code == "ARCH_PARSE"


def test_parse_rejects_invalid_document():
    with pytest.raises(ArchParseError) as error:
        parse_arch(json.dumps({"H": 2, "M": 2, "layers": [{"R": 0, "S": 1, "D": 1}]}), source="bad.json")
    assert "bad.json: layers[0].R" in str(error.value)


@pytest.mark.parametrize("mode", ["exact", "float"])
def test_params_round_trip(tmp_path, mode):
    spec = NetworkSpec(4, 2, ((3, 1, 2, False), (2, 2, 2), (2, 2, 1)))
    params = random_params(spec, seed=8, mode=mode)
    path = tmp_path / "params.json"
    save_params(params, str(path))
    loaded = load_params(str(path), spec)
    assert loaded.mode == mode
    assert loaded.equals(params)


def test_exact_params_are_written_as_fractions():
    spec = NetworkSpec(2, 2, ((2, 2, 1),))
    payload = params_to_dict(random_params(spec, seed=0))
    assert payload["mode"] == "exact"
    assert all(isinstance(v, str) for row in payload["layers"][0]["biases"][0] for v in row)


def test_params_validation(tmp_path):
    with pytest.raises(ArchParseError):
        params_from_dict({"mode": "decimal", "layers": []})
    with pytest.raises(ArchParseError):
        params_from_dict({"mode": "exact", "layers": [{"shared": True, "weights": [["x"]], "biases": []}]})
    with pytest.raises(ArchParseError):
        load_params(str(tmp_path / "missing.json"))

    spec = NetworkSpec(2, 2, ((2, 2, 1),))
    other = NetworkSpec(2, 2, ((2, 2, 2),))
    path = tmp_path / "params.json"
    save_params(random_params(spec), str(path))
    with pytest.raises(ShapeError):
        load_params(str(path), other)
