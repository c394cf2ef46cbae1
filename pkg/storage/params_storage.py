import json
import logging

import numpy as np

from models.config import SCALAR_MODES
from models.errors import ArchParseError
from models.network import LayerParams, NetworkParams
from models.tensor_core import as_exact, to_mode

logger = logging.getLogger(__name__)

REQUIRED_FIELDS = ["mode", "layers"]
LAYER_FIELDS = ["shared", "weights", "biases"]


def _encode(values, mode):
    # Rationals as "p/q" strings, floats as JSON numbers
    if mode == "exact":
        return np.frompyfunc(str, 1, 1)(values).tolist()
    return values.tolist()


def params_to_dict(params):
    return {
        "mode": params.mode,
        "layers": [
            {
                "shared": lp.shared,
                "weights": _encode(lp.weights, lp.mode),
                "biases": _encode(lp.biases, lp.mode),
            }
            for lp in params
        ],
    }


# Validate a params document
def validate_params_payload(payload):
    if not isinstance(payload, dict):
        return "Params must be a JSON object"
    for name in payload:
        if name not in REQUIRED_FIELDS:
            return f"Unknown field '{name}'"
    for name in REQUIRED_FIELDS:
        if name not in payload:
            return f"Missing required field '{name}'"
    if payload["mode"] not in SCALAR_MODES:
        return f"Field 'mode' must be one of {', '.join(SCALAR_MODES)}"
    if not isinstance(payload["layers"], list):
        return "Field 'layers' must be a list"

    for index, layer in enumerate(payload["layers"]):
        where = f"layers[{index}]"
        if not isinstance(layer, dict):
            return f"{where} must be an object"
        for name in layer:
            if name not in LAYER_FIELDS:
                return f"{where}: unknown field '{name}'"
        for name in LAYER_FIELDS:
            if name not in layer:
                return f"{where}: missing required field '{name}'"
        if not isinstance(layer["shared"], bool):
            return f"{where}.shared must be true or false"
        for name in ("weights", "biases"):
            if not isinstance(layer[name], list):
                return f"{where}.{name} must be a nested list"
    return None


def params_from_dict(payload, source="<params>"):
    error = validate_params_payload(payload)
    if error:
        raise ArchParseError(f"{source}: {error}")

    mode = payload["mode"]
    layers = []
    for index, layer in enumerate(payload["layers"]):
        try:
            weights = to_mode(as_exact(layer["weights"]), mode)
            biases = to_mode(as_exact(layer["biases"]), mode)
        except (TypeError, ValueError, ZeroDivisionError) as e:
            raise ArchParseError(f"{source}: layers[{index}]: bad value ({e})")
        layers.append(LayerParams(weights, biases, layer["shared"], mode))
    return NetworkParams(tuple(layers))


def load_params(path, spec=None):
    try:
        with open(path, encoding="utf-8") as file:
            payload = json.load(file)
    except FileNotFoundError:
        raise ArchParseError(f"{path}: no such params file")
    except json.JSONDecodeError as e:
        raise ArchParseError(f"{path}:{e.lineno}:{e.colno}: {e.msg}")

    params = params_from_dict(payload, source=path)
    if spec is not None:
        params.check(spec)
    return params


def save_params(params, path):
    with open(path, "w", encoding="utf-8") as file:
        json.dump(params_to_dict(params), file, indent=2)
        file.write("\n")
    logger.debug("wrote %d layers of %s params to %s", len(params), params.mode, path)
