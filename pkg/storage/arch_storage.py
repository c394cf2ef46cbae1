import glob
import json
import logging
import os

from models.config import ARCH_DIR
from models.errors import ArchParseError
from models.network import NetworkSpec, validate

logger = logging.getLogger(__name__)

# Required fields
REQUIRED_FIELDS = ["H", "M", "layers"]
LAYER_FIELDS = ["R", "S", "D"]
OPTIONAL_LAYER_FIELDS = ["shared"]


def is_positive_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool) and value >= 1


# Validate an architecture document
def validate_arch_payload(payload):
    if not isinstance(payload, dict):
        return "Architecture must be a JSON object"

    for name in payload:
        if name not in REQUIRED_FIELDS:
            return f"Unknown field '{name}'"
    for name in REQUIRED_FIELDS:
        if name not in payload:
            return f"Missing required field '{name}'"

    for name in ("H", "M"):
        if not is_positive_int(payload[name]):
            return f"Field '{name}' must be a positive integer"

    layers = payload["layers"]
    if not isinstance(layers, list) or not layers:
        return "Field 'layers' must be a non-empty list"

    for index, layer in enumerate(layers):
        where = f"layers[{index}]"
        if not isinstance(layer, dict):
            return f"{where} must be an object"
        for name in layer:
            if name not in LAYER_FIELDS + OPTIONAL_LAYER_FIELDS:
                return f"{where}: unknown field '{name}'"
        for name in LAYER_FIELDS:
            if name not in layer:
                return f"{where}: missing required field '{name}'"
            if not is_positive_int(layer[name]):
                return f"{where}.{name} must be a positive integer"
        if "shared" in layer and not isinstance(layer["shared"], bool):
            return f"{where}.shared must be true or false"

    return None


def parse_arch(text, source="<string>"):
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise ArchParseError(f"{source}:{e.lineno}:{e.colno}: {e.msg}")

    error = validate_arch_payload(payload)
    if error:
        raise ArchParseError(f"{source}: {error}")

    spec = NetworkSpec.from_dict(payload)
    validate(spec)
    return spec


def resolve_arch(name):
    # A path, or the name of a bundled architecture
    if os.path.isfile(name):
        return name
    bundled = os.path.join(ARCH_DIR, name if name.endswith(".json") else f"{name}.json")
    if os.path.isfile(bundled):
        return bundled
    raise ArchParseError(f"{name}: no such architecture file")


def load_arch(name):
    path = resolve_arch(name)
    with open(path, encoding="utf-8") as file:
        spec = parse_arch(file.read(), source=path)
    logger.debug("loaded %s: H=%d M=%d L=%d", path, spec.H, spec.M, spec.L)
    return spec


def dumps_arch(spec):
    return json.dumps(spec.to_dict(), indent=2) + "\n"


def save_arch(spec, path):
    with open(path, "w", encoding="utf-8") as file:
        file.write(dumps_arch(spec))


def bundled_arches():
    return sorted(glob.glob(os.path.join(ARCH_DIR, "*.json")))
