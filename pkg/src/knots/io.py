import json
import logging
from typing import Dict

import numpy as np

from src.errors import InvalidKnot, KnotFileError
from src.knots.curve import KnotCurve, make_fourier_knot, make_sampled_knot, make_torus_knot

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

REQUIRED_KEYS = {
    "torus": ["p", "q", "R", "r"],
    "fourier": ["harmonics"],
    "samples": ["points"],
}


def _number(definition: Dict, key: str, integer: bool = False):
    value = definition[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise KnotFileError(key, f"expected a number, got {value!r}")
    if integer and int(value) != value:
        raise KnotFileError(key, f"expected an integer, got {value!r}")
    return int(value) if integer else float(value)


def _table(definition: Dict, key: str, width: int) -> np.ndarray:
    try:
        table = np.asarray(definition[key], dtype=float)
    except (TypeError, ValueError):
        raise KnotFileError(key, "expected a list of numeric rows")
    if table.ndim != 2 or table.shape[1] != width or len(table) == 0:
        raise KnotFileError(key, f"expected a non-empty list of rows with {width} numbers each")
    if not np.all(np.isfinite(table)):
        raise KnotFileError(key, "contains non-finite values")
    return table


def parse_knot_definition(definition: Dict) -> KnotCurve:
    """
    Build a curve from a knot definition.

    Accepted forms (exact field names):
        {"kind": "torus", "p": 2, "q": 3, "R": 2.0, "r": 1.0}
        {"kind": "fourier", "harmonics": [[ax, bx, ay, by, az, bz], ...]}
        {"kind": "samples", "points": [[x, y, z], ...]}
    An optional "label" names the knot in reports and the tunnel catalog.
    """
    if not isinstance(definition, dict):
        raise KnotFileError("kind", "knot definition must be a JSON object")
    if "kind" not in definition:
        raise KnotFileError("kind", "missing key")

    kind = definition["kind"]
    if kind not in REQUIRED_KEYS:
        raise KnotFileError("kind", f"unknown kind {kind!r}, expected one of {sorted(REQUIRED_KEYS)}")
    for key in REQUIRED_KEYS[kind]:
        if key not in definition:
            raise KnotFileError(key, f"missing key for kind {kind!r}")

    label = definition.get("label")
    if label is not None and not isinstance(label, str):
        raise KnotFileError("label", "expected a string")

    if kind == "torus":
        return make_torus_knot(
            _number(definition, "p", integer=True),
            _number(definition, "q", integer=True),
            _number(definition, "R"),
            _number(definition, "r"),
            label=label,
        )
    if kind == "fourier":
        return make_fourier_knot(_table(definition, "harmonics", 6), label=label)
    return make_sampled_knot(_table(definition, "points", 3), label=label)


def load_knot_file(path: str) -> KnotCurve:
    try:
        with open(path, "r", encoding="UTF-8") as f:
            definition = json.load(f)
    except json.JSONDecodeError as e:
        raise KnotFileError("<file>", f"invalid JSON: {e}")

    try:
        curve = parse_knot_definition(definition)
    except InvalidKnot as e:
        raise KnotFileError(definition.get("kind", "kind"), str(e))

    logger.info(f"Loaded {curve.label} ({curve.kind}) from {path}")
    return curve
