import json

import numpy as np
import pytest

from src.errors import KnotFileError
from src.knots.curve import FourierKnot, SampledKnot, TorusKnot, knot_label
from src.knots.io import load_knot_file, parse_knot_definition


def test_parse_torus():
    curve = parse_knot_definition({"kind": "torus", "p": 2, "q": 3, "R": 2.0, "r": 1.0})
    assert isinstance(curve, TorusKnot)
    assert (curve.p, curve.q, curve.R, curve.r) == (2, 3, 2.0, 1.0)


def test_parse_fourier_with_label():
    curve = parse_knot_definition(
        {"kind": "fourier", "label": "circle", "harmonics": [[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]]}
    )
    assert isinstance(curve, FourierKnot)
    assert curve.label == "circle"


def test_parse_samples():
    t = 2 * np.pi * np.arange(32) / 32
    points = np.stack([np.cos(t), np.sin(t), 0 * t], axis=1).tolist()
    assert isinstance(parse_knot_definition({"kind": "samples", "points": points}), SampledKnot)


@pytest.mark.parametrize(
    "definition, key",
    [
        ({}, "kind"),
        ([1, 2, 3], "kind"),
        ({"kind": "spiral"}, "kind"),
        ({"kind": "torus", "p": 2, "q": 3, "R": 2.0}, "r"),
        ({"kind": "torus", "p": 2.5, "q": 3, "R": 2.0, "r": 1.0}, "p"),
        ({"kind": "torus", "p": 2, "q": 3, "R": "big", "r": 1.0}, "R"),
        ({"kind": "fourier", "harmonics": [[1.0, 0.0, 0.0]]}, "harmonics"),
        ({"kind": "samples", "points": []}, "points"),
        ({"kind": "torus", "p": 2, "q": 3, "R": 2.0, "r": 1.0, "label": 7}, "label"),
    ],
)
def test_malformed_definitions_name_the_key(definition, key):
    with pytest.raises(KnotFileError) as e:
        parse_knot_definition(definition)
    assert e.value.key == key
    assert key in str(e.value)


def test_load_example_files(data_dir):
    assert knot_label(load_knot_file(data_dir / "unknot.json")) == "unknot"
    assert knot_label(load_knot_file(data_dir / "trefoil.json")) == "torus(2,3)"
    assert knot_label(load_knot_file(data_dir / "torus_3_4.json")) == "torus(3,4)"
    assert knot_label(load_knot_file(data_dir / "figure_eight.json")) == "figure_eight"


def test_invalid_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"kind": "torus", "p": 2,')
    with pytest.raises(KnotFileError):
        load_knot_file(path)


def test_invalid_knot_is_a_file_error(tmp_path):
    path = tmp_path / "link.json"
    path.write_text(json.dumps({"kind": "torus", "p": 2, "q": 4, "R": 2.0, "r": 1.0}))
    with pytest.raises(KnotFileError) as e:
        load_knot_file(path)
    assert "gcd" in str(e.value)
