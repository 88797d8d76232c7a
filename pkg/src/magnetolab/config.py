"""System configuration documents and the built-in example systems."""

from __future__ import annotations

import copy
import json

import jsonschema

from .geometry import FunctionSpec, GeometryError, MagneticSystem, OneFormSpec, SurfaceModel


class ConfigError(ValueError):
    """Malformed or invalid configuration (CLI exit code 2)."""


_TERMS = {"type": "array", "items": {"type": "array", "items": {"type": "number"},
                                     "minItems": 4, "maxItems": 4}}
_PAIR = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_FOURIER_COMP = {"type": "object", "additionalProperties": False,
                 "properties": {"const": {"type": "number"}, "terms": _TERMS}}

SYSTEM_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["surface", "f", "s"],
    "properties": {
        "name": {"type": "string"},
        "surface": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["sphere", "flat-torus", "conformal-torus", "hyperbolic-halfplane"]},
                "params": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "log_lambda": _TERMS,
                        "dilation": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
            },
        },
        "f": {
            "type": "object",
            "required": ["type"],
            "oneOf": [
                {"additionalProperties": False,
                 "properties": {"type": {"const": "constant"}, "value": {"type": "number"}}},
                {"additionalProperties": False,
                 "properties": {"type": {"const": "fourier"}, "const": {"type": "number"},
                                "terms": _TERMS}},
                {"additionalProperties": False,
                 "properties": {"type": {"const": "ambient"}, "c0": {"type": "number"},
                                "c": {"type": "array", "items": {"type": "number"},
                                      "minItems": 3, "maxItems": 3}}},
                {"additionalProperties": False, "required": ["center", "radius", "width"],
                 "properties": {"type": {"const": "ql-bump"}, "center": _PAIR,
                                "radius": {"type": "number", "exclusiveMinimum": 0},
                                "width": {"type": "number", "exclusiveMinimum": 0},
                                "sharpness": {"type": "number", "exclusiveMinimum": 0}}},
            ],
        },
        "beta": {
            "oneOf": [
                {"type": "null"},
                {"type": "object", "additionalProperties": False, "required": ["type"],
                 "properties": {"type": {"const": "zero"}}},
                {"type": "object", "additionalProperties": False,
                 "required": ["type", "center", "radius", "width"],
                 "properties": {"type": {"const": "ql-bump"}, "center": _PAIR,
                                "radius": {"type": "number", "exclusiveMinimum": 0},
                                "width": {"type": "number", "exclusiveMinimum": 0},
                                "sharpness": {"type": "number", "exclusiveMinimum": 0}}},
                {"type": "object", "additionalProperties": False, "required": ["type"],
                 "properties": {"type": {"const": "fourier"}, "x": _FOURIER_COMP,
                                "y": _FOURIER_COMP}},
            ]
        },
        "s": {"type": "number", "minimum": 0},
        "orientation": {"enum": [1, -1]},
        "meta": {"type": "object"},
    },
}


def _split(spec):
    spec = dict(spec)
    kind = spec.pop("type")
    return kind, spec


def system_from_dict(doc):
    try:
        jsonschema.validate(doc, SYSTEM_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid system config at {path}: {exc.message}") from None
    try:
        surf = doc["surface"]
        S = SurfaceModel(surf["kind"], dict(surf.get("params", {})), int(doc.get("orientation", 1)))
        fk, fp = _split(doc["f"])
        f = FunctionSpec(fk, fp)
        beta = None
        if doc.get("beta") is not None:
            bk, bp = _split(doc["beta"])
            beta = OneFormSpec(bk, bp)
        if f.kind == "ql-bump" and S.kind != "flat-torus":
            raise GeometryError("ql-bump data lives on the flat torus")
        meta = dict(doc.get("meta", {}))
        if "name" in doc:
            meta["name"] = doc["name"]
        return MagneticSystem(S, f, beta, float(doc["s"]), meta)
    except GeometryError as exc:
        raise ConfigError(str(exc)) from None


def system_to_dict(sys):
    doc = {
        "surface": {"kind": sys.surface.kind, "params": copy.deepcopy(sys.surface.params)},
        "f": {"type": sys.f.kind, **copy.deepcopy(sys.f.params)},
        "beta": None if sys.beta is None else {"type": sys.beta.kind, **copy.deepcopy(sys.beta.params)},
        "s": sys.s,
        "orientation": sys.surface.orientation,
    }
    if "name" in sys.meta:
        doc["name"] = sys.meta["name"]
    return doc


def parse_json(text, source="<string>"):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_json(text, str(path))


# built-in systems -------------------------------------------------------------

QL_DEFAULT = {"center": [0.5, 0.5], "radius": 0.25, "width": 0.2, "sharpness": 0.3}


def _ql_doc(s=1.0):
    return {
        "name": "ql-torus",
        "surface": {"kind": "flat-torus"},
        "f": {"type": "ql-bump", **QL_DEFAULT},
        "beta": {"type": "ql-bump", **QL_DEFAULT},
        "s": s,
    }


BUILTINS = {
    # round sphere, f = 1; beta is a primitive of sigma - K mu = 0
    "sphere-symmetric": {
        "name": "sphere-symmetric",
        "surface": {"kind": "sphere"},
        "f": {"type": "constant", "value": 1.0},
        "beta": {"type": "zero"},
        "s": 1.0,
    },
    # round sphere with a tilted density, used for elliptic test orbits
    "sphere-ambient": {
        "name": "sphere-ambient",
        "surface": {"kind": "sphere"},
        "f": {"type": "ambient", "c0": 1.0, "c": [0.0, 0.0, 0.3]},
        "beta": None,
        "s": 1.0,
    },
    # local model of a hyperbolic surface with sigma = -mu
    "genus-symmetric": {
        "name": "genus-symmetric",
        "surface": {"kind": "hyperbolic-halfplane", "params": {"dilation": 1.0}},
        "f": {"type": "constant", "value": -1.0},
        "beta": {"type": "zero"},
        "s": 0.5,
    },
    # exact field on the flat torus: f = cos(2 pi x), beta = sin(2 pi x)/(2 pi) dy
    "flat-torus-wave": {
        "name": "flat-torus-wave",
        "surface": {"kind": "flat-torus"},
        "f": {"type": "fourier", "const": 0.0, "terms": [[1, 0, 1.0, 0.0]]},
        "beta": {"type": "fourier", "x": {"const": 0.0},
                 "y": {"const": 0.0, "terms": [[1, 0, 0.0, 0.15915494309189535]]}},
        "s": 1.0,
    },
    "conformal-torus": {
        "name": "conformal-torus",
        "surface": {"kind": "conformal-torus",
                    "params": {"log_lambda": [[1, 0, 0.1, 0.0], [0, 1, 0.0, 0.05], [1, 1, 0.03, 0.02]]}},
        "f": {"type": "constant", "value": 1.0},
        "beta": None,
        "s": 1.0,
    },
    "ql-torus": _ql_doc(),
}


def builtin(name, s=None):
    if name not in BUILTINS:
        raise ConfigError(f"unknown built-in system {name!r}; choose from {sorted(BUILTINS)}")
    doc = copy.deepcopy(BUILTINS[name])
    if s is not None:
        doc["s"] = float(s)
    return system_from_dict(doc)


def load_system(arg, s=None):
    """A system from a built-in name or a JSON file path."""
    if arg in BUILTINS:
        return builtin(arg, s)
    doc = load_json(arg)
    if s is not None:
        doc["s"] = float(s)
    return system_from_dict(doc)
