"""JSON job files for the command line: schema validation and object construction."""

from __future__ import annotations

import json
from typing import List

import jsonschema

from .discretization import BiotParams
from .lfa import TwoGridConfig, biot_config, poisson_config


class ConfigError(ValueError):
    """A job file is unreadable or violates the schema; ``errors`` lists field messages."""

    def __init__(self, msg: str, errors: List[str] = ()):
        super().__init__(msg + "".join(f"\n  {e}" for e in errors))
        self.errors = list(errors)


_WEIGHTS = {
    "oneOf": [
        {"const": "natural"},
        {"type": "number", "minimum": 0},
        {"type": "object", "additionalProperties": {"type": "number", "minimum": 0},
         "minProperties": 1},
    ]
}

_BIOT = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "young_modulus": {"type": "number", "exclusiveMinimum": 0},
        "poisson_ratio": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
        "permeability": {"type": "number", "exclusiveMinimum": 0},
        "fluid_viscosity": {"type": "number", "exclusiveMinimum": 0},
        "biot_modulus_inverse": {"type": "number", "minimum": 0},
        "biot_willis": {"type": "number", "exclusiveMinimum": 0},
        "time_step": {"type": "number", "exclusiveMinimum": 0},
    },
}

_PROBLEM = {
    "problem": {"enum": ["poisson1d", "poisson2d", "biot"]},
    "p": {"type": "integer", "minimum": 1, "maximum": 8},
    "blocks": {
        "oneOf": [
            {"const": "element"},
            {"type": "object", "required": ["k", "overlap"], "additionalProperties": False,
             "properties": {"k": {"type": "integer", "minimum": 2},
                            "overlap": {"type": "integer", "minimum": 1}}},
        ]
    },
    "k": {"type": "integer", "minimum": 2},
    "ov": {"type": "integer", "minimum": 1},
    "smoother": {"enum": ["as", "ras"]},
    "weights": _WEIGHTS,
    "nu": {"type": "integer", "minimum": 1},
    "nu1": {"type": "integer", "minimum": 0},
    "nu2": {"type": "integer", "minimum": 0},
    "samples": {"type": "integer", "minimum": 8},
    "window": {"type": "integer", "minimum": 2},
    "h": {"type": "number", "exclusiveMinimum": 0},
    "biot": _BIOT,
}

RUN_SCHEMA = {
    "type": "object",
    "required": ["problem"],
    "additionalProperties": False,
    "properties": {
        **_PROBLEM,
        "mode": {"enum": ["lfa", "solver", "oracle"]},
        "cycle": {"enum": ["V", "W"]},
        "grid": {"type": "integer", "minimum": 4},
        "tol": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "maxiter": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "L": {"type": "integer", "minimum": 2, "maximum": 4},
        "output": {"type": "string"},
    },
}

OPTIMIZE_SCHEMA = {
    "type": "object",
    "required": ["problem", "parameters"],
    "additionalProperties": False,
    "properties": {
        **_PROBLEM,
        "parameters": {
            "type": "array", "minItems": 1, "maxItems": 3,
            "items": {"type": "array", "minItems": 1, "items": {"type": "string"}},
        },
        "bounds": {
            "type": "array",
            "items": {"type": "array", "minItems": 2, "maxItems": 2,
                      "items": {"type": "number", "minimum": 0}},
        },
        "start": {"type": "array", "items": {"type": "number"}},
        "permeabilities": {"type": "array", "minItems": 1,
                           "items": {"type": "number", "exclusiveMinimum": 0}},
        "output": {"type": "string"},
    },
}


def validate(doc, schema: dict) -> dict:
    """Check a job document; flat ``k``/``ov`` and ``nu`` are normalized in place."""
    v = jsonschema.Draft202012Validator(schema)
    errors = sorted(v.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = []
        for e in errors:
            where = "/".join(str(p) for p in e.absolute_path) or "(top level)"
            msgs.append(f"{where}: {e.message}")
        raise ConfigError("invalid job file", msgs)
    _semantic_checks(doc)
    return doc


def _semantic_checks(doc: dict) -> None:
    errs = []
    if ("k" in doc) != ("ov" in doc):
        errs.append("k/ov: interval blocks need both k and ov")
    if "k" in doc and "blocks" in doc:
        errs.append("blocks: give either blocks or k/ov, not both")
    if "nu" in doc and ("nu1" in doc or "nu2" in doc):
        errs.append("nu: give either nu or nu1/nu2, not both")
    if "k" in doc and "ov" in doc:
        doc["blocks"] = {"k": doc.pop("k"), "overlap": doc.pop("ov")}
    if "nu" in doc:
        doc["nu1"], doc["nu2"] = doc.pop("nu"), 0
    blocks = doc.get("blocks", "element")
    if isinstance(blocks, dict):
        if doc["problem"] != "poisson1d":
            errs.append("blocks: interval blocks (k, overlap) only exist for poisson1d")
        elif blocks["overlap"] >= blocks["k"]:
            errs.append("ov: overlap must be smaller than k")
    if doc["problem"] == "biot" and "p" in doc and doc["p"] != 2:
        errs.append("p: the Biot discretization is fixed to Q2-Q1")
    if "biot" in doc and doc["problem"] != "biot":
        errs.append("biot: parameters given for a non-Biot problem")
    bounds, params = doc.get("bounds"), doc.get("parameters")
    if bounds is not None and params is not None and len(bounds) != len(params):
        errs.append(f"bounds: expected {len(params)} pairs, got {len(bounds)}")
    for i, b in enumerate(bounds or []):
        if b[0] >= b[1]:
            errs.append(f"bounds/{i}: lower bound must be below upper bound")
    if doc.get("start") is not None and params is not None and len(doc["start"]) != len(params):
        errs.append(f"start: expected {len(params)} values")
    if errs:
        raise ConfigError("invalid job file", errs)


def run_mode(doc: dict) -> str:
    return doc.get("mode", "solver" if "cycle" in doc else "lfa")


def default_grid(doc: dict) -> int:
    """Finest-grid elements per direction for solver runs."""
    return doc.get("grid", {"poisson1d": 512, "poisson2d": 128, "biot": 64}[doc["problem"]])


def load(path, schema: dict) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON (line {exc.lineno}: {exc.msg})") from exc
    return validate(doc, schema)


def biot_params(doc: dict, permeability=None) -> BiotParams:
    kw = dict(doc.get("biot", {}))
    if permeability is not None:
        kw["permeability"] = permeability
    return BiotParams(**kw)


def two_grid_config(doc: dict, permeability=None) -> TwoGridConfig:
    """Build the analysis configuration described by a validated job file."""
    common = dict(variant=doc.get("smoother", "as"), weights=doc.get("weights", "natural"),
                  nu1=doc.get("nu1", 1), nu2=doc.get("nu2", 0), samples=doc.get("samples"))
    if doc["problem"] == "biot":
        kw = {"n": doc["window"]} if "window" in doc else {}
        return biot_config(biot_params(doc, permeability), doc.get("h", 1 / 64), **common, **kw)
    blocks = doc.get("blocks", "element")
    if isinstance(blocks, dict):
        blocks = (blocks["k"], blocks["overlap"])
    dim = 1 if doc["problem"] == "poisson1d" else 2
    return poisson_config(doc.get("p", 1), dim, blocks=blocks, n=doc.get("window"),
                          h=doc.get("h", 1.0), **common)
