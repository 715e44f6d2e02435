"""JSON model files: schema, parsing into model objects, and writing back."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from .core import BlockGenerator, ChoiceDecomposition, FractionMeasure
from .errors import ModelFileError
from .gim1 import BatchPhService, Gim1Model
from .mg1 import BmapDescriptor, Mg1Model
from .multichoice import MobileServerModel, MultiClassModel

_number = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_choice = {"type": "integer", "minimum": 1}
_vector = {"type": "array", "items": _number, "minItems": 1}
_matrix = {"type": "array", "items": _vector, "minItems": 1}
_part = {
    "type": "object",
    "required": ["choice", "blocks"],
    "additionalProperties": False,
    "properties": {
        "choice": _choice,
        "open_levels": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "blocks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["row", "col", "matrix"],
                "additionalProperties": False,
                "properties": {
                    "row": {"type": "integer", "minimum": 0},
                    "col": {"type": "integer", "minimum": 0},
                    "matrix": _matrix,
                },
            },
        },
    },
}

SCHEMA = {
    "type": "object",
    "required": ["model_type"],
    "properties": {
        "model_type": {"enum": ["mg1", "gim1", "mobile", "multiclass", "general"]},
        "C": _matrix,
        "D": {"type": "array", "items": _matrix, "minItems": 1},
        "mu": _pos,
        "lambda": _pos,
        "d": _choice,
        "f": _choice,
        "alpha": _vector,
        "T": _matrix,
        "b": _vector,
        "classes": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["lambda", "d"],
                "additionalProperties": False,
                "properties": {"lambda": _pos, "d": _choice},
            },
        },
        "level_dims": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2},
        "left_parts": {"type": "array", "items": _part},
        "right_parts": {"type": "array", "items": _part},
        "initial": {"oneOf": [{"enum": ["empty", "fixed_point"]}, {"type": "array"}]},
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "K": {"type": "integer", "minimum": 2},
                "eps": _pos,
                "t_end": {"type": "number", "minimum": 0},
                "step": _pos,
                "tol": _pos,
                "samples": {"type": "integer", "minimum": 1},
                "sample_times": {"type": "array", "items": {"type": "number", "minimum": 0}},
            },
        },
        "sim": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "horizon": _pos,
                "warmup": {"type": "number", "minimum": 0},
                "replications": {"type": "integer", "minimum": 1},
                "sample_times": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "levels": {"type": "integer", "minimum": 1},
                "initial": {"oneOf": [{"enum": ["empty", "fixed_point"]},
                                      {"type": "array", "items": _number}]},
                "replace": {"type": "boolean"},
                "mobile_rule": {"enum": ["longest", "shortest"]},
            },
        },
    },
    "allOf": [
        {"if": {"properties": {"model_type": {"const": "mg1"}}},
         "then": {"required": ["C", "D", "mu", "d"]}},
        {"if": {"properties": {"model_type": {"const": "gim1"}}},
         "then": {"required": ["lambda", "alpha", "T", "d"]}},
        {"if": {"properties": {"model_type": {"const": "mobile"}}},
         "then": {"required": ["lambda", "mu", "d", "f"]}},
        {"if": {"properties": {"model_type": {"const": "multiclass"}}},
         "then": {"required": ["classes", "mu"]}},
        {"if": {"properties": {"model_type": {"const": "general"}}},
         "then": {"required": ["level_dims", "left_parts", "right_parts"]}},
    ],
}


@dataclass(frozen=True, eq=False)
class ModelFile:
    """A parsed model file: the model object plus solver and simulation controls."""

    model_type: str
    model: object
    solver: dict = field(default_factory=dict)
    sim: dict = field(default_factory=dict)
    initial: object = "empty"
    raw: dict = field(default_factory=dict)


def _build_part(part, dims):
    blocks = {(b["row"], b["col"]): b["matrix"] for b in part["blocks"]}
    return part["choice"], BlockGenerator(dims, blocks, frozenset(part.get("open_levels", ())))


def _build(data):
    kind = data["model_type"]
    if kind == "mg1":
        return Mg1Model(BmapDescriptor(data["C"], tuple(data["D"])), data["mu"], data["d"])
    if kind == "gim1":
        svc = BatchPhService(data["alpha"], data["T"], data.get("b", [1.0]))
        return Gim1Model(data["lambda"], svc, data["d"])
    if kind == "mobile":
        return MobileServerModel(data["lambda"], data["mu"], data["d"], data["f"])
    if kind == "multiclass":
        return MultiClassModel(tuple((c["lambda"], c["d"]) for c in data["classes"]), data["mu"])
    dims = tuple(data["level_dims"])
    left = tuple(_build_part(p, dims) for p in data["left_parts"])
    right = tuple(_build_part(p, dims) for p in data["right_parts"])
    parts = [p for _, p in left + right]
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return ChoiceDecomposition(total, left, right)


def _check_finite(obj, path="$"):
    if isinstance(obj, float) and not np.isfinite(obj):
        raise ModelFileError(f"non-finite number at {path}")
    if isinstance(obj, dict):
        for k, v in obj.items():
            _check_finite(v, f"{path}.{k}")
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            _check_finite(v, f"{path}[{i}]")


def parse_model(data):
    """Validate a decoded JSON object and build the model it describes."""
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ModelFileError(f"schema error at {where}: {exc.message}") from None
    _check_finite(data)
    try:
        model = _build(data)
    except (ValueError, TypeError) as exc:
        raise ModelFileError(f"invalid {data['model_type']} model: {exc}") from None
    return ModelFile(data["model_type"], model, dict(data.get("solver", {})), dict(data.get("sim", {})),
                     data.get("initial", "empty"), data)


def loads(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"not valid JSON: {exc}") from None
    return parse_model(data)


def load(path):
    with open(path) as fh:
        return loads(fh.read())


def _blocks(part):
    return [{"row": i, "col": j, "matrix": np.asarray(m).tolist()} for (i, j), m in sorted(part.blocks.items())]


def model_to_dict(model):
    """Inverse of the parser for the model fields."""
    if isinstance(model, Mg1Model):
        return {"model_type": "mg1", "C": model.bmap.C.tolist(), "D": [Dk.tolist() for Dk in model.bmap.D],
                "mu": model.mu, "d": model.d}
    if isinstance(model, Gim1Model):
        s = model.service
        return {"model_type": "gim1", "lambda": model.lam, "alpha": s.alpha.tolist(), "T": s.T.tolist(),
                "b": s.b.tolist(), "d": model.d}
    if isinstance(model, MobileServerModel):
        return {"model_type": "mobile", "lambda": model.lam, "mu": model.mu, "d": model.d, "f": model.f}
    if isinstance(model, MultiClassModel):
        return {"model_type": "multiclass", "mu": model.mu,
                "classes": [{"lambda": lam, "d": d} for lam, d in model.classes]}
    if isinstance(model, ChoiceDecomposition):
        def parts(seq):
            return [{"choice": c, "open_levels": sorted(p.open_levels), "blocks": _blocks(p)} for c, p in seq]
        return {"model_type": "general", "level_dims": list(model.level_dims),
                "left_parts": parts(model.left_parts), "right_parts": parts(model.right_parts)}
    raise TypeError(f"unsupported model type {type(model).__name__}")


def to_dict(mf):
    data = model_to_dict(mf.model)
    if mf.solver:
        data["solver"] = dict(mf.solver)
    if mf.sim:
        data["sim"] = dict(mf.sim)
    if not (isinstance(mf.initial, str) and mf.initial == "empty"):
        data["initial"] = mf.initial
    return data


def dumps(mf):
    """JSON text that parses back to the same model (floats keep their exact repr)."""
    return json.dumps(to_dict(mf), indent=2) + "\n"


def dump(mf, path):
    with open(path, "w") as fh:
        fh.write(dumps(mf))


def initial_measure(mf, dims):
    """Initial fraction measure for the ODE from the file's ``initial`` field."""
    init = mf.initial
    if isinstance(init, str):
        if init == "empty":
            model = mf.model
            level0 = None
            if isinstance(model, Mg1Model):
                level0 = model.gamma
            return FractionMeasure.empty(dims, level0)
        raise ModelFileError("initial 'fixed_point' is only meaningful for simulation")
    levels = [np.atleast_1d(np.asarray(v, dtype=float)) for v in init]
    S = FractionMeasure(tuple(levels))
    if S.dims != dims[:len(S.dims)]:
        raise ModelFileError(f"initial levels have dims {S.dims}, model needs {dims}")
    return S.padded(dims)


__all__ = ["SCHEMA", "ModelFile", "parse_model", "load", "loads", "dump", "dumps", "to_dict",
           "model_to_dict", "initial_measure"]
