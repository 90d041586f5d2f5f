"""Pipeline configuration: JSON file + command-line overrides, validated up front."""
from __future__ import annotations

import copy
from typing import Any

import jsonschema

_num = {"type": "number"}
_int = {"type": "integer"}
_path = {"type": "string", "minLength": 1}

SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "toothkit pipeline config",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "threads": {"type": "integer", "minimum": 0},
        "paths": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                k: _path
                for k in (
                    "dataset", "images", "empties", "empties_manifest", "specs", "bank",
                    "out", "gt", "pred", "report", "confusion_csv", "geometry", "changes",
                )
            },
        },
        "preprocess": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "size": {"type": "integer", "minimum": 1},
                "margin": {"type": "number", "minimum": 0},
                "pad_value": {"type": "integer", "minimum": 0, "maximum": 255},
                "equalize": {"type": "boolean"},
                "rois": {
                    "type": "object",
                    "additionalProperties": {"type": "array", "items": _num, "minItems": 4, "maxItems": 4},
                },
            },
        },
        "split": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "ratios": {
                    "type": "object",
                    "minProperties": 1,
                    "additionalProperties": {"type": "number", "exclusiveMinimum": 0},
                }
            },
        },
        "augment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rotation_range_deg": {"type": "number", "minimum": 0},
                "translation_range_frac": {"type": "number", "minimum": 0, "maximum": 0.5},
                "noise_sigma": {"type": "number", "minimum": 0},
                "contrast_range": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 2, "maxItems": 2},
                "enable_translation": {"type": "boolean"},
                "strategy": {"enum": ["uniform", "deciduous_priority"]},
                "copies_uniform": {"type": "integer", "minimum": 0},
                "copies_deciduous": {"type": "integer", "minimum": 0},
                "copies_other": {"type": "integer", "minimum": 0},
            },
        },
        "synthesis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "age_tolerance": {"type": "integer", "minimum": 0},
                "overlap_reject_iou": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
            },
        },
        "evaluate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "iou_threshold": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "iou_mode": {"enum": ["bbox", "mask"]},
                "score_floor": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "geometry": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "x_mid": {"type": "number", "exclusiveMinimum": 0},
                "y_mid": {"type": "number", "exclusiveMinimum": 0},
                "dead_zone": {"type": "number", "minimum": 0},
                "overrides": {
                    "type": "object",
                    "additionalProperties": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                },
            },
        },
        "loss": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {"type": "number", "minimum": 0} for k in ("w_class", "w_l1", "w_giou", "w_dice")},
        },
    },
}

DEFAULTS: dict[str, Any] = {
    "threads": 1,
    "paths": {},
    "preprocess": {"size": 1024, "margin": 0.1, "pad_value": 0, "equalize": True, "rois": {}},
    "split": {"ratios": {"train": 72, "val": 48, "test": 36}},
    "augment": {
        "rotation_range_deg": 10.0,
        "translation_range_frac": 0.05,
        "noise_sigma": 5.0,
        "contrast_range": [0.8, 1.25],
        "enable_translation": False,
        "strategy": "uniform",
        "copies_uniform": 5,
        "copies_deciduous": 5,
        "copies_other": 2,
    },
    "synthesis": {"age_tolerance": 0, "overlap_reject_iou": None},
    "evaluate": {"iou_threshold": 0.5, "iou_mode": "bbox", "score_floor": 0.0},
    "geometry": {"x_mid": 512.0, "y_mid": 512.0, "dead_zone": 0.0, "overrides": {}},
    "loss": {"w_class": 1.0, "w_l1": 5.0, "w_giou": 2.0, "w_dice": 1.0},
}


def merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key not in ("ratios", "rois", "overrides"):
            out[key] = merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def schema_errors(cfg: dict) -> list[str]:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    problems = []
    for err in sorted(validator.iter_errors(cfg), key=lambda e: list(map(str, e.absolute_path))):
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        problems.append(f"{where}: {err.message}")
    return problems


def set_path(cfg: dict, dotted: str, value: Any) -> None:
    node = cfg
    *parents, leaf = dotted.split(".")
    for p in parents:
        node = node.setdefault(p, {})
    node[leaf] = value


def get_path(cfg: dict, dotted: str, default: Any = None) -> Any:
    node: Any = cfg
    for p in dotted.split("."):
        if not isinstance(node, dict) or p not in node:
            return default
        node = node[p]
    return node
