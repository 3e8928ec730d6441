"""
JSON Schemas for annotation, prediction and mask-set documents.

The structural checks live here; referential checks (dangling ids,
mask dimensions) are done by the dataset parser.
"""

from typing import Any, Dict

from jsonschema import Draft7Validator
from jsonschema.exceptions import best_match

from vinecc.errors import FormatError

_RLE = {
    "type": "object",
    "properties": {
        "size": {
            "type": "array",
            "items": {"type": "integer", "minimum": 0},
            "minItems": 2,
            "maxItems": 2,
        },
        "counts": {
            "oneOf": [
                {"type": "string"},
                {"type": "array", "items": {"type": "integer", "minimum": 0}},
            ]
        },
    },
    "required": ["size", "counts"],
}

_POLYGONS = {
    "type": "array",
    "minItems": 1,
    "items": {"type": "array", "items": {"type": "number"}, "minItems": 6},
}

_ANNOTATION_BODY = {
    "segmentation": {"oneOf": [_POLYGONS, _RLE]},
    "point": {
        "type": "array",
        "items": {"type": "number"},
        "minItems": 2,
        "maxItems": 2,
    },
    "score": {"type": "number", "minimum": 0, "maximum": 1},
    "cluster_id": {"type": ["integer", "null"]},
    "bbox": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
}

# Exactly one of segmentation / point: both present matches both branches.
_ONE_GEOMETRY = [{"required": ["segmentation"]}, {"required": ["point"]}]

DATASET_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "properties": {
        "images": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "id": {"type": "integer"},
                    "width": {"type": "integer", "minimum": 1},
                    "height": {"type": "integer", "minimum": 1},
                    "file_name": {"type": "string"},
                },
                "required": ["id", "width", "height", "file_name"],
            },
        },
        "categories": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "id": {"type": "integer"},
                    "name": {"type": "string"},
                },
                "required": ["id", "name"],
            },
        },
        "annotations": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "id": {"type": "integer"},
                    "image_id": {"type": "integer"},
                    "category_id": {"type": "integer"},
                    **_ANNOTATION_BODY,
                },
                "required": ["id", "image_id", "category_id"],
                "oneOf": _ONE_GEOMETRY,
            },
        },
    },
    "required": ["images", "categories", "annotations"],
}

RESULTS_SCHEMA: Dict[str, Any] = {
    "type": "array",
    "items": {
        "type": "object",
        "properties": {
            "id": {"type": "integer"},
            "image_id": {"type": "integer"},
            "category_id": {"type": "integer"},
            **_ANNOTATION_BODY,
        },
        "required": ["image_id", "category_id"],
        "oneOf": _ONE_GEOMETRY,
    },
}

MANIFEST_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "properties": {
        "images": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "image_id": {"type": "integer"},
                    "capture_time_weeks": {"type": "number"},
                    "clusters": {"type": "string"},
                    "berries": {"type": "string"},
                },
                "required": ["image_id", "capture_time_weeks", "clusters", "berries"],
            },
        },
    },
    "required": ["images"],
}

MASKSET_SCHEMA: Dict[str, Any] = {"type": "array", "items": _RLE}

CLUSTER_SET_SCHEMA: Dict[str, Any] = {
    "type": "array",
    "items": {
        **_RLE,
        "properties": {**_RLE["properties"], "id": {"type": "integer"}},
    },
}

_DATASET_VALIDATOR = Draft7Validator(DATASET_SCHEMA)
_RESULTS_VALIDATOR = Draft7Validator(RESULTS_SCHEMA)
_MANIFEST_VALIDATOR = Draft7Validator(MANIFEST_SCHEMA)
_MASKSET_VALIDATOR = Draft7Validator(MASKSET_SCHEMA)
_CLUSTER_SET_VALIDATOR = Draft7Validator(CLUSTER_SET_SCHEMA)


def _check(validator: Draft7Validator, document: Any, kind: str) -> None:
    error = best_match(validator.iter_errors(document))
    if error is None:
        return
    location = "/".join(str(p) for p in error.absolute_path) or "<root>"
    raise FormatError(f"Invalid {kind} at {location}: {error.message}")


def check_dataset_document(document: Any) -> None:
    """
    Validate the structure of an annotation document.

    Args:
        document: Decoded JSON value

    Raises:
        FormatError: With the JSON path of the most relevant violation
    """
    _check(_DATASET_VALIDATOR, document, "annotation document")


def check_results_document(document: Any) -> None:
    """
    Validate the structure of a flat prediction results list.

    Args:
        document: Decoded JSON value

    Raises:
        FormatError: With the JSON path of the most relevant violation
    """
    _check(_RESULTS_VALIDATOR, document, "results list")


def check_manifest_document(document: Any) -> None:
    """Validate a batch closure manifest."""
    _check(_MANIFEST_VALIDATOR, document, "manifest")


def check_maskset_document(document: Any) -> None:
    """
    Validate a JSON array of COCO RLE objects.

    Run lengths must be non-negative integers; 3.0 passes, 3.5 does not.

    Raises:
        FormatError: With the JSON path of the most relevant violation
    """
    _check(_MASKSET_VALIDATOR, document, "mask set")


def check_cluster_set_document(document: Any) -> None:
    """Validate an array of cluster RLE objects, each with an optional integer id."""
    _check(_CLUSTER_SET_VALIDATOR, document, "cluster mask set")
