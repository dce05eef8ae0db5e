"""Strict structured-output parsing for model responses.

Agent responses use a YAML-shaped key/value format; generation responses use
JSON. Both are validated against a declared schema: every required key must
be present and well-typed, and no defaults are ever fabricated. Leniency is
limited to stripping surrounding prose, code fences, and whitespace. Callers
treat any ParseError as a rejected action.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any

import yaml

from .errors import ParseError

_FENCE_RE = re.compile(r"^\s*```[a-zA-Z0-9_-]*\s*$")
_KEY_LINE_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_ ]*):(\s|$)")


@dataclass(frozen=True)
class Field:
    """One schema entry. ``kind`` is str | int | bool | list | maplist."""

    name: str
    kind: str = "str"
    required: bool = True
    nonempty: bool = False
    enum: tuple[Any, ...] | None = None
    item_fields: tuple["Field", ...] | None = None


@dataclass(frozen=True)
class Schema:
    dialect: str                # "yaml" or "json"
    fields: tuple[Field, ...]

    def field_names(self) -> set[str]:
        return {f.name for f in self.fields}


def normalize_key(key: str) -> str:
    return re.sub(r"\s+", "_", key.strip().lower())


def _strip_fences(text: str) -> str:
    lines = [ln for ln in text.splitlines() if not _FENCE_RE.match(ln)]
    return "\n".join(lines)


def _yaml_payload(text: str) -> dict[str, Any]:
    """Parse the YAML-shaped region of a response into a raw key map."""
    stripped = _strip_fences(text).strip()
    candidates = [stripped]
    # Drop leading prose: retry from the first line that looks like a key.
    lines = stripped.splitlines()
    for idx, line in enumerate(lines):
        if _KEY_LINE_RE.match(line):
            if idx > 0:
                candidates.append("\n".join(lines[idx:]))
            break
    last_error: Exception | None = None
    for candidate in candidates:
        try:
            doc = yaml.safe_load(candidate)
        except yaml.YAMLError as exc:
            last_error = exc
            continue
        if isinstance(doc, dict):
            return {normalize_key(str(k)): v for k, v in doc.items()}
    if last_error is not None:
        raise ParseError(f"response is not parseable as YAML: {last_error}")
    raise ParseError("response did not contain a YAML mapping")


def _json_payload(text: str) -> dict[str, Any]:
    """Extract and parse the first balanced JSON object in a response."""
    stripped = _strip_fences(text)
    start = stripped.find("{")
    if start < 0:
        raise ParseError("response did not contain a JSON object")
    depth = 0
    in_string = False
    escaped = False
    for pos in range(start, len(stripped)):
        ch = stripped[pos]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                try:
                    doc = json.loads(stripped[start:pos + 1])
                except json.JSONDecodeError as exc:
                    raise ParseError(f"malformed JSON object: {exc}") from exc
                if not isinstance(doc, dict):
                    raise ParseError("top-level JSON value is not an object")
                return {normalize_key(str(k)): v for k, v in doc.items()}
    raise ParseError("unbalanced JSON object in response")


def _coerce_bool(value: Any, name: str) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        flat = value.strip().strip("\"'").lower()
        if flat == "true":
            return True
        if flat == "false":
            return False
    raise ParseError(f"field {name!r} must be True or False, got {value!r}", reason="bad_enum")


def _coerce(field: Field, value: Any) -> Any:
    name = field.name
    if value is None:
        raise ParseError(f"field {name!r} has no value", reason="missing_key")
    if field.kind == "bool":
        return _coerce_bool(value, name)
    if field.kind == "int":
        if isinstance(value, bool):
            raise ParseError(f"field {name!r} must be an integer", reason="malformed")
        if isinstance(value, int):
            out = value
        elif isinstance(value, str) and re.fullmatch(r"-?\d+", value.strip()):
            out = int(value.strip())
        else:
            raise ParseError(f"field {name!r} must be an integer, got {value!r}")
        return out
    if field.kind == "str":
        if isinstance(value, (dict, list)):
            raise ParseError(f"field {name!r} must be a scalar, got {type(value).__name__}")
        out = str(value).strip()
        if field.nonempty and not out:
            raise ParseError(f"field {name!r} is empty")
        if field.enum is not None and out not in field.enum:
            raise ParseError(f"field {name!r} must be one of {field.enum}, got {out!r}", reason="bad_enum")
        return out
    if field.kind == "list":
        if not isinstance(value, list):
            raise ParseError(f"field {name!r} must be a list, got {type(value).__name__}")
        items = []
        for item in value:
            if isinstance(item, (dict, list)):
                raise ParseError(f"field {name!r} must be a list of scalars")
            items.append(str(item).strip())
        if field.nonempty and not items:
            raise ParseError(f"field {name!r} is empty")
        return items
    if field.kind == "maplist":
        if not isinstance(value, list):
            raise ParseError(f"field {name!r} must be a list, got {type(value).__name__}")
        out_items = []
        for i, item in enumerate(value):
            if not isinstance(item, dict):
                raise ParseError(f"field {name!r}[{i}] must be a mapping")
            normalized = {normalize_key(str(k)): v for k, v in item.items()}
            out_items.append(_validate_fields(normalized, field.item_fields or (), f"{name}[{i}]."))
        if field.nonempty and not out_items:
            raise ParseError(f"field {name!r} is empty")
        return out_items
    raise ValueError(f"unknown schema kind {field.kind!r}")


def _validate_fields(raw: dict[str, Any], fields: tuple[Field, ...], prefix: str = "") -> dict[str, Any]:
    payload: dict[str, Any] = {}
    for field in fields:
        if field.name not in raw:
            if field.required:
                raise ParseError(f"missing required key {prefix}{field.name!r}", reason="missing_key")
            continue
        try:
            payload[field.name] = _coerce(field, raw[field.name])
        except ParseError as exc:
            raise ParseError(f"{prefix}{exc}", reason=exc.reason) from None
    return payload


def parse_structured(text: str, schema: Schema) -> dict[str, Any]:
    """Parse ``text`` against ``schema``; raises ParseError on any deviation."""
    if schema.dialect == "yaml":
        raw = _yaml_payload(text)
    elif schema.dialect == "json":
        raw = _json_payload(text)
    else:
        raise ValueError(f"unknown dialect {schema.dialect!r}")
    return _validate_fields(raw, schema.fields)
