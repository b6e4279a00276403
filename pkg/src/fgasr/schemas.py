"""Schemas for every JSON and CSV file the command line writes.

JSON documents are checked with ``jsonschema``; CSV files with a small
header-and-type checker, since their layouts are flat.
"""

from __future__ import annotations

import csv
import io
import math

import jsonschema

from .errors import FgaError


class SchemaError(FgaError, ValueError):
    """A document does not match its schema."""


_number = {"type": "number"}
_hash = {"type": "string", "pattern": "^[0-9a-f]{64}$"}

MANIFEST = {
    "type": "object",
    "required": ["command", "argv", "config", "inputs", "outputs", "version", "seed"],
    "properties": {
        "command": {"type": "string"},
        "argv": {"type": "array", "items": {"type": "string"}},
        "config": {"type": "object"},
        "inputs": {"type": "object", "additionalProperties": _hash},
        "outputs": {"type": "object", "additionalProperties": _hash},
        "version": {"type": "string"},
        "seed": {"type": ["integer", "null"]},
    },
    "additionalProperties": False,
}

FRC_JSON = {
    "type": "object",
    "required": ["n_rings", "values", "frc_auc", "i_hf"],
    "properties": {
        "n_rings": {"type": "integer", "minimum": 1},
        "values": {"type": "array", "items": {"type": "number", "minimum": -1.000001, "maximum": 1.000001}},
        "frc_auc": _number,
        "i_hf": {"type": "integer", "minimum": 0},
    },
    "additionalProperties": False,
}

PARAMS_INDEX = {
    "type": "object",
    "required": ["format", "version", "tensors"],
    "properties": {
        "format": {"const": "fgat-params"},
        "version": {"const": 1},
        "tensors": {"type": "object", "additionalProperties": {"type": "string"}},
        "method": {"type": "string"},
        "fga_config": {"type": "object"},
    },
}

ABLATION_JSON = {
    "type": "array",
    "items": {
        "type": "object",
        "required": ["row", "conv", "mlp", "ff", "cal", "l1", "fl1", "psnr", "ssim", "frc", "final_fl1"],
        "properties": {
            "row": {"type": "string"},
            **{k: {"type": "boolean"} for k in ("conv", "mlp", "ff", "cal", "l1", "fl1")},
            **{k: {"type": ["number", "null"]} for k in ("psnr", "ssim", "frc", "final_fl1")},
            "error": {"type": "string"},
        },
    },
}

JSON_SCHEMAS = {"manifest": MANIFEST, "frc": FRC_JSON, "params": PARAMS_INDEX, "ablation": ABLATION_JSON}

# column name -> parser; "flag" columns hold 0/1
CSV_LAYOUTS = {
    "frc": (("ring", int), ("frc", float)),
    "log": (("iter", int), ("l1", float), ("fl1", float), ("psnr", float)),
    "ablation": (
        ("row", str),
        ("conv", "flag"),
        ("mlp", "flag"),
        ("ff", "flag"),
        ("cal", "flag"),
        ("l1", "flag"),
        ("fl1", "flag"),
        ("psnr", float),
        ("ssim", float),
        ("frc", float),
        ("final_fl1", float),
    ),
}


def validate_json(doc, kind: str) -> None:
    try:
        schema = JSON_SCHEMAS[kind]
    except KeyError:
        raise SchemaError(f"unknown JSON kind {kind!r}") from None
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        raise SchemaError(f"{kind}: {exc.message}") from exc


def _parse_cell(text: str, kind):
    if kind == "flag":
        if text not in ("0", "1"):
            raise ValueError(f"expected 0 or 1, got {text!r}")
        return text == "1"
    return kind(text)


def validate_csv(text: str, kind: str) -> list[dict]:
    """Check header and cell types; returns the parsed rows.

    Lines starting with ``#`` are comments, except that an FRC file must end
    with exactly one ``# frc_auc=<value>`` line.
    """
    try:
        layout = CSV_LAYOUTS[kind]
    except KeyError:
        raise SchemaError(f"unknown CSV kind {kind!r}") from None
    lines = text.splitlines()
    comments = [ln for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if not ln.startswith("#")]
    if kind == "frc":
        if len(comments) != 1 or lines[-1:] != comments or not comments[0].startswith("# frc_auc="):
            raise SchemaError("frc: expected a single trailing '# frc_auc=' line")
        try:
            float(comments[0].split("=", 1)[1])
        except ValueError as exc:
            raise SchemaError(f"frc: bad frc_auc value ({exc})") from exc
    reader = csv.reader(io.StringIO("\n".join(body)))
    header = next(reader, None)
    names = [name for name, _ in layout]
    if header != names:
        raise SchemaError(f"{kind}: header {header} != {names}")
    rows = []
    for num, cells in enumerate(reader, start=2):
        if len(cells) != len(layout):
            raise SchemaError(f"{kind}: line {num} has {len(cells)} cells, expected {len(layout)}")
        try:
            row = {name: _parse_cell(cell, parser) for cell, (name, parser) in zip(cells, layout)}
        except ValueError as exc:
            raise SchemaError(f"{kind}: line {num}: {exc}") from exc
        if kind == "frc" and not (abs(row["frc"]) <= 1 + 1e-6 or math.isnan(row["frc"])):
            raise SchemaError(f"frc: line {num} value outside [-1, 1]")
        rows.append(row)
    if kind == "frc" and [r["ring"] for r in rows] != list(range(len(rows))):
        raise SchemaError("frc: ring indices must run 0..N-1")
    return rows
