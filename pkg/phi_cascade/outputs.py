"""
Result files. Every file starts with the run config, its hash and the phi-cache
fingerprint so a table can be traced back to the settings that produced it.

CSV: `# key: value` comment lines, then a polars-written table whose cells are
preformatted (floats as .17g, dyadics as exact literals, log-domain values as
`ln=<value>` when the value itself is not representable as a double).
JSONL: a {"header": ...} line, then one object per row.
"""

import json
import logging
import math
from fractions import Fraction
from pathlib import Path
from typing import Any, Literal

import polars as pl
from mpmath import mp

from phi_cascade.files import ensure_parent_dir_exists
from phi_cascade.numerics import LN_DIGITS, DyadicRational, IntervalD, LogPositive

logger = logging.getLogger(__name__)

OutputFormat = Literal["csv", "jsonl"]


def format_float(value: float) -> str:
    return format(float(value), ".17g")


def format_ln(ln) -> str:
    """A positive quantity given by its natural log."""
    value = float(mp.exp(ln))
    if value == 0 or math.isinf(value):
        return f"ln={mp.nstr(ln, 17)}"
    return format_float(value)


def csv_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (DyadicRational, IntervalD)):
        return str(value)
    if isinstance(value, Fraction):
        return f"{value.numerator}/{value.denominator}" if value.denominator != 1 else str(value)
    if isinstance(value, LogPositive):
        return "0" if value.is_zero else format_ln(value.ln_value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format_float(value)
    if isinstance(value, mp.mpf):
        return format_float(float(value))
    return str(value)


def json_value(value: Any) -> Any:
    if isinstance(value, (DyadicRational, IntervalD, LogPositive)):
        return value.to_json()
    if isinstance(value, Fraction):
        return f"{value.numerator}/{value.denominator}"
    if isinstance(value, mp.mpf):
        return mp.nstr(value, LN_DIGITS)
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [json_value(v) for v in value]
    if isinstance(value, dict):
        return {str(k): json_value(v) for k, v in value.items()}
    return value


def write_table(
    rows: list[dict[str, Any]],
    path: str | Path,
    header: dict[str, Any],
    fmt: OutputFormat = "csv",
) -> Path:
    path = ensure_parent_dir_exists(path)
    if fmt == "csv":
        lines = [f"# {key}: {json.dumps(json_value(value), sort_keys=True)}" for key, value in header.items()]
        columns = list(rows[0].keys()) if rows else []
        frame = pl.DataFrame(
            {col: [csv_cell(row[col]) for row in rows] for col in columns},
            schema={col: pl.Utf8 for col in columns},
        )
        body = frame.write_csv() if columns else ""
        path.write_text("\n".join(lines) + "\n" + body)
    elif fmt == "jsonl":
        with open(path, "w") as f:
            f.write(json.dumps({"header": json_value(header)}, sort_keys=True) + "\n")
            for row in rows:
                f.write(json.dumps(json_value(row)) + "\n")
    else:
        raise ValueError(f"Unknown output format {fmt!r}")
    logger.info(f"Wrote {len(rows)} rows to {path}")
    return path


def write_json(payload: dict[str, Any], path: str | Path) -> Path:
    path = ensure_parent_dir_exists(path)
    path.write_text(json.dumps(json_value(payload), indent=2, sort_keys=True) + "\n")
    logger.info(f"Wrote {path}")
    return path


def read_csv_rows(path: str | Path) -> tuple[dict[str, Any], pl.DataFrame]:
    """Inverse of write_table for CSV: (header, table of string cells)."""
    header = {}
    with open(path) as f:
        for line in f:
            if not line.startswith("# "):
                break
            key, _, value = line[2:].partition(": ")
            header[key] = json.loads(value)
    frame = pl.read_csv(path, comment_prefix="#", infer_schema_length=0)
    return header, frame
