"""Tabular output: CSV with ``#`` metadata lines, or a single JSON object."""

import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IoError, UsageError

FORMATS = ("csv", "json")


@dataclass
class Records:
    """Rows with a fixed column set plus run metadata (insertion-ordered)."""

    columns: tuple
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, *values):
        if len(values) != len(self.columns):
            raise UsageError(f"row has {len(values)} values, expected {len(self.columns)}")
        self.rows.append(tuple(values))


def _plain(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(v)
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def format_value(v):
    """Text form used in CSV cells and metadata lines; floats round-trip exactly."""
    v = _plain(v)
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, list):
        return ",".join(format_value(x) for x in v)
    return str(v)


def render_csv(records: Records):
    buf = io.StringIO()
    for k, v in records.meta.items():
        buf.write(f"# {k}={format_value(v)}\n")
    buf.write(",".join(records.columns) + "\n")
    for row in records.rows:
        buf.write(",".join(format_value(v) for v in row) + "\n")
    return buf.getvalue()


def _json_safe(v):
    v = _plain(v)
    if isinstance(v, float) and not math.isfinite(v):
        return format_value(v)
    if isinstance(v, list):
        return [_json_safe(x) for x in v]
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    return v


def render_json(records: Records):
    obj = {
        "meta": {k: _json_safe(v) for k, v in records.meta.items()},
        "rows": [{c: _json_safe(v) for c, v in zip(records.columns, row)} for row in records.rows],
    }
    return json.dumps(obj, indent=2) + "\n"


def emit_records(records: Records, fmt="csv", path=None):
    """Write ``records`` to ``path`` (stdout when ``None`` or ``"-"``).

    Identical records give identical bytes: no timestamps, floats via ``repr``.
    """
    if fmt not in FORMATS:
        raise UsageError(f"format must be one of {FORMATS}")
    text = render_csv(records) if fmt == "csv" else render_json(records)
    if path is None or str(path) == "-":
        sys.stdout.write(text)
        return text
    try:
        Path(path).write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return text


def read_csv_metadata(path):
    """``{key: text}`` from the ``# key=value`` lines heading a CSV file."""
    meta = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    for line in lines:
        if not line.startswith("# "):
            break
        key, _, value = line[2:].partition("=")
        meta[key] = value
    return meta


__all__ = ["FORMATS", "Records", "emit_records", "format_value", "read_csv_metadata", "render_csv", "render_json"]
