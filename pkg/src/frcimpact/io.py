"""Versioned CSV/JSON artifacts and panel ingestion.

Panel files start with a schema line, then a header of ISO dates and tenor
labels::

    # schema=frcimpact-panel/1 kind=levels
    date,t03,t06,...
    2021-01-04,0.0012,0.0015,...

``kind`` is ``levels`` or ``increments`` for rate files and ``flows`` for
flow files.  Floats are written with 17 significant digits so that
write-then-read is bit-exact.  Writes go to a temporary file that is renamed
into place.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import FrcIOError, ValidationError
from .field import TenorGrid
from .panel import MarketPanel

PANEL_SCHEMA = "frcimpact-panel/1"
MATRIX_SCHEMA = "frcimpact-matrix/1"
LONG_SCHEMA = "frcimpact-long/1"
JSON_SCHEMA = "frcimpact-json/1"
PANEL_KINDS = ("levels", "increments", "flows")


class ParseError(ValidationError):
    """Malformed input file; the message names the file and line."""


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    tmp = None
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        if tmp is not None and os.path.exists(tmp):
            os.unlink(tmp)
        raise FrcIOError(f"cannot write {path}: {exc}") from exc
    return path


def sha256(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _schema_line(schema: str, **attrs) -> str:
    extra = "".join(f" {k}={v}" for k, v in attrs.items())
    return f"# schema={schema}{extra}\n"


def _parse_schema_line(line: str, expected: str, path) -> dict:
    if not line.startswith("# schema="):
        raise ParseError(f"{path}:1: missing '# schema=' line")
    fields = dict(tok.split("=", 1) for tok in line[1:].split() if "=" in tok)
    if fields.get("schema") != expected:
        raise ParseError(f"{path}:1: unsupported schema {fields.get('schema')!r}; this reader handles {expected}")
    return fields


# --- panels ----------------------------------------------------------------


def format_table(dates: np.ndarray, values: np.ndarray, labels: Sequence[str], schema_line: str) -> str:
    buf = _io.StringIO()
    buf.write(schema_line)
    buf.write(",".join(["date", *labels]) + "\n")
    for d, row in zip(np.asarray(dates, "datetime64[D]").astype(str), values):
        buf.write(",".join([d, *(fmt(v) for v in row)]) + "\n")
    return buf.getvalue()


def write_panel_files(panel: MarketPanel, rates_path, flows_path) -> tuple[Path, Path]:
    """Write a panel as an ``increments`` rates file and a ``flows`` file."""
    labels = TenorGrid(panel.n_tenors).labels()
    a = atomic_write_text(rates_path, format_table(panel.dates, panel.delta_f, labels, _schema_line(PANEL_SCHEMA, kind="increments")))
    b = atomic_write_text(flows_path, format_table(panel.dates, panel.delta_q, labels, _schema_line(PANEL_SCHEMA, kind="flows")))
    return a, b


def read_table(path, expected_kinds: Iterable[str]) -> tuple[str, np.ndarray, np.ndarray, list[str]]:
    """Parse one panel file into ``(kind, dates, values, labels)``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FrcIOError(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file")
    attrs = _parse_schema_line(lines[0], PANEL_SCHEMA, path)
    kind = attrs.get("kind")
    expected_kinds = tuple(expected_kinds)
    if kind not in expected_kinds:
        raise ParseError(f"{path}:1: kind={kind!r}, expected one of {expected_kinds}")
    rows = list(csv.reader(lines[1:]))
    if not rows or rows[0][:1] != ["date"]:
        raise ParseError(f"{path}:2: header must start with 'date'")
    labels = [c.strip() for c in rows[0][1:]]
    if not labels:
        raise ParseError(f"{path}:2: no tenor columns")
    expected_labels = TenorGrid(len(labels)).labels() if len(labels) >= 2 else None
    if expected_labels is not None and labels != expected_labels:
        raise ParseError(f"{path}:2: tenor columns must be {','.join(expected_labels)}")
    dates, values = [], []
    seen = {}
    for offset, row in enumerate(rows[1:]):
        lineno = offset + 3
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(labels) + 1:
            raise ParseError(f"{path}:{lineno}: expected {len(labels) + 1} cells, got {len(row)}")
        try:
            d = np.datetime64(row[0].strip(), "D")
        except ValueError:
            raise ParseError(f"{path}:{lineno}: invalid ISO-8601 date {row[0]!r}") from None
        if d in seen:
            raise ParseError(f"{path}:{lineno}: duplicate date {d} (first on line {seen[d]})")
        if dates and d < dates[-1]:
            raise ParseError(f"{path}:{lineno}: date {d} is earlier than the previous row")
        seen[d] = lineno
        vals = []
        for col, cell in enumerate(row[1:]):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric value {cell!r} in column {labels[col]}") from None
            if not np.isfinite(v):
                raise ParseError(f"{path}:{lineno}: non-finite value in column {labels[col]}")
            vals.append(v)
        dates.append(d)
        values.append(vals)
    if not dates:
        raise ParseError(f"{path}: no data rows")
    return kind, np.array(dates, dtype="datetime64[D]"), np.array(values, float), labels


def ingest_panel(rates_path, flows_path, flow_scale: float = 1.0) -> MarketPanel:
    """Read a rates file and a flows file sharing one date column.

    Levels are differenced, so the first date is consumed and the first flow
    row dropped.  ``flow_scale`` multiplies the flows (unit conversion).
    """
    rkind, rdates, rvals, rlabels = read_table(rates_path, ("levels", "increments"))
    _, qdates, qvals, qlabels = read_table(flows_path, ("flows",))
    if rlabels != qlabels:
        raise ParseError(f"{flows_path}:2: tenor columns differ from {rates_path}")
    if len(rdates) != len(qdates) or np.any(rdates != qdates):
        k = int(np.argmax(rdates[: len(qdates)] != qdates[: len(rdates)])) if min(len(rdates), len(qdates)) else 0
        if min(len(rdates), len(qdates)) and rdates[k] == qdates[k]:
            k = min(len(rdates), len(qdates))
        first = rdates[k] if k < len(rdates) else qdates[k]
        raise ParseError(f"date columns of {rates_path} and {flows_path} differ; first mismatch at {first} (row {k + 1})")
    if rkind == "levels":
        if len(rdates) < 2:
            raise ParseError(f"{rates_path}: levels need at least two rows")
        return MarketPanel(rdates[1:], np.diff(rvals, axis=0), qvals[1:] * flow_scale)
    return MarketPanel(rdates, rvals, qvals * flow_scale)


# --- matrices, long tables, json ----------------------------------------


def write_matrix(path, matrix: np.ndarray, row_labels: Sequence[str], col_labels: Sequence[str], name: str) -> Path:
    buf = _io.StringIO()
    buf.write(_schema_line(MATRIX_SCHEMA, name=name))
    buf.write(",".join(["row", *col_labels]) + "\n")
    for lab, row in zip(row_labels, np.asarray(matrix, float)):
        buf.write(",".join([lab, *(fmt(v) for v in row)]) + "\n")
    return atomic_write_text(path, buf.getvalue())


def read_matrix(path) -> tuple[np.ndarray, list[str], list[str], str]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise FrcIOError(f"cannot read {path}: {exc}") from exc
    attrs = _parse_schema_line(lines[0] if lines else "", MATRIX_SCHEMA, path)
    rows = list(csv.reader(lines[1:]))
    cols = rows[0][1:]
    labels, vals = [], []
    for offset, row in enumerate(rows[1:]):
        try:
            vals.append([float(c) for c in row[1:]])
        except ValueError:
            raise ParseError(f"{path}:{offset + 3}: non-numeric cell") from None
        labels.append(row[0])
    return np.array(vals), labels, cols, attrs.get("name", "")


def write_long(path, rows: Iterable[tuple], name: str) -> Path:
    """Long-format ``x,y,series`` table."""
    buf = _io.StringIO()
    buf.write(_schema_line(LONG_SCHEMA, name=name))
    buf.write("x,y,series\n")
    for x, y, series in rows:
        buf.write(f"{fmt(x)},{fmt(y)},{series}\n")
    return atomic_write_text(path, buf.getvalue())


def read_long(path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    path = Path(path)
    lines = path.read_text().splitlines()
    _parse_schema_line(lines[0] if lines else "", LONG_SCHEMA, path)
    rows = list(csv.reader(lines[2:]))
    return (np.array([float(r[0]) for r in rows]), np.array([float(r[1]) for r in rows]), [r[2] for r in rows])


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.datetime64):
        return str(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, default=_json_default, indent=2, sort_keys=True) + "\n"


def write_json(path, payload: dict, kind: str) -> Path:
    body = {"schema": JSON_SCHEMA, "kind": kind, **payload}
    return atomic_write_text(path, dumps(body))


def read_json(path, kind: Optional[str] = None) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise FrcIOError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if data.get("schema") != JSON_SCHEMA:
        raise ParseError(f"{path}: unsupported schema {data.get('schema')!r}; this reader handles {JSON_SCHEMA}")
    if kind is not None and data.get("kind") != kind:
        raise ParseError(f"{path}: artifact kind {data.get('kind')!r}, expected {kind!r}")
    return data
