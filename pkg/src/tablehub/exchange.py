"""Export tables in the shapes tools actually consume, pick a format both
sides understand, and apply per-tool adapters for the stragglers.

Four formats cover the common ground: row_records (array of flat objects),
column_map (name to array), matrix (header row then value rows), and csv
text. Structured payloads serialize as JSON when they cross a wire; the
rendering rules below make that byte-deterministic.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from datetime import date
from enum import Enum
from typing import Optional

from .errors import NoCommonFormatError, UnknownFieldError
from .table import Table, Value, render_value


class DataFormat(Enum):
    ROW_RECORDS = "row_records"
    COLUMN_MAP = "column_map"
    MATRIX = "matrix"
    CSV = "csv"

    @classmethod
    def parse(cls, name: str) -> Optional["DataFormat"]:
        """Wire name to format; None for names this hub does not know."""
        for f in cls:
            if f.value == name:
                return f
        return None


ALL_FORMATS = frozenset(DataFormat)


@dataclass(frozen=True)
class AdapterSpec:
    tool_id: str
    base: DataFormat
    field_renames: tuple = ()   # of (from_name, to_name)
    wrap_key: Optional[str] = None

    def __post_init__(self):
        if not self.tool_id:
            raise ValueError("tool_id must be non-empty")
        object.__setattr__(self, "field_renames",
                           tuple((a, b) for a, b in self.field_renames))


def json_value(v: Value):
    """Value as a JSON-ready object. NaN and infinities have no JSON
    spelling, so they cross the boundary as null.
    """
    if isinstance(v, float):
        return v if math.isfinite(v) else None
    if isinstance(v, date):
        return v.isoformat()
    return v


def export_table(t: Table, f: DataFormat):
    if f is DataFormat.ROW_RECORDS:
        return [
            {c.name: json_value(c.values[i]) for c in t.columns}
            for i in range(t.n_rows)
        ]
    if f is DataFormat.COLUMN_MAP:
        return {c.name: [json_value(v) for v in c.values] for c in t.columns}
    if f is DataFormat.MATRIX:
        header = [c.name for c in t.columns]
        rows = [[json_value(c.values[i]) for c in t.columns]
                for i in range(t.n_rows)]
        return [header] + rows
    if f is DataFormat.CSV:
        return _export_csv(t)
    raise TypeError(f"not a data format: {f!r}")


def _export_csv(t: Table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")  # quotes only when needed
    w.writerow([c.name for c in t.columns])
    for i in range(t.n_rows):
        w.writerow([render_value(c.values[i]) or "" for c in t.columns])
    return buf.getvalue()


def serialize_payload(payload) -> str:
    """Structured payloads as compact JSON; csv payloads are already text."""
    if isinstance(payload, str):
        return payload
    return json.dumps(payload, separators=(",", ":"), ensure_ascii=False,
                      allow_nan=False)


def negotiate_format(tool_accepts, hub_supports=ALL_FORMATS) -> DataFormat:
    """First format the tool asks for that the hub can produce. Entries may
    be wire names; unknown names are skipped rather than rejected so newer
    tools can list formats this hub has never heard of.
    """
    for entry in tool_accepts:
        f = DataFormat.parse(entry) if isinstance(entry, str) else entry
        if f is not None and f in hub_supports:
            return f
    raise NoCommonFormatError(list(tool_accepts))


def apply_adapter(payload, spec: AdapterSpec):
    renames = dict(spec.field_renames)
    if renames:
        payload = _RENAMERS[spec.base](payload, renames)
    if spec.wrap_key is not None:
        payload = {spec.wrap_key: payload}
    return payload


def _rename_records(payload, renames):
    # a zero-row export carries no field names, so there is nothing to miss
    for old in renames:
        if payload and not any(old in rec for rec in payload):
            raise UnknownFieldError(old)
    return [{renames.get(k, k): v for k, v in rec.items()} for rec in payload]


def _rename_column_map(payload, renames):
    for old in renames:
        if old not in payload:
            raise UnknownFieldError(old)
    return {renames.get(k, k): v for k, v in payload.items()}


def _rename_matrix(payload, renames):
    if not payload:
        header = []
    else:
        header = payload[0]
    for old in renames:
        if old not in header:
            raise UnknownFieldError(old)
    return [[renames.get(h, h) for h in header]] + [list(r) for r in payload[1:]]


def _rename_csv(payload: str, renames):
    rows = list(csv.reader(io.StringIO(payload)))
    header = rows[0] if rows else []
    for old in renames:
        if old not in header:
            raise UnknownFieldError(old)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow([renames.get(h, h) for h in header])
    w.writerows(rows[1:])
    return buf.getvalue()


_RENAMERS = {
    DataFormat.ROW_RECORDS: _rename_records,
    DataFormat.COLUMN_MAP: _rename_column_map,
    DataFormat.MATRIX: _rename_matrix,
    DataFormat.CSV: _rename_csv,
}
