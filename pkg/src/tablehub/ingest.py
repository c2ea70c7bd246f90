"""Delimited-text and structured-text ingestion.

Turns raw text into typed Tables: dialect sniffing, RFC-4180 style
parsing, sample-based type inference, and the two tabular JSON shapes
(array of flat records, map of column arrays).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import (
    EmptyInputError,
    LengthMismatchError,
    MalformedDocumentError,
    NestedValueError,
    RaggedRowError,
    SchemaMismatchError,
    UnsupportedShapeError,
    UnterminatedQuoteError,
)
from .table import (
    INT64_MAX,
    INT64_MIN,
    Column,
    DType,
    Table,
    make_table,
    parse_text,
    render_value,
)

logger = logging.getLogger(__name__)

DELIMITER_CANDIDATES = (",", ";", "\t", "|")

# Inference tries these in order; Text always succeeds.
_INFERENCE_ORDER = (DType.INT, DType.FLOAT, DType.BOOL, DType.DATE, DType.TEXT)


@dataclass(frozen=True)
class Dialect:
    delimiter: str
    quote: str = '"'
    has_header: bool = True

    def __post_init__(self):
        if self.delimiter == self.quote:
            raise ValueError("delimiter and quote must differ")


@dataclass(frozen=True)
class RawTable:
    header: tuple
    cells: tuple  # rows of tuples, each exactly len(header) long

    @property
    def n_rows(self) -> int:
        return len(self.cells)


def _strip_bom(text: str) -> str:
    return text[1:] if text.startswith("﻿") else text


def sniff_dialect(text: str, max_lines: int = 20) -> Dialect:
    """Guess delimiter and header presence from a sample of the input.

    The delimiter is the candidate (comma, semicolon, tab, pipe) whose
    per-line occurrence count is the same on every sampled non-blank line,
    picking the highest such count; ties fall back to candidate order.
    Header detection: the first row is a header when none of its cells
    parse as a number while the second row has at least one numeric cell,
    or when there is only one row.
    """
    text = _strip_bom(text)
    if not text:
        raise EmptyInputError()
    lines = [ln for ln in text.splitlines() if ln][:max_lines]
    if not lines:
        raise EmptyInputError()

    best = None
    for cand in DELIMITER_CANDIDATES:
        counts = [ln.count(cand) for ln in lines]
        if len(set(counts)) != 1:
            continue
        if best is None or counts[0] > best[1]:
            best = (cand, counts[0])
    if best is None:
        # No candidate is consistent (ragged or heavily quoted input);
        # fall back to the candidate with the highest minimum count.
        best = max(
            ((cand, min(ln.count(cand) for ln in lines))
             for cand in DELIMITER_CANDIDATES),
            key=lambda item: item[1])
    delimiter = best[0]

    return Dialect(delimiter=delimiter, quote='"',
                   has_header=detect_header(text, delimiter))


def detect_header(text: str, delimiter: str) -> bool:
    """First row is a header when none of its cells look numeric while the
    second row has at least one numeric cell; a single row is a header.
    """
    lines = [ln for ln in _strip_bom(text).splitlines() if ln][:2]
    if not lines:
        raise EmptyInputError()
    if len(lines) == 1:
        return True
    first = lines[0].split(delimiter)
    second = lines[1].split(delimiter)
    return not any(_is_numeric_text(c) for c in first) \
        and any(_is_numeric_text(c) for c in second)


def _is_numeric_text(cell: str) -> bool:
    cell = cell.strip()
    if not cell:
        return False
    for dtype in (DType.INT, DType.FLOAT):
        try:
            parse_text(cell, dtype)
            return True
        except ValueError:
            pass
    return False


def parse_delimited(text: str, d: Dialect) -> RawTable:
    """Parse delimited text into a rectangular grid of strings.

    Quoted fields may contain the delimiter and newlines; a doubled quote
    inside a quoted field is a literal quote; LF and CRLF both end rows.
    Rows shorter than the header are padded with empty strings; rows
    longer than the header raise RaggedRowError. Without a header row,
    names are synthesized as col_1..col_k from the first row's width.
    """
    text = _strip_bom(text)
    if d.quote in text:
        rows = _parse_quoted(text, d)
    else:
        rows = _parse_plain(text, d)

    if not rows:
        return RawTable((), ())
    if d.has_header:
        header = tuple(rows[0][1])
        data = rows[1:]
    else:
        header = tuple(f"col_{i + 1}" for i in range(len(rows[0][1])))
        data = rows
    width = len(header)
    cells = []
    for line_no, row in data:
        if len(row) > width:
            raise RaggedRowError(line_no, width, len(row))
        if len(row) < width:
            row = row + [""] * (width - len(row))
        cells.append(tuple(row))
    return RawTable(header, tuple(cells))


def _parse_plain(text: str, d: Dialect) -> list:
    """Fast path for input without any quote character."""
    pieces = text.split("\n")
    tail = pieces[-1]  # text after the final newline; empty means no row
    rows = []
    for line_no, ln in enumerate(pieces[:-1], start=1):
        if ln.endswith("\r"):
            ln = ln[:-1]
        rows.append((line_no, ln.split(d.delimiter)))
    if tail:
        rows.append((len(pieces), tail.split(d.delimiter)))
    return rows


def _parse_quoted(text: str, d: Dialect) -> list:
    """Full state machine honoring quoted fields."""
    delim = d.delimiter
    quote = d.quote
    rows = []
    row: list = []
    fld: list = []
    line_no = 1
    row_line = 1
    i = 0
    n = len(text)
    in_quotes = False
    quote_line = 1
    while i < n:
        ch = text[i]
        if in_quotes:
            if ch == quote:
                if i + 1 < n and text[i + 1] == quote:
                    fld.append(quote)
                    i += 2
                    continue
                in_quotes = False
                i += 1
            else:
                if ch == "\n":
                    line_no += 1
                fld.append(ch)
                i += 1
            continue
        if ch == quote:
            in_quotes = True
            quote_line = line_no
            i += 1
        elif ch == delim:
            row.append("".join(fld))
            fld = []
            i += 1
        elif ch == "\n" or (ch == "\r" and i + 1 < n and text[i + 1] == "\n"):
            if ch == "\r":
                i += 1
            row.append("".join(fld))
            rows.append((row_line, row))
            row, fld = [], []
            line_no += 1
            row_line = line_no
            i += 1
        else:
            fld.append(ch)
            i += 1
    if in_quotes:
        raise UnterminatedQuoteError(quote_line)
    if fld or row:
        row.append("".join(fld))
        rows.append((row_line, row))
    return rows


def infer_dtype(cells: Sequence[str], sample_limit: int = 1000) -> DType:
    """Infer a column dtype from its first `sample_limit` non-empty cells.

    Returns the first of Int, Float, Bool, Date, Text under which every
    sampled cell converts; all-empty input is Text.
    """
    sample = []
    for c in cells:
        if c != "":
            sample.append(c)
            if len(sample) >= sample_limit:
                break
    if not sample:
        return DType.TEXT
    for dtype in _INFERENCE_ORDER:
        if dtype is DType.TEXT:
            return DType.TEXT
        if all(_converts(c, dtype) for c in sample):
            return dtype
    return DType.TEXT


def _converts(cell: str, dtype: DType) -> bool:
    try:
        parse_text(cell, dtype)
        return True
    except ValueError:
        return False


def finalize(raw: RawTable, schema: Optional[Sequence[tuple]] = None) -> Table:
    """Type a RawTable into a Table.

    Without a schema each column's dtype is inferred then cast; with a
    schema (whose names must match the header set exactly) columns are
    cast to the given dtypes. Cells that fail to convert become null;
    empty cells are null under every dtype.
    """
    if schema is not None:
        schema = list(schema)
        by_name = dict(schema)
        if len(by_name) != len(schema) or set(by_name) != set(raw.header):
            raise SchemaMismatchError(
                f"schema names {sorted(by_name)} do not match header "
                f"{sorted(raw.header)}")
        dtypes = [by_name[name] for name in raw.header]
    else:
        dtypes = [infer_dtype([row[i] for row in raw.cells])
                  for i in range(len(raw.header))]

    columns = []
    failures = 0
    for i, (name, dtype) in enumerate(zip(raw.header, dtypes)):
        values, failed = _cast_cells([row[i] for row in raw.cells], dtype)
        failures += failed
        columns.append((name, dtype, values))
    if failures:
        logger.info("finalize: %d cell(s) failed to convert and are null",
                    failures)
    return make_table(columns)


def _cast_cells(cells: list, dtype: DType) -> tuple:
    if dtype is DType.TEXT:
        return [c if c != "" else None for c in cells], 0
    out = []
    failed = 0
    if dtype is DType.INT:
        # Fast path: sign check plus ascii digit test avoids the regex on
        # the hot loop for big files.
        for c in cells:
            if c == "":
                out.append(None)
                continue
            body = c[1:] if c[0] in "+-" else c
            if body.isascii() and body.isdigit():
                n = int(c)
                if INT64_MIN <= n <= INT64_MAX:
                    out.append(n)
                    continue
            out.append(None)
            failed += 1
        return out, failed
    for c in cells:
        if c == "":
            out.append(None)
            continue
        try:
            out.append(parse_text(c, dtype))
        except ValueError:
            out.append(None)
            failed += 1
    return out, failed


def parse_structured(text: str) -> Table:
    """Parse a JSON document holding one of the two tabular shapes.

    Shape (a): an array of flat records; columns are the union of keys in
    first-appearance order and missing keys are null. Shape (b): a map
    from column name to equal-length arrays. Integral numbers in 64-bit
    signed range become Int, other numbers Float; nested arrays or
    objects inside cells are an error.
    """
    text = _strip_bom(text)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedDocumentError(str(e)) from None

    if isinstance(doc, list):
        return _from_records(doc)
    if isinstance(doc, dict):
        return _from_column_map(doc)
    raise UnsupportedShapeError(
        "top level must be an array of records or a map of arrays")


def _from_records(records: list) -> Table:
    names: list = []
    for i, rec in enumerate(records):
        if not isinstance(rec, dict):
            raise UnsupportedShapeError(
                f"array element {i} is not an object")
        for k in rec:
            if k not in names:
                names.append(k)
    columns = {}
    for name in names:
        cells = []
        for i, rec in enumerate(records):
            v = rec.get(name)
            if isinstance(v, (list, dict)):
                raise NestedValueError(i, name)
            cells.append(v)
        columns[name] = cells
    return _type_columns(names, columns)

def _from_column_map(doc: dict) -> Table:
    names = list(doc)
    length = None
    columns = {}
    for name in names:
        arr = doc[name]
        if not isinstance(arr, list):
            raise UnsupportedShapeError(
                f"value of {name!r} is not an array")
        if length is None:
            length = len(arr)
        elif len(arr) != length:
            raise LengthMismatchError(name, length, len(arr))
        for i, v in enumerate(arr):
            if isinstance(v, (list, dict)):
                raise NestedValueError(i, name)
        columns[name] = list(arr)
    return _type_columns(names, columns)


def _type_columns(names: list, columns: dict) -> Table:
    out = []
    for name in names:
        cells = [_scalar(v) for v in columns[name]]
        out.append((name, _unify_json_dtype(cells), cells))
    # Mixed columns fall back to text; convert in place.
    final = []
    for name, dtype, cells in out:
        if dtype is DType.TEXT:
            cells = [render_value(v) if not isinstance(v, str) else v
                     for v in cells]
        elif dtype is DType.FLOAT:
            cells = [float(v) if isinstance(v, int) and not isinstance(v, bool)
                     else v for v in cells]
        final.append((name, dtype, cells))
    return make_table(final)


def _scalar(v):
    if isinstance(v, int) and not isinstance(v, bool):
        if not INT64_MIN <= v <= INT64_MAX:
            return float(v)
    return v


def _unify_json_dtype(cells: list) -> DType:
    dtypes = set()
    for v in cells:
        if v is None:
            continue
        if isinstance(v, bool):
            dtypes.add(DType.BOOL)
        elif isinstance(v, int):
            dtypes.add(DType.INT)
        elif isinstance(v, float):
            dtypes.add(DType.FLOAT)
        else:
            dtypes.add(DType.TEXT)
    if not dtypes:
        return DType.TEXT
    if len(dtypes) == 1:
        return next(iter(dtypes))
    if dtypes == {DType.INT, DType.FLOAT}:
        return DType.FLOAT
    return DType.TEXT
