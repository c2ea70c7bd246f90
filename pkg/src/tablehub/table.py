"""Immutable columnar table model.

A Table is an ordered sequence of named, typed columns of equal length.
Cell values are plain Python objects: None (null), int, float, bool, str,
or datetime.date. Every mutation-shaped operation returns a new Table so
that provenance logs and undo stacks can hold cheap snapshots.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from typing import Iterable, Optional, Sequence, Union

from .errors import (
    DuplicateColumnError,
    LengthMismatchError,
    RowOutOfBoundsError,
    TypeViolationError,
    UnknownColumnError,
)

INT64_MIN = -(2 ** 63)
INT64_MAX = 2 ** 63 - 1

Value = Union[None, int, float, bool, str, date]


class DType(Enum):
    INT = "int"
    FLOAT = "float"
    BOOL = "bool"
    TEXT = "text"
    DATE = "date"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, name: str) -> "DType":
        try:
            return cls(name)
        except ValueError:
            raise ValueError(f"unknown dtype {name!r}") from None


_INT_RE = re.compile(r"[+-]?[0-9]+\Z")
_FLOAT_RE = re.compile(r"[+-]?(?:[0-9]+\.?[0-9]*|\.[0-9]+)(?:[eE][+-]?[0-9]+)?\Z")
_DATE_RE = re.compile(r"[0-9]{4}-[0-9]{2}-[0-9]{2}\Z")
_CONTROL_RE = re.compile(r"[\x00-\x1f\x7f]")


def value_matches(v: Value, dtype: DType) -> bool:
    """True if a non-null value is storable in a column of this dtype."""
    if v is None:
        return True
    if dtype is DType.BOOL:
        return isinstance(v, bool)
    if dtype is DType.INT:
        return isinstance(v, int) and not isinstance(v, bool) \
            and INT64_MIN <= v <= INT64_MAX
    if dtype is DType.FLOAT:
        return isinstance(v, float)
    if dtype is DType.TEXT:
        return isinstance(v, str)
    if dtype is DType.DATE:
        return isinstance(v, date)
    return False


def render_value(v: Value) -> Optional[str]:
    """Canonical text rendering: ints as decimal, floats as shortest
    round-trip repr, bools as true/false, dates as YYYY-MM-DD.

    Null has no rendering and comes back as None. Floats without a finite
    text form (nan, inf) also come back as None.
    """
    if v is None:
        return None
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if not math.isfinite(v):
            return None
        return repr(v)
    if isinstance(v, date):
        return v.isoformat()
    if isinstance(v, int):
        return str(v)
    return v


def compare_values(a: Value, b: Value) -> int:
    """Total order over same-dtype values: nulls sort after everything,
    float NaN after every other float; otherwise natural ordering.
    """
    if a is None:
        return 0 if b is None else 1
    if b is None:
        return -1
    a_nan = isinstance(a, float) and math.isnan(a)
    b_nan = isinstance(b, float) and math.isnan(b)
    if a_nan or b_nan:
        return 0 if (a_nan and b_nan) else (1 if a_nan else -1)
    if a < b:
        return -1
    if a > b:
        return 1
    return 0


def parse_text(text: str, target: DType) -> Value:
    """Convert a text cell to `target` under the strict conversion rules.

    Returns the converted value, or raises ValueError when the text does
    not convert. Empty text never reaches this function (it is null).
    """
    if target is DType.TEXT:
        return text
    if target is DType.INT:
        if _INT_RE.match(text):
            n = int(text)
            if INT64_MIN <= n <= INT64_MAX:
                return n
        raise ValueError(f"not an integer: {text!r}")
    if target is DType.FLOAT:
        if _FLOAT_RE.match(text):
            return float(text)
        raise ValueError(f"not a number: {text!r}")
    if target is DType.BOOL:
        low = text.lower()
        if low == "true":
            return True
        if low == "false":
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if target is DType.DATE:
        if _DATE_RE.match(text):
            return date.fromisoformat(text)
        raise ValueError(f"not a date: {text!r}")
    raise ValueError(f"no conversion to {target}")


def convert_value(v: Value, source: DType, target: DType) -> Value:
    """Per-cell conversion matrix. Raises ValueError for unconvertible cells.

    Only the listed pairs convert: Text to any dtype via the strict parse
    rules, Int to Float, Float to Int (integral values only), Int to Bool
    (0/1 only), and anything to Text via the canonical rendering. Null is
    always Null.
    """
    if v is None:
        return None
    if source is target:
        return v
    if target is DType.TEXT:
        rendered = render_value(v)
        if rendered is None:
            raise ValueError("no text rendering")
        return rendered
    if source is DType.TEXT:
        return parse_text(v, target)
    if source is DType.INT and target is DType.FLOAT:
        return float(v)
    if source is DType.FLOAT and target is DType.INT:
        if math.isfinite(v) and v == int(v) and INT64_MIN <= int(v) <= INT64_MAX:
            return int(v)
        raise ValueError(f"not integral: {v!r}")
    if source is DType.INT and target is DType.BOOL:
        if v == 0:
            return False
        if v == 1:
            return True
        raise ValueError(f"not 0/1: {v!r}")
    raise ValueError(f"no conversion {source} -> {target}")


@dataclass(frozen=True)
class Column:
    name: str
    dtype: DType
    values: tuple

    def __post_init__(self):
        if not self.name:
            raise TypeViolationError("column name must be non-empty")
        if _CONTROL_RE.search(self.name):
            raise TypeViolationError(
                f"column name {self.name!r} contains control characters")
        object.__setattr__(self, "values", tuple(self.values))

    @property
    def n_rows(self) -> int:
        return len(self.values)

    def null_count(self) -> int:
        return sum(1 for v in self.values if v is None)


@dataclass(frozen=True)
class Table:
    columns: tuple = ()
    _by_name: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(
            self, "_by_name", {c.name: c for c in self.columns})

    @property
    def n_rows(self) -> int:
        return self.columns[0].n_rows if self.columns else 0

    @property
    def column_names(self) -> tuple:
        return tuple(c.name for c in self.columns)

    def schema(self) -> list:
        return [(c.name, c.dtype) for c in self.columns]

    def has_column(self, name: str) -> bool:
        return name in self._by_name

    def column(self, name: str) -> Column:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownColumnError(name) from None

    def row(self, i: int) -> tuple:
        if not 0 <= i < self.n_rows:
            raise RowOutOfBoundsError(i, self.n_rows)
        return tuple(c.values[i] for c in self.columns)


def make_table(columns: Iterable[tuple]) -> Table:
    """Build and validate a Table from (name, dtype, values) triples.

    Raises LengthMismatchError on unequal column lengths (naming the
    offending column), DuplicateColumnError on repeated names, and
    TypeViolationError when a value does not match its column dtype
    (naming the row and column).
    """
    cols = []
    seen = set()
    n_rows = None
    for name, dtype, values in columns:
        if name in seen:
            raise DuplicateColumnError(name)
        seen.add(name)
        values = tuple(values)
        if n_rows is None:
            n_rows = len(values)
        elif len(values) != n_rows:
            raise LengthMismatchError(name, n_rows, len(values))
        for i, v in enumerate(values):
            if not value_matches(v, dtype):
                raise TypeViolationError(
                    f"value {v!r} at row {i} does not match column "
                    f"{name!r} of type {dtype}",
                    column=name, row=i)
        cols.append(Column(name, dtype, values))
    return Table(tuple(cols))


def validate(t: Table) -> None:
    """Assert the Table invariants; raises on any violation.

    Used by tests as the universal postcondition on operation outputs.
    """
    names = set()
    for c in t.columns:
        if c.name in names:
            raise DuplicateColumnError(c.name)
        names.add(c.name)
        if c.n_rows != t.n_rows:
            raise LengthMismatchError(c.name, t.n_rows, c.n_rows)
        for i, v in enumerate(c.values):
            if not value_matches(v, c.dtype):
                raise TypeViolationError(
                    f"value {v!r} at row {i} does not match column "
                    f"{c.name!r} of type {c.dtype}",
                    column=c.name, row=i)


def cast_column(col: Column, target: DType) -> tuple:
    """Cast a column cell by cell; returns (new column, failure count).

    Unconvertible cells become null and are counted; null stays null.
    """
    if col.dtype is target:
        return col, 0
    out = []
    failures = 0
    for v in col.values:
        if v is None:
            out.append(None)
            continue
        try:
            out.append(convert_value(v, col.dtype, target))
        except ValueError:
            out.append(None)
            failures += 1
    return Column(col.name, target, tuple(out)), failures


def get_cell(t: Table, row: int, col: str) -> Value:
    return t.column(col).values[_checked_row(t, row)]


def with_cell(t: Table, row: int, col: str, v: Value) -> Table:
    """Return a new table with one cell replaced.

    The value must be null, match the column dtype, or be coercible to it
    under the conversion matrix; otherwise TypeViolationError.
    """
    row = _checked_row(t, row)
    column = t.column(col)
    if v is not None and not value_matches(v, column.dtype):
        try:
            v = convert_value(v, _dtype_of(v), column.dtype)
            if not value_matches(v, column.dtype):
                raise ValueError(f"out of range for {column.dtype}")
        except ValueError as e:
            raise TypeViolationError(
                f"cannot store {v!r} in column {col!r} of type "
                f"{column.dtype}: {e}",
                column=col, row=row) from None
    values = list(column.values)
    values[row] = v
    new_col = Column(column.name, column.dtype, tuple(values))
    return Table(tuple(new_col if c.name == col else c for c in t.columns))


def _checked_row(t: Table, row: int) -> int:
    if not 0 <= row < t.n_rows:
        raise RowOutOfBoundsError(row, t.n_rows)
    return row


def _dtype_of(v: Value) -> DType:
    if isinstance(v, bool):
        return DType.BOOL
    if isinstance(v, int):
        return DType.INT
    if isinstance(v, float):
        return DType.FLOAT
    if isinstance(v, date):
        return DType.DATE
    if isinstance(v, str):
        return DType.TEXT
    raise TypeViolationError(f"unsupported value {v!r}")
