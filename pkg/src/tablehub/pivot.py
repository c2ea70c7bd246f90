"""Pivot-table evaluation: a grid of aggregates over row and column
dimensions, with optional marginal totals.

Axes are sorted (nulls last) rather than first-appearance so the grid is
stable no matter how the source rows are ordered. Totals are recomputed
from the raw rows, not from the cells, so a mean total is a true mean.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Optional

from .errors import UnknownColumnError, ValidationFailedError
from .table import Column, DType, Table, Value, compare_values, render_value
from .transform import AGG_FUNCTIONS, _group_key, aggregate

TOTAL_LABEL = "(total)"
NULL_LABEL = "(null)"


@dataclass(frozen=True)
class PivotSpec:
    row_dims: tuple
    col_dims: tuple
    measure: Optional[str]
    agg: str
    totals: bool = False

    def __post_init__(self):
        object.__setattr__(self, "row_dims", tuple(self.row_dims))
        object.__setattr__(self, "col_dims", tuple(self.col_dims))


@dataclass(frozen=True)
class PivotResult:
    row_dims: tuple
    col_dims: tuple
    row_headers: tuple          # of dim-value tuples, sorted
    col_headers: tuple
    cells: tuple                # row-major grid, |row_headers| x |col_headers|
    value_dtype: DType
    row_totals: Optional[tuple] = None
    col_totals: Optional[tuple] = None
    grand_total: Value = None
    has_totals: bool = False


def _validate(t: Table, spec: PivotSpec) -> None:
    try:
        for name in spec.row_dims + spec.col_dims:
            t.column(name)
        if spec.measure is not None:
            t.column(spec.measure)
    except UnknownColumnError as e:
        raise ValidationFailedError(str(e)) from e
    if len(set(spec.row_dims)) != len(spec.row_dims):
        raise ValidationFailedError("duplicate row dimension")
    if len(set(spec.col_dims)) != len(spec.col_dims):
        raise ValidationFailedError("duplicate column dimension")
    if set(spec.row_dims) & set(spec.col_dims):
        raise ValidationFailedError(
            "row and column dimensions must not overlap")
    if spec.agg not in AGG_FUNCTIONS:
        raise ValidationFailedError(f"unknown aggregate {spec.agg!r}")
    if spec.agg == "count":
        if spec.measure is not None:
            raise ValidationFailedError("count takes no measure")
    else:
        if spec.measure is None:
            raise ValidationFailedError(f"{spec.agg} needs a measure")
        m = t.column(spec.measure)
        if spec.agg in ("sum", "mean") and m.dtype not in (DType.INT,
                                                           DType.FLOAT):
            raise ValidationFailedError(
                f"{spec.agg} needs a numeric measure, "
                f"{spec.measure!r} is {m.dtype}")


def _tuple_cmp(a: tuple, b: tuple) -> int:
    for x, y in zip(a, b):
        c = compare_values(x, y)
        if c:
            return c
    return 0


def _sorted_headers(order: list, display: dict) -> list:
    keys = sorted(order,
                  key=functools.cmp_to_key(
                      lambda a, b: _tuple_cmp(display[a], display[b])))
    return keys


def pivot(t: Table, spec: PivotSpec) -> PivotResult:
    _validate(t, spec)
    row_cols = [t.column(n) for n in spec.row_dims]
    col_cols = [t.column(n) for n in spec.col_dims]
    measure = t.column(spec.measure) if spec.measure is not None else None

    row_display = {}
    col_display = {}
    row_order = []
    col_order = []
    buckets = {}        # (row key, col key) -> row indices
    row_members = {}    # row key -> row indices
    col_members = {}
    for i in range(t.n_rows):
        rd = tuple(c.values[i] for c in row_cols)
        cd = tuple(c.values[i] for c in col_cols)
        rk = tuple(_group_key(v) for v in rd)
        ck = tuple(_group_key(v) for v in cd)
        if rk not in row_display:
            row_display[rk] = rd
            row_order.append(rk)
            row_members[rk] = []
        if ck not in col_display:
            col_display[ck] = cd
            col_order.append(ck)
            col_members[ck] = []
        row_members[rk].append(i)
        col_members[ck].append(i)
        buckets.setdefault((rk, ck), []).append(i)

    row_keys = _sorted_headers(row_order, row_display)
    col_keys = _sorted_headers(col_order, col_display)

    def agg_over(indices: list) -> Value:
        if measure is None:
            return aggregate(spec.agg, [None] * len(indices))
        return aggregate(spec.agg, [measure.values[i] for i in indices])

    cells = tuple(
        tuple(agg_over(buckets.get((rk, ck), [])) for ck in col_keys)
        for rk in row_keys)

    value_dtype = _value_dtype(spec.agg, measure)
    if not spec.totals:
        return PivotResult(
            spec.row_dims, spec.col_dims,
            tuple(row_display[k] for k in row_keys),
            tuple(col_display[k] for k in col_keys),
            cells, value_dtype)
    return PivotResult(
        spec.row_dims, spec.col_dims,
        tuple(row_display[k] for k in row_keys),
        tuple(col_display[k] for k in col_keys),
        cells, value_dtype,
        row_totals=tuple(agg_over(row_members[k]) for k in row_keys),
        col_totals=tuple(agg_over(col_members[k]) for k in col_keys),
        grand_total=agg_over(list(range(t.n_rows))),
        has_totals=True)


def _value_dtype(agg: str, measure: Optional[Column]) -> DType:
    if agg == "count":
        return DType.INT
    if agg == "mean":
        return DType.FLOAT
    return measure.dtype


def _header_name(parts: tuple) -> str:
    return "/".join(NULL_LABEL if v is None else (render_value(v) or NULL_LABEL)
                    for v in parts)


def pivot_to_table(r: PivotResult) -> Table:
    """Flatten a pivot grid into a plain Table: one Text column per row
    dimension, one value column per column header, then a "total" column
    and a "(total)" row when totals were requested.
    """
    n = len(r.row_headers)
    with_total_col = r.has_totals and len(r.col_headers) > 0
    with_total_row = r.has_totals and n > 0

    names = []
    for dim in r.row_dims:
        names.append(dim)
    for parts in r.col_headers:
        name = _header_name(parts) or "value"
        names.append(name)
    if with_total_col:
        names.append("total")
    names = _dedupe(names)

    columns = []
    k = 0
    for j, _dim in enumerate(r.row_dims):
        cells = [render_value(h[j]) for h in r.row_headers]
        if with_total_row:
            cells.append(TOTAL_LABEL)
        columns.append(Column(names[k], DType.TEXT, tuple(cells)))
        k += 1
    for c, _parts in enumerate(r.col_headers):
        cells = [r.cells[i][c] for i in range(n)]
        if with_total_row:
            cells.append(r.col_totals[c])
        columns.append(Column(names[k], r.value_dtype, tuple(cells)))
        k += 1
    if with_total_col:
        cells = list(r.row_totals)
        if with_total_row:
            cells.append(r.grand_total)
        columns.append(Column(names[k], r.value_dtype, tuple(cells)))
    return Table(tuple(columns))


def _dedupe(names: list) -> list:
    """Column names must be unique; joined header tuples occasionally
    collide with each other or with a dimension name.
    """
    seen = {}
    out = []
    for name in names:
        if name not in seen:
            seen[name] = 1
            out.append(name)
            continue
        while True:
            seen[name] += 1
            candidate = f"{name}_{seen[name]}"
            if candidate not in seen:
                break
        seen[candidate] = 1
        out.append(candidate)
    return out
