"""Declarative wrangling steps over Tables.

Each Transform is a small, serializable description of one step: filter,
derive, reshape, aggregate, or a hand edit. Pipelines of steps are the
provenance log for a dataset; applying a pipeline to the original table
reproduces the current one.

Expressions inside steps are kept as source text and parsed against the
table schema when the step is applied, so a serialized pipeline is an
exact record of what the user wrote.
"""

from __future__ import annotations

import functools
import json
import logging
import math
from dataclasses import dataclass
from datetime import date
from typing import Optional, Union

from . import exprlang
from .errors import (
    DuplicateSpreadKeyError,
    ExprError,
    MalformedScriptError,
    NameCollisionError,
    StepFailedError,
    TableHubError,
    ValidationFailedError,
)
from .table import (
    Column,
    DType,
    Table,
    Value,
    cast_column,
    compare_values,
    make_table,
    render_value,
    with_cell,
)

logger = logging.getLogger(__name__)

SCRIPT_VERSION = 1

AGG_FUNCTIONS = ("count", "sum", "mean", "min", "max")


@dataclass(frozen=True)
class Filter:
    pred: str


@dataclass(frozen=True)
class Derive:
    name: str
    expr: str


@dataclass(frozen=True)
class Select:
    names: tuple


@dataclass(frozen=True)
class Drop:
    names: tuple


@dataclass(frozen=True)
class Rename:
    pairs: tuple  # of (old, new)


@dataclass(frozen=True)
class Sort:
    keys: tuple  # of (name, ascending)


@dataclass(frozen=True)
class Fold:
    cols: tuple
    key_name: str
    value_name: str


@dataclass(frozen=True)
class Spread:
    key_col: str
    value_col: str


@dataclass(frozen=True)
class GroupAggregate:
    by: tuple
    aggs: tuple  # of (out_name, fn, col or None for count)


@dataclass(frozen=True)
class EditCell:
    row: int
    col: str
    value: Value


@dataclass(frozen=True)
class DeleteRows:
    indices: tuple


@dataclass(frozen=True)
class SetType:
    col: str
    dtype: DType


Transform = Union[Filter, Derive, Select, Drop, Rename, Sort, Fold, Spread,
                  GroupAggregate, EditCell, DeleteRows, SetType]


@dataclass(frozen=True)
class Pipeline:
    steps: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    def extended(self, step: Transform) -> "Pipeline":
        return Pipeline(self.steps + (step,))


# --- application ---------------------------------------------------------


def apply_transform(t: Table, tr: Transform) -> Table:
    """Apply one step; raises ValidationFailedError (or the more specific
    NameCollisionError / DuplicateSpreadKeyError) when the step does not
    fit the table.
    """
    try:
        return _APPLIERS[type(tr)](t, tr)
    except (NameCollisionError, DuplicateSpreadKeyError, ValidationFailedError):
        raise
    except (ExprError, TableHubError) as e:
        raise ValidationFailedError(str(e)) from e


def apply_pipeline(t: Table, p: Pipeline) -> Table:
    for i, step in enumerate(p.steps):
        try:
            t = apply_transform(t, step)
        except TableHubError as e:
            raise StepFailedError(i, e) from e
    return t


def _checked_expr(src: str, t: Table):
    e = exprlang.parse_expr(src)
    return e, exprlang.typecheck(e, t.schema())


def _apply_filter(t: Table, tr: Filter) -> Table:
    e, dtype = _checked_expr(tr.pred, t)
    if dtype is not DType.BOOL:
        raise ValidationFailedError(
            f"filter predicate {tr.pred!r} is not boolean")
    mask = exprlang.eval_expr(e, t).values
    keep = [i for i, v in enumerate(mask) if v is True]
    return _take_rows(t, keep)


def _apply_derive(t: Table, tr: Derive) -> Table:
    if t.has_column(tr.name):
        raise NameCollisionError(tr.name)
    e, _ = _checked_expr(tr.expr, t)
    col = exprlang.eval_expr(e, t)
    new = Column(tr.name, col.dtype, col.values)
    return Table(t.columns + (new,))


def _apply_select(t: Table, tr: Select) -> Table:
    seen = set()
    for name in tr.names:
        t.column(name)  # existence check
        if name in seen:
            raise ValidationFailedError(f"column {name!r} selected twice")
        seen.add(name)
    return Table(tuple(t.column(n) for n in tr.names))


def _apply_drop(t: Table, tr: Drop) -> Table:
    for name in tr.names:
        t.column(name)
    dropped = set(tr.names)
    return Table(tuple(c for c in t.columns if c.name not in dropped))


def _apply_rename(t: Table, tr: Rename) -> Table:
    mapping = {}
    for old, new in tr.pairs:
        t.column(old)
        if old in mapping:
            raise ValidationFailedError(f"column {old!r} renamed twice")
        mapping[old] = new
    surviving = [c.name for c in t.columns if c.name not in mapping]
    for new in mapping.values():
        if new in surviving:
            raise NameCollisionError(new)
        surviving.append(new)
    return Table(tuple(
        Column(mapping.get(c.name, c.name), c.dtype, c.values)
        for c in t.columns))


def _apply_sort(t: Table, tr: Sort) -> Table:
    if not tr.keys:
        raise ValidationFailedError("sort needs at least one key")
    cols = []
    for name, _asc in tr.keys:
        cols.append(t.column(name).values)

    def cmp(i: int, j: int) -> int:
        for (name, asc), values in zip(tr.keys, cols):
            a, b = values[i], values[j]
            if a is None or b is None:
                c = compare_values(a, b)  # nulls last either direction
            else:
                c = compare_values(a, b)
                if not asc:
                    c = -c
            if c:
                return c
        return 0

    order = sorted(range(t.n_rows), key=functools.cmp_to_key(cmp))
    return _take_rows(t, order)


def _apply_fold(t: Table, tr: Fold) -> Table:
    if not tr.cols:
        raise ValidationFailedError("fold needs at least one column")
    seen = set()
    for name in tr.cols:
        t.column(name)
        if name in seen:
            raise ValidationFailedError(f"column {name!r} folded twice")
        seen.add(name)
    if tr.key_name == tr.value_name:
        raise NameCollisionError(tr.value_name)
    untouched = [c for c in t.columns if c.name not in seen]
    for name in (tr.key_name, tr.value_name):
        if any(c.name == name for c in untouched):
            raise NameCollisionError(name)

    folded = [t.column(n) for n in tr.cols]
    value_dtype = _unify_fold_dtype([c.dtype for c in folded])
    keys = []
    values = []
    for i in range(t.n_rows):
        for c in folded:
            keys.append(c.name)
            values.append(_coerce_fold(c.values[i], c.dtype, value_dtype))
    k = len(tr.cols)
    out = [(c.name, c.dtype,
            tuple(v for v in c.values for _ in range(k)))
           for c in untouched]
    out.append((tr.key_name, DType.TEXT, tuple(keys)))
    out.append((tr.value_name, value_dtype, tuple(values)))
    return make_table(out)


def _unify_fold_dtype(dtypes: list) -> DType:
    distinct = set(dtypes)
    if len(distinct) == 1:
        return dtypes[0]
    if distinct == {DType.INT, DType.FLOAT}:
        return DType.FLOAT
    logger.warning("fold: mixed column types %s coerced to text",
                   sorted(str(d) for d in distinct))
    return DType.TEXT


def _coerce_fold(v: Value, source: DType, target: DType) -> Value:
    if v is None or source is target:
        return v
    if target is DType.FLOAT:
        return float(v)
    return render_value(v)


def _apply_spread(t: Table, tr: Spread) -> Table:
    key_col = t.column(tr.key_col)
    value_col = t.column(tr.value_col)
    if tr.key_col == tr.value_col:
        raise ValidationFailedError("spread key and value must differ")
    group_cols = [c for c in t.columns
                  if c.name not in (tr.key_col, tr.value_col)]

    group_order = []  # first-appearance group keys
    group_rows = {}   # group key -> display tuple
    key_order = []    # first-appearance spread keys (rendered names)
    cells = {}        # (group key, rendered key) -> value
    for i in range(t.n_rows):
        display = tuple(c.values[i] for c in group_cols)
        gkey = tuple(_group_key(v) for v in display)
        if gkey not in group_rows:
            group_rows[gkey] = display
            group_order.append(gkey)
        kv = key_col.values[i]
        if kv is None:
            raise ValidationFailedError(
                f"spread key is null at row {i}")
        name = render_value(kv)
        if not name:
            raise ValidationFailedError(
                f"spread key {kv!r} at row {i} has no usable name")
        if name not in key_order:
            if any(c.name == name for c in group_cols):
                raise NameCollisionError(name)
            key_order.append(name)
        if (gkey, name) in cells:
            raise DuplicateSpreadKeyError(group_rows[gkey], kv)
        cells[(gkey, name)] = value_col.values[i]

    out = []
    for j, c in enumerate(group_cols):
        out.append((c.name, c.dtype,
                    tuple(group_rows[g][j] for g in group_order)))
    for name in key_order:
        out.append((name, value_col.dtype,
                    tuple(cells.get((g, name)) for g in group_order)))
    return make_table(out)


def _group_key(v: Value):
    """Hashable grouping key: all nulls group together, as do float NaNs."""
    if v is None:
        return ("\0null",)
    if isinstance(v, float) and math.isnan(v):
        return ("\0nan",)
    return v


def _apply_group_aggregate(t: Table, tr: GroupAggregate) -> Table:
    by_cols = [t.column(n) for n in tr.by]
    out_names = list(tr.by)
    for out_name, fn, col in tr.aggs:
        if fn not in AGG_FUNCTIONS:
            raise ValidationFailedError(f"unknown aggregate {fn!r}")
        if fn == "count":
            if col is not None:
                raise ValidationFailedError("count takes no column")
        else:
            c = t.column(col)
            if fn in ("sum", "mean") and c.dtype not in (DType.INT, DType.FLOAT):
                raise ValidationFailedError(
                    f"{fn} needs a numeric column, {col!r} is {c.dtype}")
        if out_name in out_names:
            raise NameCollisionError(out_name)
        out_names.append(out_name)

    order = []
    groups = {}
    for i in range(t.n_rows):
        display = tuple(c.values[i] for c in by_cols)
        gkey = tuple(_group_key(v) for v in display)
        if gkey not in groups:
            groups[gkey] = (display, [])
            order.append(gkey)
        groups[gkey][1].append(i)

    out = []
    for j, c in enumerate(by_cols):
        out.append((c.name, c.dtype,
                    tuple(groups[g][0][j] for g in order)))
    for out_name, fn, col in tr.aggs:
        source = t.column(col) if col is not None else None
        values = tuple(
            aggregate(fn, [source.values[i] for i in groups[g][1]]
                      if source else [None] * len(groups[g][1]))
            for g in order)
        out.append((out_name, _agg_dtype(fn, source), values))
    return make_table(out)


def aggregate(fn: str, cells: list) -> Value:
    """One aggregate over a list of cells. count counts rows; the others
    skip nulls and return null for an all-null (or empty) input.
    """
    if fn == "count":
        return len(cells)
    present = [v for v in cells if v is not None]
    if not present:
        return None
    if fn == "sum":
        total = sum(present)
        if isinstance(total, int) and not isinstance(total, bool):
            from .table import INT64_MAX, INT64_MIN
            if not INT64_MIN <= total <= INT64_MAX:
                return None
        return total
    if fn == "mean":
        return float(sum(present)) / len(present)
    best = present[0]
    for v in present[1:]:
        c = compare_values(v, best)
        if (fn == "min" and c < 0) or (fn == "max" and c > 0):
            best = v
    return best


def _agg_dtype(fn: str, source: Optional[Column]) -> DType:
    if fn == "count":
        return DType.INT
    if fn == "mean":
        return DType.FLOAT
    return source.dtype


def _apply_edit_cell(t: Table, tr: EditCell) -> Table:
    return with_cell(t, tr.row, tr.col, tr.value)


def _apply_delete_rows(t: Table, tr: DeleteRows) -> Table:
    doomed = set()
    for i in tr.indices:
        if not 0 <= i < t.n_rows:
            raise ValidationFailedError(
                f"row {i} out of range for {t.n_rows} rows")
        doomed.add(i)
    return _take_rows(t, [i for i in range(t.n_rows) if i not in doomed])


def _apply_set_type(t: Table, tr: SetType) -> Table:
    col = t.column(tr.col)
    new, failures = cast_column(col, tr.dtype)
    if failures:
        logger.info("set_type %s -> %s: %d cell(s) became null",
                    tr.col, tr.dtype, failures)
    return Table(tuple(new if c.name == tr.col else c for c in t.columns))


def _take_rows(t: Table, indices: list) -> Table:
    return Table(tuple(
        Column(c.name, c.dtype, tuple(c.values[i] for i in indices))
        for c in t.columns))


_APPLIERS = {
    Filter: _apply_filter,
    Derive: _apply_derive,
    Select: _apply_select,
    Drop: _apply_drop,
    Rename: _apply_rename,
    Sort: _apply_sort,
    Fold: _apply_fold,
    Spread: _apply_spread,
    GroupAggregate: _apply_group_aggregate,
    EditCell: _apply_edit_cell,
    DeleteRows: _apply_delete_rows,
    SetType: _apply_set_type,
}


# --- script format -----------------------------------------------------------


def _value_to_json(v: Value):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, date):
        return v.isoformat()
    return v


def _step_to_json(tr: Transform) -> dict:
    if isinstance(tr, Filter):
        return {"op": "filter", "pred": tr.pred}
    if isinstance(tr, Derive):
        return {"op": "derive", "name": tr.name, "expr": tr.expr}
    if isinstance(tr, Select):
        return {"op": "select", "names": list(tr.names)}
    if isinstance(tr, Drop):
        return {"op": "drop", "names": list(tr.names)}
    if isinstance(tr, Rename):
        return {"op": "rename", "pairs": [[o, n] for o, n in tr.pairs]}
    if isinstance(tr, Sort):
        return {"op": "sort", "keys": [[n, bool(a)] for n, a in tr.keys]}
    if isinstance(tr, Fold):
        return {"op": "fold", "cols": list(tr.cols),
                "key_name": tr.key_name, "value_name": tr.value_name}
    if isinstance(tr, Spread):
        return {"op": "spread", "key_col": tr.key_col,
                "value_col": tr.value_col}
    if isinstance(tr, GroupAggregate):
        return {"op": "group_aggregate", "by": list(tr.by),
                "aggs": [[o, f, c] for o, f, c in tr.aggs]}
    if isinstance(tr, EditCell):
        return {"op": "edit_cell", "row": tr.row, "col": tr.col,
                "value": _value_to_json(tr.value)}
    if isinstance(tr, DeleteRows):
        return {"op": "delete_rows", "indices": list(tr.indices)}
    if isinstance(tr, SetType):
        return {"op": "set_type", "col": tr.col, "dtype": tr.dtype.value}
    raise TypeError(f"not a transform: {tr!r}")


def pipeline_to_doc(p: Pipeline) -> dict:
    return {"version": SCRIPT_VERSION,
            "steps": [_step_to_json(s) for s in p.steps]}


def serialize_pipeline(p: Pipeline) -> str:
    return json.dumps(pipeline_to_doc(p), separators=(",", ":"),
                      ensure_ascii=False)


def pipeline_from_doc(doc) -> Pipeline:
    if not isinstance(doc, dict):
        raise MalformedScriptError("$", "top level must be an object")
    if set(doc) != {"version", "steps"}:
        raise MalformedScriptError("$", "expected exactly version and steps")
    if doc["version"] != SCRIPT_VERSION:
        raise MalformedScriptError(
            "version", f"unsupported version {doc['version']!r}")
    if not isinstance(doc["steps"], list):
        raise MalformedScriptError("steps", "steps must be an array")
    steps = tuple(parse_step(obj, f"steps[{i}]")
                  for i, obj in enumerate(doc["steps"]))
    return Pipeline(steps)


def parse_pipeline(text: str) -> Pipeline:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedScriptError("$", str(e)) from None
    return pipeline_from_doc(doc)


def parse_step(obj, where: str) -> Transform:
    """Parse one script step object into a Transform; used both by the
    script reader and by the bridge's apply_edits payloads.
    """
    if not isinstance(obj, dict):
        raise MalformedScriptError(where, "step must be an object")
    op = obj.get("op")
    spec = _STEP_PARSERS.get(op)
    if spec is None:
        raise MalformedScriptError(where, f"unknown op {op!r}")
    fields, build = spec
    if set(obj) != {"op", *fields}:
        raise MalformedScriptError(
            where, f"{op} needs exactly fields {sorted(fields)}")
    try:
        return build(obj, where)
    except MalformedScriptError:
        raise
    except (TypeError, ValueError, KeyError) as e:
        raise MalformedScriptError(where, str(e)) from None


def _want_str(obj, key, where):
    v = obj[key]
    if not isinstance(v, str):
        raise MalformedScriptError(where, f"{key} must be a string")
    return v


def _want_str_list(obj, key, where):
    v = obj[key]
    if not isinstance(v, list) or not all(isinstance(x, str) for x in v):
        raise MalformedScriptError(where, f"{key} must be an array of strings")
    return tuple(v)


def _want_int(obj, key, where):
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise MalformedScriptError(where, f"{key} must be an integer")
    return v


def _want_scalar(obj, key, where):
    v = obj[key]
    if isinstance(v, (list, dict)):
        raise MalformedScriptError(where, f"{key} must be a scalar")
    return v


def _parse_pairs(obj, key, where):
    v = obj[key]
    if not isinstance(v, list):
        raise MalformedScriptError(where, f"{key} must be an array")
    out = []
    for item in v:
        if not (isinstance(item, list) and len(item) == 2
                and all(isinstance(x, str) for x in item)):
            raise MalformedScriptError(
                where, f"{key} entries must be [old, new] string pairs")
        out.append((item[0], item[1]))
    return tuple(out)


def _parse_sort_keys(obj, where):
    v = obj["keys"]
    if not isinstance(v, list) or not v:
        raise MalformedScriptError(where, "keys must be a non-empty array")
    out = []
    for item in v:
        if not (isinstance(item, list) and len(item) == 2
                and isinstance(item[0], str) and isinstance(item[1], bool)):
            raise MalformedScriptError(
                where, "keys entries must be [name, ascending] pairs")
        out.append((item[0], item[1]))
    return tuple(out)


def _parse_aggs(obj, where):
    v = obj["aggs"]
    if not isinstance(v, list) or not v:
        raise MalformedScriptError(where, "aggs must be a non-empty array")
    out = []
    for item in v:
        if not (isinstance(item, list) and len(item) == 3
                and isinstance(item[0], str)
                and isinstance(item[1], str)
                and (item[2] is None or isinstance(item[2], str))):
            raise MalformedScriptError(
                where, "aggs entries must be [out, fn, col] triples")
        if item[1] not in AGG_FUNCTIONS:
            raise MalformedScriptError(where, f"unknown aggregate {item[1]!r}")
        out.append((item[0], item[1], item[2]))
    return tuple(out)


def _parse_indices(obj, where):
    v = obj["indices"]
    if not isinstance(v, list) or not all(
            isinstance(x, int) and not isinstance(x, bool) for x in v):
        raise MalformedScriptError(where, "indices must be an array of integers")
    return tuple(v)


def _parse_dtype(obj, where):
    name = _want_str(obj, "dtype", where)
    try:
        return DType.parse(name)
    except ValueError:
        raise MalformedScriptError(where, f"unknown dtype {name!r}") from None


_STEP_PARSERS = {
    "filter": ({"pred"}, lambda o, w: Filter(_want_str(o, "pred", w))),
    "derive": ({"name", "expr"}, lambda o, w: Derive(
        _want_str(o, "name", w), _want_str(o, "expr", w))),
    "select": ({"names"}, lambda o, w: Select(_want_str_list(o, "names", w))),
    "drop": ({"names"}, lambda o, w: Drop(_want_str_list(o, "names", w))),
    "rename": ({"pairs"}, lambda o, w: Rename(_parse_pairs(o, "pairs", w))),
    "sort": ({"keys"}, lambda o, w: Sort(_parse_sort_keys(o, w))),
    "fold": ({"cols", "key_name", "value_name"}, lambda o, w: Fold(
        _want_str_list(o, "cols", w), _want_str(o, "key_name", w),
        _want_str(o, "value_name", w))),
    "spread": ({"key_col", "value_col"}, lambda o, w: Spread(
        _want_str(o, "key_col", w), _want_str(o, "value_col", w))),
    "group_aggregate": ({"by", "aggs"}, lambda o, w: GroupAggregate(
        _want_str_list(o, "by", w), _parse_aggs(o, w))),
    "edit_cell": ({"row", "col", "value"}, lambda o, w: EditCell(
        _want_int(o, "row", w), _want_str(o, "col", w),
        _want_scalar(o, "value", w))),
    "delete_rows": ({"indices"}, lambda o, w: DeleteRows(_parse_indices(o, w))),
    "set_type": ({"col", "dtype"}, lambda o, w: SetType(
        _want_str(o, "col", w), _parse_dtype(o, w))),
}
