"""Shared helpers: seeded table generators and value-wise comparison.

Generated tables steer clear of values the textual boundary normalizes
away (empty-string text, NaN, infinities) unless a test asks for them;
those cases get their own targeted tests.
"""

import math
import random
import string
from datetime import date, timedelta

from tablehub.table import Column, DType, Table, make_table

# Text alphabet with no digits and no date shape, so inference can never
# mistake generated text for another dtype.
_TEXT_ALPHABET = string.ascii_letters + " _@#"


def gen_value(rng: random.Random, dtype: DType, null_rate: float = 0.15):
    if rng.random() < null_rate:
        return None
    if dtype is DType.INT:
        return rng.randint(-10_000, 10_000)
    if dtype is DType.FLOAT:
        return round(rng.uniform(-1e6, 1e6), rng.randint(0, 6))
    if dtype is DType.BOOL:
        return rng.random() < 0.5
    if dtype is DType.DATE:
        return date(2020, 1, 1) + timedelta(days=rng.randint(0, 2000))
    return "".join(rng.choice(_TEXT_ALPHABET)
                   for _ in range(rng.randint(1, 12)))


def gen_table(rng: random.Random, max_rows: int = 50, max_cols: int = 6,
              null_rate: float = 0.15, dtypes=None) -> Table:
    n_rows = rng.randint(0, max_rows)
    n_cols = rng.randint(1, max_cols)
    pool = dtypes or list(DType)
    columns = []
    for i in range(n_cols):
        dtype = rng.choice(pool)
        values = tuple(gen_value(rng, dtype, null_rate)
                       for _ in range(n_rows))
        columns.append((f"c{i + 1}", dtype, values))
    return make_table(columns)


def values_equal(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    if isinstance(a, float) and isinstance(b, float):
        if math.isnan(a) and math.isnan(b):
            return True
    return a == b and type(a) is type(b)


def tables_equal(a: Table, b: Table) -> bool:
    """Value-wise equality: same names, dtypes, and cells in order."""
    if a.column_names != b.column_names or a.n_rows != b.n_rows:
        return False
    for ca, cb in zip(a.columns, b.columns):
        if ca.dtype is not cb.dtype:
            return False
        if not all(values_equal(x, y) for x, y in zip(ca.values, cb.values)):
            return False
    return True


def table_diff(a: Table, b: Table) -> str:
    """First difference, for assertion messages."""
    if a.column_names != b.column_names:
        return f"columns {a.column_names} != {b.column_names}"
    if a.n_rows != b.n_rows:
        return f"n_rows {a.n_rows} != {b.n_rows}"
    for ca, cb in zip(a.columns, b.columns):
        if ca.dtype is not cb.dtype:
            return f"{ca.name}: dtype {ca.dtype} != {cb.dtype}"
        for i, (x, y) in enumerate(zip(ca.values, cb.values)):
            if not values_equal(x, y):
                return f"{ca.name}[{i}]: {x!r} != {y!r}"
    return "equal"
