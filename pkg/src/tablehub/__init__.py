"""tablehub: a columnar data hub for pluggable table tools.

One engine owns the data (typed null-aware columns, wrangling pipelines,
pivot, undo); tools stay isolated and talk to it over a small versioned
message protocol, requesting data in whichever format they prefer.
"""

from .errors import TableHubError
from .exchange import AdapterSpec, DataFormat, export_table, negotiate_format
from .ingest import (
    Dialect,
    RawTable,
    finalize,
    infer_dtype,
    parse_delimited,
    parse_structured,
    sniff_dialect,
)
from .pivot import PivotResult, PivotSpec, pivot, pivot_to_table
from .table import (
    Column,
    DType,
    Table,
    Value,
    cast_column,
    get_cell,
    make_table,
    with_cell,
)
from .transform import (
    Pipeline,
    Transform,
    apply_pipeline,
    apply_transform,
    parse_pipeline,
    serialize_pipeline,
)

__version__ = "0.1.0"

__all__ = [
    "AdapterSpec",
    "Column",
    "DType",
    "DataFormat",
    "Dialect",
    "Pipeline",
    "PivotResult",
    "PivotSpec",
    "RawTable",
    "Table",
    "TableHubError",
    "Transform",
    "Value",
    "apply_pipeline",
    "apply_transform",
    "cast_column",
    "export_table",
    "finalize",
    "get_cell",
    "infer_dtype",
    "make_table",
    "negotiate_format",
    "parse_delimited",
    "parse_pipeline",
    "parse_structured",
    "pivot",
    "pivot_to_table",
    "serialize_pipeline",
    "sniff_dialect",
    "with_cell",
    "__version__",
]
