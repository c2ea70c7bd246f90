"""Host-side state: loaded datasets, their provenance pipelines, undo/redo,
and project persistence.

A dataset is never mutated in place. Its `current` table is always the
result of applying the pipeline to the untouched base, so the pipeline is a
complete, replayable record of everything that happened to the data. Undo
and redo move between pipeline snapshots and rematerialize.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import (
    MalformedProjectError,
    MalformedScriptError,
    TableHubError,
    UnknownDatasetError,
)
from .exchange import DataFormat, export_table
from .ingest import Dialect, finalize, parse_delimited
from .table import DType, Table
from .transform import (
    Pipeline,
    Transform,
    apply_pipeline,
    apply_transform,
    pipeline_from_doc,
    pipeline_to_doc,
)

PROJECT_VERSION = 1
UNDO_DEPTH = 100


@dataclass
class Dataset:
    id: str
    name: str
    base: Table
    pipeline: Pipeline
    current: Table
    revision: int = 0


@dataclass
class Session:
    name: str = "untitled"
    datasets: dict = field(default_factory=dict)        # id -> Dataset
    undo_stacks: dict = field(default_factory=dict)     # id -> [Pipeline]
    redo_stacks: dict = field(default_factory=dict)
    connections: dict = field(default_factory=dict)     # conn key -> ToolConn
    adapters: dict = field(default_factory=dict)        # tool_id -> AdapterSpec
    _next_id: int = 1

    def dataset(self, dataset_id: str) -> Dataset:
        ds = self.datasets.get(dataset_id)
        if ds is None:
            raise UnknownDatasetError(dataset_id)
        return ds


def load_dataset(s: Session, name: str, t: Table) -> str:
    dataset_id = f"ds{s._next_id}"
    s._next_id += 1
    s.datasets[dataset_id] = Dataset(dataset_id, name, t, Pipeline(), t)
    s.undo_stacks[dataset_id] = []
    s.redo_stacks[dataset_id] = []
    return dataset_id


def apply_step(s: Session, dataset_id: str, tr: Transform) -> int:
    ds = s.dataset(dataset_id)
    new_current = apply_transform(ds.current, tr)  # raises before any change
    undo = s.undo_stacks[dataset_id]
    undo.append(ds.pipeline)
    if len(undo) > UNDO_DEPTH:
        del undo[0]
    s.redo_stacks[dataset_id].clear()
    ds.pipeline = ds.pipeline.extended(tr)
    ds.current = new_current
    ds.revision += 1
    return ds.revision


def apply_steps(s: Session, dataset_id: str, steps) -> int:
    """All-or-nothing batch of steps; on failure the dataset and its
    undo/redo stacks are exactly as before.
    """
    ds = s.dataset(dataset_id)
    snapshot = (ds.pipeline, ds.current, ds.revision,
                list(s.undo_stacks[dataset_id]),
                list(s.redo_stacks[dataset_id]))
    try:
        for tr in steps:
            apply_step(s, dataset_id, tr)
    except TableHubError:
        (ds.pipeline, ds.current, ds.revision,
         s.undo_stacks[dataset_id], s.redo_stacks[dataset_id]) = snapshot
        raise
    return ds.revision


def undo(s: Session, dataset_id: str):
    """Returns (revision, applied). A no-op undo (nothing left to undo)
    leaves the revision alone and reports applied=False.
    """
    ds = s.dataset(dataset_id)
    stack = s.undo_stacks[dataset_id]
    if not stack:
        return ds.revision, False
    s.redo_stacks[dataset_id].append(ds.pipeline)
    ds.pipeline = stack.pop()
    ds.current = apply_pipeline(ds.base, ds.pipeline)
    ds.revision += 1
    return ds.revision, True


def redo(s: Session, dataset_id: str):
    ds = s.dataset(dataset_id)
    stack = s.redo_stacks[dataset_id]
    if not stack:
        return ds.revision, False
    s.undo_stacks[dataset_id].append(ds.pipeline)
    ds.pipeline = stack.pop()
    ds.current = apply_pipeline(ds.base, ds.pipeline)
    ds.revision += 1
    return ds.revision, True


# --- project persistence ------------------------------------------------


def save_project(s: Session) -> str:
    datasets = []
    for ds in s.datasets.values():
        datasets.append({
            "name": ds.name,
            "schema": [{"name": n, "dtype": d.value}
                       for n, d in ds.base.schema()],
            "base_csv": export_table(ds.base, DataFormat.CSV),
            "pipeline": pipeline_to_doc(ds.pipeline),
        })
    doc = {"version": PROJECT_VERSION, "datasets": datasets}
    return json.dumps(doc, separators=(",", ":"), ensure_ascii=False)


def load_project(text: str) -> Session:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedProjectError(str(e)) from None
    if not isinstance(doc, dict) or set(doc) != {"version", "datasets"}:
        raise MalformedProjectError("expected exactly version and datasets")
    if doc["version"] != PROJECT_VERSION:
        raise MalformedProjectError(
            f"unsupported version {doc['version']!r}")
    if not isinstance(doc["datasets"], list):
        raise MalformedProjectError("datasets must be an array")
    s = Session()
    for i, entry in enumerate(doc["datasets"]):
        where = f"datasets[{i}]"
        ds_id = load_dataset(s, *_load_entry(entry, where))
        ds = s.datasets[ds_id]
        try:
            pipeline = pipeline_from_doc(entry["pipeline"])
            ds.current = apply_pipeline(ds.base, pipeline)
        except (MalformedScriptError, TableHubError) as e:
            raise MalformedProjectError(f"{where}: {e}") from e
        ds.pipeline = pipeline
    return s


def _load_entry(entry, where: str):
    if not isinstance(entry, dict) or set(entry) != {
            "name", "schema", "base_csv", "pipeline"}:
        raise MalformedProjectError(
            f"{where}: expected exactly name, schema, base_csv, pipeline")
    if not isinstance(entry["name"], str):
        raise MalformedProjectError(f"{where}: name must be a string")
    if not isinstance(entry["base_csv"], str):
        raise MalformedProjectError(f"{where}: base_csv must be a string")
    schema = _load_schema(entry["schema"], where)
    try:
        raw = parse_delimited(entry["base_csv"],
                              Dialect(delimiter=",", has_header=True))
        base = finalize(raw, schema)
    except TableHubError as e:
        raise MalformedProjectError(f"{where}: {e}") from e
    return entry["name"], base


def _load_schema(schema, where: str):
    if not isinstance(schema, list):
        raise MalformedProjectError(f"{where}: schema must be an array")
    out = []
    for col in schema:
        if not isinstance(col, dict) or set(col) != {"name", "dtype"}:
            raise MalformedProjectError(
                f"{where}: schema entries need exactly name and dtype")
        if not isinstance(col["name"], str) or not isinstance(
                col["dtype"], str):
            raise MalformedProjectError(
                f"{where}: schema names and dtypes must be strings")
        try:
            dtype = DType.parse(col["dtype"])
        except ValueError:
            raise MalformedProjectError(
                f"{where}: unknown dtype {col['dtype']!r}") from None
        out.append((col["name"], dtype))
    return out
