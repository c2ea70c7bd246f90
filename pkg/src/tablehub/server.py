"""Socket binding for the hub: one process serving two endpoints.

`/` speaks the bridge protocol, one JSON text message per frame; this is
what tools connect to. `/shell` is a small request/response control surface
for host shells driving the session (load data, apply steps, undo, pivot)
without embedding the engine. Mutations from either endpoint fan out
dataset_changed notifications to subscribed bridge connections.

All session access is funneled through one lock; connections run on
whatever threads the transport provides.
"""

from __future__ import annotations

import json
import logging
import threading

from . import session as session_mod
from .bridge import Hub, ToolConn, encode_message
from .errors import TableHubError
from .exchange import DataFormat, export_table
from .ingest import Dialect, finalize, parse_delimited, sniff_dialect
from .pivot import PivotSpec, pivot, pivot_to_table
from .transform import parse_step, serialize_pipeline

logger = logging.getLogger(__name__)


class HubServer:
    """Session + hub + delivery plumbing shared by all connections."""

    def __init__(self, session=None):
        self.session = session if session is not None else session_mod.Session()
        self.hub = Hub(self.session)
        self.lock = threading.Lock()

    # -- bridge endpoint --

    def run_bridge(self, ws) -> None:
        with self.lock:
            conn = self.hub.connect(key=ws)
        try:
            for text in _messages(ws):
                with self.lock:
                    outgoing = self.hub.handle_text(conn, text)
                _deliver(outgoing)
        finally:
            with self.lock:
                self.hub.disconnect(conn)

    # -- shell endpoint --

    def run_shell(self, ws) -> None:
        for text in _messages(ws):
            try:
                req = json.loads(text)
                if not isinstance(req, dict) or not isinstance(
                        req.get("op"), str):
                    raise ValueError("request must be an object with an op")
                with self.lock:
                    reply, notify = self._shell_op(req)
            except TableHubError as e:
                reply, notify = _shell_error(type(e).__name__, str(e)), []
            except (ValueError, KeyError, TypeError) as e:
                reply, notify = _shell_error("BadRequest", str(e)), []
            ws.send(json.dumps(reply, separators=(",", ":"),
                               ensure_ascii=False))
            _deliver(notify)

    def _shell_op(self, req: dict):
        op = req["op"]
        handler = _SHELL_OPS.get(op)
        if handler is None:
            return _shell_error("UnknownOp", f"unknown op {op!r}"), []
        return handler(self, req)

    # -- individual ops; each returns (reply document, notifications) --

    def _op_load_csv(self, req):
        text = _field(req, "text", str)
        name = _field(req, "name", str)
        dialect = sniff_dialect(text)
        if "delimiter" in req:
            dialect = Dialect(_field(req, "delimiter", str),
                              has_header=dialect.has_header)
        if "has_header" in req:
            dialect = Dialect(dialect.delimiter,
                              has_header=bool(req["has_header"]))
        raw = parse_delimited(text, dialect)
        table = finalize(raw)
        dataset_id = session_mod.load_dataset(self.session, name, table)
        return {"ok": True, "dataset_id": dataset_id, "revision": 0}, []

    def _op_load_json(self, req):
        from .ingest import parse_structured
        table = parse_structured(_field(req, "text", str))
        dataset_id = session_mod.load_dataset(
            self.session, _field(req, "name", str), table)
        return {"ok": True, "dataset_id": dataset_id, "revision": 0}, []

    def _op_list_datasets(self, req):
        datasets = [
            {"id": ds.id, "name": ds.name, "n_rows": ds.current.n_rows,
             "revision": ds.revision,
             "columns": [{"name": n, "dtype": d.value}
                         for n, d in ds.current.schema()]}
            for ds in self.session.datasets.values()
        ]
        return {"ok": True, "datasets": datasets}, []

    def _op_get_table(self, req):
        ds = self.session.dataset(_field(req, "dataset_id", str))
        fmt = DataFormat.parse(req.get("format", "column_map"))
        if fmt is None:
            return _shell_error("NoCommonFormat",
                                f"unsupported format {req.get('format')!r}"), []
        return {"ok": True, "revision": ds.revision, "format": fmt.value,
                "payload": export_table(ds.current, fmt)}, []

    def _op_apply_step(self, req):
        dataset_id = _field(req, "dataset_id", str)
        step = parse_step(req.get("step"), "step")
        revision = session_mod.apply_step(self.session, dataset_id, step)
        return {"ok": True, "revision": revision}, self._notify(
            dataset_id, revision)

    def _op_undo(self, req):
        dataset_id = _field(req, "dataset_id", str)
        revision, applied = session_mod.undo(self.session, dataset_id)
        notify = self._notify(dataset_id, revision) if applied else []
        return {"ok": True, "revision": revision, "applied": applied}, notify

    def _op_redo(self, req):
        dataset_id = _field(req, "dataset_id", str)
        revision, applied = session_mod.redo(self.session, dataset_id)
        notify = self._notify(dataset_id, revision) if applied else []
        return {"ok": True, "revision": revision, "applied": applied}, notify

    def _notify(self, dataset_id: str, revision: int):
        # notify_changed yields decoded messages; the wire wants text
        return [(target, encode_message(m))
                for target, m in self.hub.notify_changed(dataset_id, revision)]

    def _op_get_script(self, req):
        ds = self.session.dataset(_field(req, "dataset_id", str))
        return {"ok": True, "script": serialize_pipeline(ds.pipeline)}, []

    def _op_pivot(self, req):
        ds = self.session.dataset(_field(req, "dataset_id", str))
        spec = req.get("spec")
        if not isinstance(spec, dict):
            raise ValueError("spec must be an object")
        ps = PivotSpec(
            row_dims=tuple(spec.get("row_dims", ())),
            col_dims=tuple(spec.get("col_dims", ())),
            measure=spec.get("measure"),
            agg=spec.get("agg", "count"),
            totals=bool(spec.get("totals", False)))
        flat = pivot_to_table(pivot(ds.current, ps))
        return {"ok": True,
                "payload": export_table(flat, DataFormat.COLUMN_MAP)}, []

    def _op_save_project(self, req):
        return {"ok": True,
                "project": session_mod.save_project(self.session)}, []


_SHELL_OPS = {
    "load_csv": HubServer._op_load_csv,
    "load_json": HubServer._op_load_json,
    "list_datasets": HubServer._op_list_datasets,
    "get_table": HubServer._op_get_table,
    "apply_step": HubServer._op_apply_step,
    "undo": HubServer._op_undo,
    "redo": HubServer._op_redo,
    "get_script": HubServer._op_get_script,
    "pivot": HubServer._op_pivot,
    "save_project": HubServer._op_save_project,
}


def _field(req: dict, key: str, want: type):
    v = req.get(key)
    if not isinstance(v, want):
        raise ValueError(f"{key} must be {want.__name__}")
    return v


def _shell_error(code: str, detail: str) -> dict:
    return {"ok": False, "error": {"code": code, "detail": detail}}


def _messages(ws):
    from websockets.exceptions import ConnectionClosed
    while True:
        try:
            text = ws.recv()
        except ConnectionClosed:
            return
        if isinstance(text, bytes):
            text = text.decode("utf-8", errors="replace")
        yield text


def _deliver(outgoing) -> None:
    from websockets.exceptions import ConnectionClosed
    for target, payload in outgoing:
        ws = target.key if isinstance(target, ToolConn) else target
        if ws is None:
            continue
        try:
            ws.send(payload)
        except ConnectionClosed:
            logger.info("dropped message to closed connection")


def serve_forever(port: int, session=None, ready=None) -> None:
    """Run the hub on localhost:port until the process is interrupted.

    `ready` is an optional threading.Event set once the socket is bound,
    for tests that need to know when to connect.
    """
    from websockets.sync.server import serve

    hub_server = HubServer(session)

    def handler(ws):
        path = ws.request.path if ws.request is not None else "/"
        if path.startswith("/shell"):
            hub_server.run_shell(ws)
        else:
            hub_server.run_bridge(ws)

    with serve(handler, "127.0.0.1", port) as server:
        if ready is not None:
            ready.set()
        logger.info("serving on ws://127.0.0.1:%d", port)
        server.serve_forever()
