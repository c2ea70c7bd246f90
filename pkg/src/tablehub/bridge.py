"""The "dsbp" message protocol between the hub and isolated tools.

One JSON document per message, versioned envelope, closed kind set. Tools
introduce themselves with hello (declaring which data formats they accept
and whether they intend to write edits back), then pull data on demand and
get change notifications so they can re-pull. The hub never pushes payloads
unasked.

Everything here is transport-agnostic: handle_message maps one inbound
message to a list of (target connection, outbound message) pairs, and the
caller moves the bytes.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from . import session as session_mod
from .errors import (
    MalformedMessageError,
    MalformedScriptError,
    TableHubError,
    UnknownDatasetError,
    UnknownKindError,
    UnsupportedVersionError,
)
from .exchange import ALL_FORMATS, DataFormat, apply_adapter, export_table
from .transform import parse_step

logger = logging.getLogger(__name__)

PROTOCOL = "dsbp"
VERSION = 1

KINDS = frozenset({
    "hello", "welcome", "request_data", "data",
    "apply_edits", "edits_applied", "dataset_changed", "error",
})

# Tool-facing error codes. The first five are the stable v1 set; the rest
# cover protocol misuse and undecodable input.
NOT_READY = "NotReady"
NO_COMMON_FORMAT = "NoCommonFormat"
UNKNOWN_DATASET = "UnknownDataset"
FORBIDDEN = "Forbidden"
BAD_TRANSFORM = "BadTransform"
PROTOCOL_VIOLATION = "ProtocolViolation"
MALFORMED_MESSAGE = "MalformedMessage"
UNSUPPORTED_VERSION = "UnsupportedVersion"
UNKNOWN_KIND = "UnknownKind"

KNOWN_FEATURES = frozenset({"edits"})


@dataclass(frozen=True)
class BridgeMessage:
    id: int
    kind: str
    payload: object
    reply_to: Optional[int] = None


class ConnState(Enum):
    CONNECTED = "connected"
    READY = "ready"


class ToolConn:
    """Hub-side record of one tool connection."""

    def __init__(self, key=None):
        self.key = key
        self.tool_id: Optional[str] = None
        self.state = ConnState.CONNECTED
        self.accepts: tuple = ()
        self.features: frozenset = frozenset()
        self.subscribed: set = set()
        self.negotiated: Optional[DataFormat] = None
        self._out_id = 0

    def next_out_id(self) -> int:
        self._out_id += 1
        return self._out_id


# --- encode / decode ------------------------------------------------------


def encode_message(m: BridgeMessage) -> str:
    doc = {"protocol": PROTOCOL, "version": VERSION, "id": m.id}
    if m.reply_to is not None:
        doc["reply_to"] = m.reply_to
    doc["kind"] = m.kind
    doc["payload"] = m.payload
    return json.dumps(doc, separators=(",", ":"), ensure_ascii=False)


def decode_message(text: str) -> BridgeMessage:
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, TypeError) as e:
        raise MalformedMessageError(f"invalid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise MalformedMessageError("message must be an object")
    if doc.get("protocol") != PROTOCOL:
        raise MalformedMessageError(
            f"protocol must be {PROTOCOL!r}, got {doc.get('protocol')!r}")
    version = doc.get("version")
    if not _is_int(version):
        raise MalformedMessageError("version must be an integer")
    if version != VERSION:
        raise UnsupportedVersionError(version)
    msg_id = doc.get("id")
    if not _is_int(msg_id) or msg_id < 1:
        raise MalformedMessageError("id must be a positive integer")
    kind = doc.get("kind")
    if not isinstance(kind, str):
        raise MalformedMessageError("kind must be a string")
    if kind not in KINDS:
        raise UnknownKindError(kind)
    extra = set(doc) - {"protocol", "version", "id", "reply_to", "kind",
                        "payload"}
    if extra:
        raise MalformedMessageError(
            f"unexpected fields {sorted(extra)}")
    reply_to = doc.get("reply_to")
    if reply_to is not None and (not _is_int(reply_to) or reply_to < 1):
        raise MalformedMessageError("reply_to must be a positive integer")
    if "payload" not in doc:
        raise MalformedMessageError("payload is required")
    payload = doc["payload"]
    _PAYLOAD_CHECKS[kind](payload)
    return BridgeMessage(msg_id, kind, payload, reply_to)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _want_object(payload, kind, required, optional=frozenset()):
    if not isinstance(payload, dict):
        raise MalformedMessageError(f"{kind} payload must be an object")
    keys = set(payload)
    missing = required - keys
    extra = keys - required - optional
    if missing:
        raise MalformedMessageError(
            f"{kind} payload missing {sorted(missing)}")
    if extra:
        raise MalformedMessageError(
            f"{kind} payload has unexpected {sorted(extra)}")


def _check_hello(p):
    _want_object(p, "hello", {"tool_id", "accepts", "features"})
    if not isinstance(p["tool_id"], str) or not p["tool_id"]:
        raise MalformedMessageError("hello.tool_id must be a non-empty string")
    for key in ("accepts", "features"):
        if not isinstance(p[key], list) or not all(
                isinstance(x, str) for x in p[key]):
            raise MalformedMessageError(
                f"hello.{key} must be an array of strings")


def _check_welcome(p):
    _want_object(p, "welcome", {"session_name", "datasets",
                                "negotiated_format"})
    if not isinstance(p["session_name"], str):
        raise MalformedMessageError("welcome.session_name must be a string")
    if not isinstance(p["datasets"], list):
        raise MalformedMessageError("welcome.datasets must be an array")
    if not isinstance(p["negotiated_format"], str):
        raise MalformedMessageError(
            "welcome.negotiated_format must be a string")


def _check_request_data(p):
    _want_object(p, "request_data", {"dataset_id"}, {"format"})
    if not isinstance(p["dataset_id"], str):
        raise MalformedMessageError("request_data.dataset_id must be a string")
    if "format" in p and not isinstance(p["format"], str):
        raise MalformedMessageError("request_data.format must be a string")


def _check_data(p):
    _want_object(p, "data", {"dataset_id", "format", "payload"})
    if not isinstance(p["dataset_id"], str):
        raise MalformedMessageError("data.dataset_id must be a string")
    if not isinstance(p["format"], str):
        raise MalformedMessageError("data.format must be a string")


def _check_apply_edits(p):
    _want_object(p, "apply_edits", {"dataset_id", "steps"})
    if not isinstance(p["dataset_id"], str):
        raise MalformedMessageError("apply_edits.dataset_id must be a string")
    if not isinstance(p["steps"], list):
        raise MalformedMessageError("apply_edits.steps must be an array")


def _check_revision(kind):
    def check(p):
        _want_object(p, kind, {"dataset_id", "revision"})
        if not isinstance(p["dataset_id"], str):
            raise MalformedMessageError(f"{kind}.dataset_id must be a string")
        if not _is_int(p["revision"]):
            raise MalformedMessageError(f"{kind}.revision must be an integer")
    return check


def _check_error(p):
    _want_object(p, "error", {"code", "detail"})
    if not isinstance(p["code"], str) or not isinstance(p["detail"], str):
        raise MalformedMessageError("error.code and .detail must be strings")


_PAYLOAD_CHECKS = {
    "hello": _check_hello,
    "welcome": _check_welcome,
    "request_data": _check_request_data,
    "data": _check_data,
    "apply_edits": _check_apply_edits,
    "edits_applied": _check_revision("edits_applied"),
    "dataset_changed": _check_revision("dataset_changed"),
    "error": _check_error,
}


# --- hub state machine ------------------------------------------------------


class Hub:
    """Serialization point for one session: decodes, dispatches, replies.

    Not thread-safe by itself; callers with concurrent transports must
    serialize calls (the socket server holds one lock per hub).
    """

    def __init__(self, session: session_mod.Session):
        self.session = session

    def connect(self, key=None) -> ToolConn:
        conn = ToolConn(key)
        self.session.connections[id(conn)] = conn
        return conn

    def disconnect(self, conn: ToolConn) -> None:
        self.session.connections.pop(id(conn), None)

    def handle_text(self, conn: ToolConn, text: str):
        """Decode, dispatch, encode. Never raises on bad input; undecodable
        messages get an error reply on the same connection.
        """
        try:
            m = decode_message(text)
        except UnsupportedVersionError as e:
            return self._encoded(self._error(
                conn, UNSUPPORTED_VERSION, str(e), None))
        except UnknownKindError as e:
            return self._encoded(self._error(conn, UNKNOWN_KIND, str(e), None))
        except MalformedMessageError as e:
            return self._encoded(self._error(
                conn, MALFORMED_MESSAGE, str(e), None))
        return [(target, encode_message(msg))
                for target, msg in self.handle_message(conn, m)]

    def _encoded(self, outgoing):
        return [(target, encode_message(msg)) for target, msg in outgoing]

    def handle_message(self, conn: ToolConn, m: BridgeMessage):
        """One decoded inbound message to a list of (target, message)."""
        if m.kind == "hello":
            return self._on_hello(conn, m)
        if m.kind == "error":
            logger.warning("tool %s reported error: %s", conn.tool_id,
                           m.payload)
            return []
        if conn.state is not ConnState.READY:
            return self._error(conn, NOT_READY,
                               f"{m.kind} before hello", m.id)
        if m.kind == "request_data":
            return self._on_request_data(conn, m)
        if m.kind == "apply_edits":
            return self._on_apply_edits(conn, m)
        return self._error(conn, PROTOCOL_VIOLATION,
                           f"unexpected {m.kind} from a tool", m.id)

    # -- per-kind handlers --

    def _on_hello(self, conn: ToolConn, m: BridgeMessage):
        if conn.state is ConnState.READY:
            return self._error(conn, PROTOCOL_VIOLATION,
                               "hello already received", m.id)
        accepts = tuple(
            f for f in (DataFormat.parse(name) for name in
                        m.payload["accepts"])
            if f is not None and f in ALL_FORMATS)
        if not accepts:
            return self._error(
                conn, NO_COMMON_FORMAT,
                f"no supported format among {m.payload['accepts']!r}", m.id)
        conn.tool_id = m.payload["tool_id"]
        conn.accepts = accepts
        conn.features = frozenset(m.payload["features"]) & KNOWN_FEATURES
        conn.negotiated = accepts[0]
        conn.state = ConnState.READY
        datasets = [
            {"id": ds.id, "name": ds.name, "n_rows": ds.current.n_rows,
             "columns": [{"name": n, "dtype": d.value}
                         for n, d in ds.current.schema()]}
            for ds in self.session.datasets.values()
        ]
        payload = {"session_name": self.session.name, "datasets": datasets,
                   "negotiated_format": conn.negotiated.value}
        return [(conn, self._message(conn, "welcome", payload, m.id))]

    def _on_request_data(self, conn: ToolConn, m: BridgeMessage):
        try:
            ds = self.session.dataset(m.payload["dataset_id"])
        except UnknownDatasetError as e:
            return self._error(conn, UNKNOWN_DATASET, str(e), m.id)
        fmt = conn.negotiated
        if "format" in m.payload:
            fmt = DataFormat.parse(m.payload["format"])
            if fmt is None:
                return self._error(
                    conn, NO_COMMON_FORMAT,
                    f"unsupported format {m.payload['format']!r}", m.id)
        payload_doc = export_table(ds.current, fmt)
        adapter = self.session.adapters.get(conn.tool_id)
        if adapter is not None and adapter.base is fmt:
            payload_doc = apply_adapter(payload_doc, adapter)
        conn.subscribed.add(ds.id)
        data = {"dataset_id": ds.id, "format": fmt.value,
                "payload": payload_doc}
        return [(conn, self._message(conn, "data", data, m.id))]

    def _on_apply_edits(self, conn: ToolConn, m: BridgeMessage):
        if "edits" not in conn.features:
            return self._error(conn, FORBIDDEN,
                               "connection did not declare the edits feature",
                               m.id)
        dataset_id = m.payload["dataset_id"]
        try:
            ds = self.session.dataset(dataset_id)
        except UnknownDatasetError as e:
            return self._error(conn, UNKNOWN_DATASET, str(e), m.id)
        before = ds.revision
        try:
            steps = [parse_step(obj, f"steps[{i}]")
                     for i, obj in enumerate(m.payload["steps"])]
            revision = session_mod.apply_steps(self.session, dataset_id, steps)
        except (MalformedScriptError, TableHubError) as e:
            return self._error(conn, BAD_TRANSFORM, str(e), m.id)
        out = [(conn, self._message(
            conn, "edits_applied",
            {"dataset_id": dataset_id, "revision": revision}, m.id))]
        if revision != before:
            out.extend(self.notify_changed(dataset_id, revision,
                                           exclude=conn))
        return out

    def notify_changed(self, dataset_id: str, revision: int, exclude=None):
        """dataset_changed to every Ready connection subscribed to the
        dataset, except the originator.
        """
        out = []
        for other in self.session.connections.values():
            if other is exclude or other.state is not ConnState.READY:
                continue
            if dataset_id not in other.subscribed:
                continue
            out.append((other, self._message(
                other, "dataset_changed",
                {"dataset_id": dataset_id, "revision": revision}, None)))
        return out

    # -- message construction --

    def _message(self, conn: ToolConn, kind: str, payload,
                 reply_to: Optional[int]) -> BridgeMessage:
        return BridgeMessage(conn.next_out_id(), kind, payload, reply_to)

    def _error(self, conn: ToolConn, code: str, detail: str,
               reply_to: Optional[int]):
        return [(conn, self._message(conn, "error",
                                     {"code": code, "detail": detail},
                                     reply_to))]


def handle_message(hub: Hub, conn: ToolConn, m: BridgeMessage):
    """Functional face of Hub.handle_message: (updated conn, outgoing)."""
    outgoing = hub.handle_message(conn, m)
    return conn, outgoing
