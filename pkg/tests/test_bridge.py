"""Protocol envelope codec and hub state machine."""

import json
import random

import pytest

from tablehub.bridge import (
    BridgeMessage,
    ConnState,
    Hub,
    decode_message,
    encode_message,
    handle_message,
)
from tablehub.errors import (
    MalformedMessageError,
    UnknownKindError,
    UnsupportedVersionError,
)
from tablehub.exchange import AdapterSpec, DataFormat, export_table
from tablehub.session import Session, load_dataset
from tablehub.table import DType, make_table

GOLDEN_HELLO = ('{"protocol":"dsbp","version":1,"id":1,"kind":"hello",'
                '"payload":{"tool_id":"demo-bar","accepts":["column_map"],'
                '"features":[]}}')


class TestDecode:
    def test_golden_hello(self):
        m = decode_message(GOLDEN_HELLO)
        assert m == BridgeMessage(1, "hello", {
            "tool_id": "demo-bar", "accepts": ["column_map"],
            "features": []})

    def test_unsupported_version(self):
        text = GOLDEN_HELLO.replace('"version":1', '"version":2')
        with pytest.raises(UnsupportedVersionError) as e:
            decode_message(text)
        assert e.value.got == 2

    def test_unknown_kind_without_payload(self):
        with pytest.raises(UnknownKindError) as e:
            decode_message('{"protocol":"dsbp","version":1,"id":1,'
                           '"kind":"dance"}')
        assert e.value.kind == "dance"

    def test_not_json(self):
        with pytest.raises(MalformedMessageError):
            decode_message("hello there")

    def test_not_an_object(self):
        with pytest.raises(MalformedMessageError):
            decode_message("[1,2,3]")

    def test_wrong_protocol(self):
        with pytest.raises(MalformedMessageError):
            decode_message(GOLDEN_HELLO.replace("dsbp", "dsb2"))

    def test_missing_protocol(self):
        with pytest.raises(MalformedMessageError):
            decode_message('{"version":1,"id":1,"kind":"hello","payload":{}}')

    def test_version_must_be_integer(self):
        for bad in ('"1"', "true", "1.0", "null"):
            with pytest.raises(MalformedMessageError):
                decode_message(GOLDEN_HELLO.replace('"version":1',
                                                    f'"version":{bad}'))

    def test_id_must_be_positive_integer(self):
        for bad in ("0", "-1", '"1"', "true", "null"):
            with pytest.raises(MalformedMessageError):
                decode_message(GOLDEN_HELLO.replace('"id":1', f'"id":{bad}'))

    def test_missing_kind(self):
        with pytest.raises(MalformedMessageError):
            decode_message('{"protocol":"dsbp","version":1,"id":1,'
                           '"payload":{}}')

    def test_kind_must_be_string_before_kind_lookup(self):
        with pytest.raises(MalformedMessageError):
            decode_message('{"protocol":"dsbp","version":1,"id":1,'
                           '"kind":7,"payload":{}}')

    def test_extra_envelope_field(self):
        with pytest.raises(MalformedMessageError):
            decode_message(GOLDEN_HELLO[:-1] + ',"color":"red"}')

    def test_missing_payload_on_known_kind(self):
        with pytest.raises(MalformedMessageError):
            decode_message('{"protocol":"dsbp","version":1,"id":1,'
                           '"kind":"hello"}')

    def test_reply_to_must_be_positive(self):
        with pytest.raises(MalformedMessageError):
            decode_message('{"protocol":"dsbp","version":1,"id":1,'
                           '"reply_to":0,"kind":"hello","payload":'
                           '{"tool_id":"t","accepts":[],"features":[]}}')

    def test_hello_payload_shape(self):
        base = '{"protocol":"dsbp","version":1,"id":1,"kind":"hello","payload":%s}'
        for bad in ("[]", "{}",
                    '{"tool_id":"t","accepts":[]}',
                    '{"tool_id":"","accepts":[],"features":[]}',
                    '{"tool_id":"t","accepts":"csv","features":[]}',
                    '{"tool_id":"t","accepts":[1],"features":[]}',
                    '{"tool_id":"t","accepts":[],"features":[],"x":1}'):
            with pytest.raises(MalformedMessageError):
                decode_message(base % bad)

    def test_request_data_payload_shape(self):
        base = ('{"protocol":"dsbp","version":1,"id":1,'
                '"kind":"request_data","payload":%s}')
        m = decode_message(base % '{"dataset_id":"ds1"}')
        assert m.payload == {"dataset_id": "ds1"}
        m = decode_message(base % '{"dataset_id":"ds1","format":"csv"}')
        assert m.payload["format"] == "csv"
        for bad in ('{"dataset_id":5}', '{"format":"csv"}',
                    '{"dataset_id":"ds1","format":3}',
                    '{"dataset_id":"ds1","extra":true}'):
            with pytest.raises(MalformedMessageError):
                decode_message(base % bad)

    def test_apply_edits_payload_shape(self):
        base = ('{"protocol":"dsbp","version":1,"id":1,'
                '"kind":"apply_edits","payload":%s}')
        decode_message(base % '{"dataset_id":"ds1","steps":[]}')
        for bad in ('{"dataset_id":"ds1"}',
                    '{"dataset_id":"ds1","steps":{}}'):
            with pytest.raises(MalformedMessageError):
                decode_message(base % bad)

    def test_error_payload_shape(self):
        base = ('{"protocol":"dsbp","version":1,"id":1,'
                '"kind":"error","payload":%s}')
        decode_message(base % '{"code":"NotReady","detail":"x"}')
        with pytest.raises(MalformedMessageError):
            decode_message(base % '{"code":"NotReady"}')


class TestEncode:
    def test_canonical_field_order(self):
        m = BridgeMessage(3, "error", {"code": "NotReady", "detail": "x"},
                          reply_to=2)
        assert encode_message(m) == (
            '{"protocol":"dsbp","version":1,"id":3,"reply_to":2,'
            '"kind":"error","payload":{"code":"NotReady","detail":"x"}}')

    def test_reply_to_omitted_when_absent(self):
        m = BridgeMessage(1, "dataset_changed",
                          {"dataset_id": "ds1", "revision": 4})
        assert '"reply_to"' not in encode_message(m)

    def test_golden_hello_round_trips(self):
        assert encode_message(decode_message(GOLDEN_HELLO)) == GOLDEN_HELLO


# --- state machine -----------------------------------------------------------


def fresh_hub():
    s = Session(name="demo")
    t = make_table([("a", DType.INT, [1, 2, 3]),
                    ("b", DType.TEXT, ["x", "y", "z"])])
    ds_id = load_dataset(s, "sample", t)
    return Hub(s), ds_id


def msg(kind, payload, msg_id=1, reply_to=None):
    return BridgeMessage(msg_id, kind, payload, reply_to)


def hello_msg(msg_id=1, tool_id="t1", accepts=("column_map",),
              features=()):
    return msg("hello", {"tool_id": tool_id, "accepts": list(accepts),
                         "features": list(features)}, msg_id)


def ready_conn(hub, tool_id="t1", accepts=("column_map",), features=()):
    conn = hub.connect()
    out = hub.handle_message(conn, hello_msg(1, tool_id, accepts, features))
    assert out[0][1].kind == "welcome"
    return conn


class TestHello:
    def test_hello_makes_ready_and_welcomes(self):
        hub, ds_id = fresh_hub()
        conn = hub.connect()
        out = hub.handle_message(conn, hello_msg())
        assert conn.state is ConnState.READY
        [(target, reply)] = out
        assert target is conn
        assert reply.kind == "welcome"
        assert reply.reply_to == 1
        assert reply.payload["session_name"] == "demo"
        assert reply.payload["negotiated_format"] == "column_map"
        [entry] = reply.payload["datasets"]
        assert entry == {"id": ds_id, "name": "sample", "n_rows": 3,
                         "columns": [{"name": "a", "dtype": "int"},
                                     {"name": "b", "dtype": "text"}]}

    def test_unknown_accepts_are_skipped_in_negotiation(self):
        hub, _ = fresh_hub()
        conn = hub.connect()
        out = hub.handle_message(
            conn, hello_msg(accepts=("arrow-ipc", "csv")))
        assert out[0][1].payload["negotiated_format"] == "csv"

    def test_hello_with_no_usable_format(self):
        hub, _ = fresh_hub()
        conn = hub.connect()
        [(_, reply)] = hub.handle_message(
            conn, hello_msg(accepts=("arrow-ipc",)))
        assert reply.kind == "error"
        assert reply.payload["code"] == "NoCommonFormat"
        assert reply.reply_to == 1
        assert conn.state is ConnState.CONNECTED
        # the tool may try again with a usable list
        out = hub.handle_message(conn, hello_msg(msg_id=2))
        assert out[0][1].kind == "welcome"
        assert conn.state is ConnState.READY

    def test_second_hello_is_a_protocol_violation(self):
        hub, _ = fresh_hub()
        conn = ready_conn(hub, accepts=("matrix",))
        [(_, reply)] = hub.handle_message(conn, hello_msg(msg_id=2))
        assert reply.kind == "error"
        assert reply.payload["code"] == "ProtocolViolation"
        assert conn.state is ConnState.READY
        assert conn.negotiated is DataFormat.MATRIX  # unchanged

    def test_unknown_features_ignored(self):
        hub, _ = fresh_hub()
        conn = ready_conn(hub, features=("edits", "quantum"))
        assert conn.features == frozenset({"edits"})


class TestRequestData:
    def test_before_hello(self):
        hub, ds_id = fresh_hub()
        conn = hub.connect()
        [(_, reply)] = hub.handle_message(
            conn, msg("request_data", {"dataset_id": ds_id}))
        assert reply.kind == "error"
        assert reply.payload["code"] == "NotReady"
        assert reply.reply_to == 1

    def test_negotiated_format_payload(self):
        hub, ds_id = fresh_hub()
        conn = ready_conn(hub)
        [(_, reply)] = hub.handle_message(
            conn, msg("request_data", {"dataset_id": ds_id}, 2))
        assert reply.kind == "data"
        assert reply.reply_to == 2
        assert reply.payload["dataset_id"] == ds_id
        assert reply.payload["format"] == "column_map"
        assert reply.payload["payload"] == {"a": [1, 2, 3],
                                            "b": ["x", "y", "z"]}

    def test_format_override_matches_direct_export(self):
        hub, ds_id = fresh_hub()
        conn = ready_conn(hub)
        [(_, reply)] = hub.handle_message(
            conn, msg("request_data",
                      {"dataset_id": ds_id, "format": "csv"}, 2))
        current = hub.session.dataset(ds_id).current
        assert reply.payload["format"] == "csv"
        assert reply.payload["payload"] == export_table(current,
                                                        DataFormat.CSV)

    def test_unsupported_override(self):
        hub, ds_id = fresh_hub()
        conn = ready_conn(hub)
        [(_, reply)] = hub.handle_message(
            conn, msg("request_data",
                      {"dataset_id": ds_id, "format": "arrow"}, 2))
        assert reply.payload["code"] == "NoCommonFormat"

    def test_unknown_dataset(self):
        hub, _ = fresh_hub()
        conn = ready_conn(hub)
        [(_, reply)] = hub.handle_message(
            conn, msg("request_data", {"dataset_id": "ds99"}, 2))
        assert reply.payload["code"] == "UnknownDataset"

    def test_request_subscribes(self):
        hub, ds_id = fresh_hub()
        conn = ready_conn(hub)
        assert ds_id not in conn.subscribed
        hub.handle_message(conn, msg("request_data", {"dataset_id": ds_id}, 2))
        assert ds_id in conn.subscribed

    def test_adapter_applied_for_matching_base(self):
        hub, ds_id = fresh_hub()
        hub.session.adapters["t1"] = AdapterSpec(
            "t1", DataFormat.COLUMN_MAP, (("a", "value"),), "payload")
        conn = ready_conn(hub)
        [(_, reply)] = hub.handle_message(
            conn, msg("request_data", {"dataset_id": ds_id}, 2))
        assert reply.payload["payload"] == {
            "payload": {"value": [1, 2, 3], "b": ["x", "y", "z"]}}

    def test_adapter_skipped_for_other_format(self):
        hub, ds_id = fresh_hub()
        hub.session.adapters["t1"] = AdapterSpec(
            "t1", DataFormat.COLUMN_MAP, (("a", "value"),))
        conn = ready_conn(hub)
        [(_, reply)] = hub.handle_message(
            conn, msg("request_data",
                      {"dataset_id": ds_id, "format": "matrix"}, 2))
        assert reply.payload["payload"][0] == ["a", "b"]

    def test_adapter_on_empty_dataset(self):
        hub, _ = fresh_hub()
        empty_id = load_dataset(hub.session, "empty",
                                make_table([("a", DType.INT, [])]))
        hub.session.adapters["t1"] = AdapterSpec(
            "t1", DataFormat.ROW_RECORDS, (("a", "value"),))
        conn = ready_conn(hub, accepts=("row_records",))
        [(_, reply)] = hub.handle_message(
            conn, msg("request_data", {"dataset_id": empty_id}, 2))
        assert reply.kind == "data"
        assert reply.payload["payload"] == []


class TestApplyEdits:
    def test_without_edits_feature(self):
        hub, ds_id = fresh_hub()
        conn = ready_conn(hub)
        [(_, reply)] = hub.handle_message(
            conn, msg("apply_edits", {"dataset_id": ds_id, "steps": []}, 2))
        assert reply.payload["code"] == "Forbidden"

    def test_applies_and_replies(self):
        hub, ds_id = fresh_hub()
        conn = ready_conn(hub, features=("edits",))
        step = {"op": "filter", "pred": "a > 1"}
        [(_, reply)] = hub.handle_message(
            conn, msg("apply_edits", {"dataset_id": ds_id,
                                      "steps": [step]}, 2))
        assert reply.kind == "edits_applied"
        assert reply.payload == {"dataset_id": ds_id, "revision": 1}
        ds = hub.session.dataset(ds_id)
        assert ds.current.column("a").values == (2, 3)
        assert len(ds.pipeline.steps) == 1

    def test_bad_step_is_rejected_atomically(self):
        hub, ds_id = fresh_hub()
        conn = ready_conn(hub, features=("edits",))
        steps = [{"op": "filter", "pred": "a > 1"},
                 {"op": "select", "names": ["zz"]}]
        [(_, reply)] = hub.handle_message(
            conn, msg("apply_edits", {"dataset_id": ds_id,
                                      "steps": steps}, 2))
        assert reply.payload["code"] == "BadTransform"
        ds = hub.session.dataset(ds_id)
        assert ds.revision == 0
        assert ds.current.column("a").values == (1, 2, 3)

    def test_malformed_step_object(self):
        hub, ds_id = fresh_hub()
        conn = ready_conn(hub, features=("edits",))
        [(_, reply)] = hub.handle_message(
            conn, msg("apply_edits", {"dataset_id": ds_id,
                                      "steps": [{"op": "warp"}]}, 2))
        assert reply.payload["code"] == "BadTransform"

    def test_unknown_dataset(self):
        hub, _ = fresh_hub()
        conn = ready_conn(hub, features=("edits",))
        [(_, reply)] = hub.handle_message(
            conn, msg("apply_edits", {"dataset_id": "ds9", "steps": []}, 2))
        assert reply.payload["code"] == "UnknownDataset"

    def test_empty_steps_reply_without_fanout(self):
        hub, ds_id = fresh_hub()
        writer = ready_conn(hub, "writer", features=("edits",))
        watcher = ready_conn(hub, "watcher")
        hub.handle_message(watcher,
                           msg("request_data", {"dataset_id": ds_id}, 2))
        out = hub.handle_message(
            writer, msg("apply_edits", {"dataset_id": ds_id,
                                        "steps": []}, 2))
        assert [m.kind for _, m in out] == ["edits_applied"]
        assert out[0][1].payload["revision"] == 0


class TestFanOut:
    def _wire(self):
        hub, ds_id = fresh_hub()
        writer = ready_conn(hub, "writer", features=("edits",))
        sub = ready_conn(hub, "subscriber")
        unsub = ready_conn(hub, "bystander")
        sleeper = hub.connect()  # never says hello
        for c, i in ((writer, 2), (sub, 2)):
            hub.handle_message(c, msg("request_data",
                                      {"dataset_id": ds_id}, i))
        return hub, ds_id, writer, sub, unsub, sleeper

    def test_fan_out_reaches_other_subscribers_only(self):
        hub, ds_id, writer, sub, unsub, sleeper = self._wire()
        out = hub.handle_message(
            writer, msg("apply_edits",
                        {"dataset_id": ds_id,
                         "steps": [{"op": "filter", "pred": "a > 1"}]}, 3))
        by_target = {}
        for target, m in out:
            by_target.setdefault(id(target), []).append(m)
        assert [m.kind for m in by_target[id(writer)]] == ["edits_applied"]
        assert [m.kind for m in by_target[id(sub)]] == ["dataset_changed"]
        assert id(unsub) not in by_target
        assert id(sleeper) not in by_target
        note = by_target[id(sub)][0]
        assert note.payload == {"dataset_id": ds_id, "revision": 1}
        assert note.reply_to is None

    def test_outbound_ids_count_per_connection(self):
        hub, ds_id, writer, sub, _, _ = self._wire()
        out = hub.handle_message(
            writer, msg("apply_edits",
                        {"dataset_id": ds_id,
                         "steps": [{"op": "filter", "pred": "a > 1"}]}, 3))
        ids = {id(t): m.id for t, m in out}
        # writer already got welcome(1) and data(2); sub the same
        assert ids[id(writer)] == 3
        assert ids[id(sub)] == 3


class TestMisc:
    def test_error_from_tool_is_logged_not_replied(self, caplog):
        hub, _ = fresh_hub()
        conn = ready_conn(hub)
        with caplog.at_level("WARNING", logger="tablehub.bridge"):
            out = hub.handle_message(
                conn, msg("error", {"code": "NotReady", "detail": "?"}, 2))
        assert out == []
        assert any("reported error" in r.message for r in caplog.records)

    def test_hub_kinds_from_tool_are_violations(self):
        hub, ds_id = fresh_hub()
        conn = ready_conn(hub)
        for kind, payload in (
                ("welcome", {"session_name": "x", "datasets": [],
                             "negotiated_format": "csv"}),
                ("data", {"dataset_id": ds_id, "format": "csv",
                          "payload": ""}),
                ("edits_applied", {"dataset_id": ds_id, "revision": 1}),
                ("dataset_changed", {"dataset_id": ds_id, "revision": 1})):
            [(_, reply)] = hub.handle_message(
                conn, msg(kind, payload, 9))
            assert reply.payload["code"] == "ProtocolViolation"

    def test_functional_wrapper_returns_conn_and_outgoing(self):
        hub, _ = fresh_hub()
        conn = hub.connect()
        got_conn, outgoing = handle_message(hub, conn, hello_msg())
        assert got_conn is conn
        assert outgoing[0][1].kind == "welcome"

    def test_disconnect_removes_connection(self):
        hub, _ = fresh_hub()
        conn = hub.connect()
        assert id(conn) in hub.session.connections
        hub.disconnect(conn)
        assert id(conn) not in hub.session.connections


class TestHandleText:
    def test_undecodable_text_gets_error_reply(self):
        hub, _ = fresh_hub()
        conn = hub.connect()
        [(target, text)] = hub.handle_text(conn, "{nope")
        assert target is conn
        doc = json.loads(text)
        assert doc["kind"] == "error"
        assert doc["payload"]["code"] == "MalformedMessage"
        assert "reply_to" not in doc

    def test_version_and_kind_errors_have_specific_codes(self):
        hub, _ = fresh_hub()
        conn = hub.connect()
        [(_, text)] = hub.handle_text(
            conn, GOLDEN_HELLO.replace('"version":1', '"version":3'))
        assert json.loads(text)["payload"]["code"] == "UnsupportedVersion"
        [(_, text)] = hub.handle_text(
            conn, '{"protocol":"dsbp","version":1,"id":1,"kind":"moon"}')
        assert json.loads(text)["payload"]["code"] == "UnknownKind"

    def test_valid_text_round_trip(self):
        hub, ds_id = fresh_hub()
        conn = hub.connect()
        [(_, text)] = hub.handle_text(conn, GOLDEN_HELLO)
        doc = json.loads(text)
        assert doc["kind"] == "welcome"
        assert doc["reply_to"] == 1

    def test_fuzzed_garbage_never_raises(self):
        hub, _ = fresh_hub()
        conn = hub.connect()
        rng = random.Random(4242)
        alphabet = '{}[]":,abcdsbp1 \n\\'
        for _ in range(500):
            text = "".join(rng.choice(alphabet)
                           for _ in range(rng.randint(0, 40)))
            out = hub.handle_text(conn, text)
            for _target, reply in out:
                assert json.loads(reply)["kind"] == "error"

    def test_fuzzed_near_valid_envelopes_never_raise(self):
        hub, ds_id = fresh_hub()
        conn = hub.connect()
        rng = random.Random(777)
        kinds = ["hello", "request_data", "apply_edits", "data", "dance"]
        for _ in range(500):
            doc = {"protocol": rng.choice(["dsbp", "x"]),
                   "version": rng.choice([1, 2, "1"]),
                   "id": rng.choice([1, 0, -5, "7"]),
                   "kind": rng.choice(kinds),
                   "payload": rng.choice([{}, [], 4, {"dataset_id": ds_id},
                                          {"tool_id": "t", "accepts": [],
                                           "features": []}])}
            if rng.random() < 0.3:
                doc.pop(rng.choice(list(doc)))
            hub.handle_text(conn, json.dumps(doc))
