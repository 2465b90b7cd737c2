"""
Unit tests for the VICOS object layer
"""

import itertools

import pytest

from src.core.ads import ABORT
from src.core.codec import DecodeError
from src.core.crypto import SHA256
from src.protocol.client import AlarmKind, FaultAlarm
from src.storage.cos import InMemoryCos
from src.storage.vicos import (HASH_CHUNK_BYTES, NONCE_BYTES, ObjectRecord,
                               ObjectTooLargeError, VicosClient, VicosError,
                               VicosSession, drive_task, parse_physical_key,
                               physical_key)


def counting_nonces():
    counter = itertools.count(1)
    return lambda: next(counter).to_bytes(NONCE_BYTES, "big")


@pytest.fixture
def cos():
    return InMemoryCos()


@pytest.fixture
def session(cos, test_config):
    return VicosSession(cos, SHA256, test_config, counting_nonces())


@pytest.fixture
def invoke(network):
    return lambda op: network.run(1, op)


class LoopbackConnection:
    """Blocking invoke over a loopback network, as VicosClient expects."""

    def __init__(self, network, client_id):
        self.network = network
        self.client = network.client(client_id)

    def invoke(self, op):
        return self.network.run(self.client.client_id, op)


class TestVicosSession:
    """Test cases for VICOS tasks over an honest AIP server."""

    def test_object_lifecycle(self, session, invoke, cos):
        """Objects can be stored, read, listed and deleted."""
        assert drive_task(session.put_task("a", b"hello"), invoke) is None
        assert drive_task(session.get_task("a"), invoke) == b"hello"
        assert drive_task(session.list_task(), invoke) == (b"a",)
        assert len(cos) == 1

        assert drive_task(session.delete_task("a"), invoke) is None
        assert drive_task(session.get_task("a"), invoke) is None
        assert len(cos) == 0

    def test_overwrite_uses_new_location(self, session, invoke, cos):
        """Each put writes a fresh nonce-named object."""
        drive_task(session.put_task("a", b"v1"), invoke)
        drive_task(session.put_task("a", b"v2"), invoke)
        assert drive_task(session.get_task("a"), invoke) == b"v2"
        assert len(cos) == 2

    def test_gc_orphans(self, session, invoke, cos):
        """Superseded objects and objects of deleted keys are collected."""
        drive_task(session.put_task("a", b"v1"), invoke)
        drive_task(session.put_task("a", b"v2"), invoke)
        drive_task(session.put_task("b", b"v3"), invoke)
        cos.put(physical_key("ghost", bytes(NONCE_BYTES)), b"left behind")

        removed = drive_task(session.gc_orphans_task(), invoke)
        assert sorted(removed) == sorted([physical_key("a", (1).to_bytes(NONCE_BYTES, "big")),
                                          physical_key("ghost", bytes(NONCE_BYTES))])
        assert drive_task(session.get_task("a"), invoke) == b"v2"
        assert drive_task(session.get_task("b"), invoke) == b"v3"

    def test_gc_on_empty_storage(self, session):
        """Nothing to collect means no AIP operation at all."""
        assert drive_task(session.gc_orphans_task(), lambda op: pytest.fail("unexpected invoke")) == []

    def test_gc_keeps_in_flight_put(self, session, invoke, cos):
        """An object whose dictionary update is not sequenced yet survives collection."""
        drive_task(session.put_task("a", b"v1"), invoke)
        in_flight = session.put_task("a", b"v2")
        op = next(in_flight)
        assert len(cos) == 2

        assert drive_task(session.gc_orphans_task(grace_s=3600), invoke) == []
        assert len(cos) == 2
        with pytest.raises(StopIteration):
            in_flight.send(invoke(op))
        assert drive_task(session.get_task("a"), invoke) == b"v2"

    def test_gc_collects_old_orphans(self, cos, test_config, invoke, monkeypatch):
        """With the configured grace period, only objects older than it are removed."""
        test_config["vicos"]["gc_grace_s"] = 60
        session = VicosSession(cos, SHA256, test_config, counting_nonces())
        drive_task(session.put_task("a", b"v1"), invoke)
        drive_task(session.put_task("a", b"v2"), invoke)
        assert drive_task(session.gc_orphans_task(), invoke) == []

        monkeypatch.setattr(cos, "stored_at", lambda key: 0.0)
        removed = drive_task(session.gc_orphans_task(), invoke)
        assert removed == [physical_key("a", (1).to_bytes(NONCE_BYTES, "big"))]

    def test_gc_malformed_record(self, session, cos):
        """A live key whose record does not decode raises a bad-proof alarm."""
        cos.put(physical_key("a", bytes(NONCE_BYTES)), b"v")
        responses = {"LIST": (b"a",), "GET": b"junk"}
        with pytest.raises(FaultAlarm) as exc_info:
            drive_task(session.gc_orphans_task(), lambda op: responses[op.kind.name])
        assert exc_info.value.kind is AlarmKind.BAD_PROOF
        assert len(cos) == 1

    def test_tampered_object(self, session, invoke, cos):
        """Modified object bytes raise a bad-proof alarm."""
        drive_task(session.put_task("a", b"hello"), invoke)
        (location,) = cos.list()
        cos.put(location, b"hellO")
        with pytest.raises(FaultAlarm) as exc_info:
            drive_task(session.get_task("a"), invoke)
        assert exc_info.value.kind is AlarmKind.BAD_PROOF

    def test_missing_object(self, session, invoke, cos):
        """An object the server lost raises a bad-proof alarm."""
        drive_task(session.put_task("a", b"hello"), invoke)
        cos.delete_prefix("a")
        with pytest.raises(FaultAlarm):
            drive_task(session.get_task("a"), invoke)

    def test_malformed_record(self, session):
        """A dictionary value that is not an object record raises an alarm."""
        with pytest.raises(FaultAlarm):
            drive_task(session.get_task("a"), lambda op: b"junk")

    def test_aborted_put_cleans_up(self, session, cos):
        """An aborted put removes the object it uploaded."""
        assert drive_task(session.put_task("a", b"v"), lambda op: ABORT) is ABORT
        assert len(cos) == 0

    def test_aborted_delete_keeps_objects(self, session, invoke, cos):
        """An aborted delete leaves storage alone."""
        drive_task(session.put_task("a", b"v"), invoke)
        assert drive_task(session.delete_task("a"), lambda op: ABORT) is ABORT
        assert len(cos) == 1

    @pytest.mark.parametrize("key", ["", "a\x00b", "x" * 1025])
    def test_invalid_keys(self, session, key):
        """Empty keys, NUL characters and overlong keys are refused."""
        with pytest.raises(VicosError):
            drive_task(session.put_task(key, b"v"), lambda op: None)

    def test_object_size_cap(self, cos):
        """Objects above the configured cap are refused before upload."""
        session = VicosSession(cos, SHA256, {"vicos": {"max_object_mb": 0.001}})
        with pytest.raises(ObjectTooLargeError):
            drive_task(session.put_task("a", b"x" * 2000), lambda op: None)
        assert len(cos) == 0

    def test_chunked_digest(self, session):
        """Large objects are hashed in fixed-size chunks."""
        value = bytes(range(256)) * (HASH_CHUNK_BYTES // 128 + 3)
        chunks = [value[i:i + HASH_CHUNK_BYTES] for i in range(0, len(value), HASH_CHUNK_BYTES)]
        assert len(chunks) == 3
        assert session.digest_object(value) == SHA256.hash_parts(*chunks)


class TestKeysAndRecords:
    """Test cases for key translation and object records."""

    def test_physical_key_round_trip(self):
        """Physical keys carry the logical key and the nonce."""
        nonce = bytes(range(NONCE_BYTES))
        assert parse_physical_key(physical_key("dir/file", nonce)) == ("dir/file", nonce.hex())

    def test_foreign_keys(self):
        """Keys not written by VICOS parse to None."""
        assert parse_physical_key("plain") is None
        assert parse_physical_key("a\x00abcd") is None
        assert parse_physical_key("\x00" + "0" * 32) is None

    def test_record_encoding(self):
        """Records encode canonically."""
        record = ObjectRecord(b"n" * NONCE_BYTES, SHA256(b"data"))
        assert ObjectRecord.from_bytes(record.to_bytes()) == record
        with pytest.raises(DecodeError):
            ObjectRecord.from_bytes(record.to_bytes() + b"\x00")


class TestVicosClient:
    """Test cases for the blocking VicosClient facade."""

    def test_string_keys(self, network, cos, test_config):
        """list returns logical keys as strings."""
        client = VicosClient(LoopbackConnection(network, 1), cos, test_config)
        client.put("b", b"2")
        client.put("a", b"1")
        assert client.list() == ["a", "b"]
        assert client.get("b") == b"2"

    def test_alarm_halts_connection_client(self, network, cos, test_config):
        """A storage alarm stops the underlying AIP client."""
        connection = LoopbackConnection(network, 1)
        client = VicosClient(connection, cos, test_config)
        client.put("a", b"1")
        (location,) = cos.list()
        cos.put(location, b"2")
        with pytest.raises(FaultAlarm):
            client.get("a")
        assert connection.client.halted
        with pytest.raises(FaultAlarm):
            client.list()
