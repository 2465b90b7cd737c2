"""
VICOS - verifiable integrity for cloud object storage
Object bytes live in an untrusted COS under a nonce-translated key;
their digests live in the authenticated dictionary behind AIP.
"""

import logging
import secrets
import time
from dataclasses import dataclass
from typing import Any, Callable, Dict, Generator, List, Optional, Tuple

from ..core.adict import Operation
from ..core.ads import ABORT
from ..core.codec import DecodeError, Decoder, Encoder
from ..core.crypto import SHA256, Digest, HashFunction
from ..protocol.client import AlarmKind, FaultAlarm
from .cos import CosBackend


KEY_SEPARATOR = "\x00"
NONCE_BYTES = 16
MAX_KEY_BYTES = 1024
HASH_CHUNK_BYTES = 1 << 20

# A task yields AIP operations, receives their responses and returns its result
OperationTask = Generator[Operation, Any, Any]


class VicosError(Exception):
    """Invalid VICOS request."""
    pass


class ObjectTooLargeError(VicosError):
    """Object exceeds the configured size cap."""
    pass


@dataclass(frozen=True)
class ObjectRecord:
    """Nonce and digest of the object version a logical key refers to."""
    nonce: bytes
    digest: Digest

    def to_bytes(self) -> bytes:
        return Encoder().blob(self.nonce).blob(self.digest).getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ObjectRecord":
        decoder = Decoder(data)
        record = cls(decoder.blob(), decoder.blob())
        decoder.finish()
        return record


def encode_key(key: str) -> bytes:
    """Validate a logical key and return its dictionary encoding."""
    if not isinstance(key, str) or not key:
        raise VicosError("Keys must be non-empty strings")
    if KEY_SEPARATOR in key:
        raise VicosError("Keys must not contain NUL characters")
    encoded = key.encode("utf-8")
    if len(encoded) > MAX_KEY_BYTES:
        raise VicosError(f"Key longer than {MAX_KEY_BYTES} bytes")
    return encoded


def physical_key(key: str, nonce: bytes) -> str:
    return f"{key}{KEY_SEPARATOR}{nonce.hex()}"


def parse_physical_key(name: str) -> Optional[Tuple[str, str]]:
    """(logical key, nonce hex) of a COS key written by VICOS, else None."""
    key, sep, nonce_hex = name.rpartition(KEY_SEPARATOR)
    if not sep or not key or len(nonce_hex) != 2 * NONCE_BYTES:
        return None
    return key, nonce_hex


class VicosSession:
    """
    VICOS operations as tasks, independent of how AIP operations are delivered.

    Each task is a generator: it yields the AIP operation to run and is
    resumed with the response. Task results use dictionary types
    (bytes keys and values); VicosClient converts them for callers.
    """

    def __init__(self, cos: CosBackend, hash_fn: HashFunction = SHA256,
                 config: Optional[Dict[str, Any]] = None,
                 nonce_source: Optional[Callable[[], bytes]] = None):
        self.logger = logging.getLogger(__name__)
        self.cos = cos
        self.hash_fn = hash_fn
        vicos_config = (config or {}).get('vicos', {})
        self.max_object_bytes = int(vicos_config.get('max_object_mb', 64) * 1024 * 1024)
        self.gc_grace_s = float(vicos_config.get('gc_grace_s', 60.0))
        self.nonce_source = nonce_source or (lambda: secrets.token_bytes(NONCE_BYTES))

    def digest_object(self, value: bytes) -> Digest:
        view = memoryview(value)
        return self.hash_fn.hash_parts(*(view[i:i + HASH_CHUNK_BYTES]
                                         for i in range(0, len(view), HASH_CHUNK_BYTES)))

    def put_task(self, key: str, value: bytes) -> OperationTask:
        name = encode_key(key)
        if len(value) > self.max_object_bytes:
            raise ObjectTooLargeError(f"Object of {len(value)} bytes exceeds cap of {self.max_object_bytes}")

        nonce = self.nonce_source()
        location = physical_key(key, nonce)
        self.cos.put(location, value)

        record = ObjectRecord(nonce, self.digest_object(value))
        response = yield Operation.put(name, record.to_bytes())
        if response is ABORT:
            try:
                self.cos.delete(location)
            except Exception as e:
                self.logger.warning(f"Could not remove object of aborted put {key!r}: {e}")
            return ABORT
        return None

    def get_task(self, key: str) -> OperationTask:
        response = yield Operation.get(encode_key(key))
        if response is ABORT or response is None:
            return response

        try:
            record = ObjectRecord.from_bytes(response)
        except DecodeError as e:
            raise FaultAlarm(AlarmKind.BAD_PROOF, None, f"malformed object record for {key!r}: {e}")

        data = self.cos.get(physical_key(key, record.nonce))
        if data is None:
            raise FaultAlarm(AlarmKind.BAD_PROOF, None, f"object for {key!r} missing from storage")
        if self.digest_object(data) != record.digest:
            raise FaultAlarm(AlarmKind.BAD_PROOF, None, f"object bytes for {key!r} do not match digest")
        return data

    def delete_task(self, key: str) -> OperationTask:
        response = yield Operation.delete(encode_key(key))
        if response is ABORT:
            return ABORT
        self.cos.delete_prefix(key + KEY_SEPARATOR)
        return None

    def list_task(self) -> OperationTask:
        return (yield Operation.list())

    def gc_orphans_task(self, grace_s: Optional[float] = None) -> OperationTask:
        """
        Delete COS objects no live dictionary record points to; returns removed keys.

        Objects younger than the grace period are kept: they may belong to
        a put whose dictionary update has not been sequenced yet.
        """
        grace_s = self.gc_grace_s if grace_s is None else grace_s
        snapshot = time.time()
        by_key: Dict[str, List[Tuple[str, str]]] = {}
        for name in self.cos.list():
            parsed = parse_physical_key(name)
            if parsed is not None:
                by_key.setdefault(parsed[0], []).append((name, parsed[1]))

        removed: List[str] = []
        if not by_key:
            return removed

        listing = yield Operation.list()
        if listing is ABORT:
            return ABORT
        live = {k.decode("utf-8") for k in listing}

        recent = 0
        for key, objects in sorted(by_key.items()):
            keep = None
            if key in live:
                response = yield Operation.get(encode_key(key))
                if response is ABORT:
                    continue
                if response is not None:
                    try:
                        keep = ObjectRecord.from_bytes(response).nonce.hex()
                    except DecodeError as e:
                        raise FaultAlarm(AlarmKind.BAD_PROOF, None,
                                         f"malformed object record for {key!r}: {e}")
            for name, nonce_hex in objects:
                if nonce_hex == keep:
                    continue
                if not self._collectable(name, snapshot, grace_s):
                    recent += 1
                    continue
                self.cos.delete(name)
                removed.append(name)

        self.logger.info(f"Removed {len(removed)} orphaned objects, kept {recent} recent ones")
        return removed

    def _collectable(self, name: str, snapshot: float, grace_s: float) -> bool:
        if grace_s <= 0:
            return True
        written = self.cos.stored_at(name)
        return written is not None and written <= snapshot - grace_s


def drive_task(task: OperationTask, invoke: Callable[[Operation], Any]) -> Any:
    """Run a task to completion against a blocking invoke()."""
    try:
        op = next(task)
        while True:
            op = task.send(invoke(op))
    except StopIteration as stop:
        return stop.value


class VicosClient:
    """Blocking VICOS facade over one AIP client connection."""

    def __init__(self, connection: Any, cos: CosBackend,
                 config: Optional[Dict[str, Any]] = None):
        self.logger = logging.getLogger(__name__)
        self.connection = connection
        self.session = VicosSession(cos, connection.client.hash_fn, config)

    def _run(self, task: OperationTask) -> Any:
        try:
            return drive_task(task, self.connection.invoke)
        except FaultAlarm as alarm:
            raise self.connection.client.halt(alarm)

    def put(self, key: str, value: bytes) -> Any:
        return self._run(self.session.put_task(key, value))

    def get(self, key: str) -> Any:
        return self._run(self.session.get_task(key))

    def delete(self, key: str) -> Any:
        return self._run(self.session.delete_task(key))

    def list(self) -> Any:
        keys = self._run(self.session.list_task())
        if keys is ABORT:
            return ABORT
        return [k.decode("utf-8") for k in keys]

    def gc_orphans(self, grace_s: Optional[float] = None) -> Any:
        return self._run(self.session.gc_orphans_task(grace_s))
