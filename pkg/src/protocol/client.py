"""
AIP client
Sans-IO state machine: it consumes decoded messages and returns the
messages to send back. Transport and threading live in runtime.py.
"""

import hmac
import logging
import random
import time
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, List, NamedTuple, NoReturn, Optional, Sequence, Set, Tuple

from ..core.ads import ABORT, AuthenticatedDataStructure
from ..core.crypto import Digest, KeyRing
from .chain import (TAG_AUTH, TAG_COMMIT, TAG_INVOKE, Genesis, Status,
                    auth_payload, chain_hash, commit_payload, invoke_payload,
                    requires_auth)
from .messages import (CommitAuthMessage, CommitMessage, InvokeMessage,
                       OperationRecord, PendingRecord, ProtocolMessage,
                       ReplyMessage, UpdateAuthMessage)


class AlarmKind(Enum):
    """Category of server misbehaviour a client detected."""
    HASH_CHAIN_MISMATCH = "hash-chain-mismatch"
    BAD_SIGNATURE = "bad-signature"
    BAD_PROOF = "bad-proof"
    BAD_PENDING = "bad-pending"
    PROTOCOL_ORDER = "protocol-order"


class FaultAlarm(Exception):
    """Proof that the server deviated from the protocol; the client halts."""

    def __init__(self, kind: AlarmKind, seqno: Optional[int] = None, detail: str = ""):
        self.kind = kind
        self.seqno = seqno
        self.detail = detail
        where = f" at seqno {seqno}" if seqno is not None else ""
        super().__init__(f"{kind.value}{where}: {detail}" if detail else f"{kind.value}{where}")


class ClientUsageError(RuntimeError):
    """The caller broke the one-operation-at-a-time rule."""
    pass


class ClientStep(NamedTuple):
    """Outcome of feeding one message to the client."""
    outbound: ProtocolMessage
    completed: bool
    response: Any = None


Compatibility = Callable[[Sequence[Any], Any], bool]


class AipClient:
    """One AIP client; at most one operation in its active phase."""

    def __init__(self, client_id: int, ads: AuthenticatedDataStructure,
                 keyring: KeyRing, genesis: Genesis,
                 config: Optional[Dict[str, Any]] = None,
                 compatibility: Optional[Compatibility] = None):
        if client_id == 0:
            raise ValueError("Client id 0 is reserved for setup")

        self.logger = logging.getLogger(__name__)
        self.client_id = client_id
        self.ads = ads
        self.keyring = keyring
        self.hash_fn = keyring.hash_fn
        self.compatible: Compatibility = compatibility or ads.compatible

        protocol_config = (config or {}).get('protocol', {})
        self.query_fast_path = protocol_config.get('query_fast_path', False)

        # c: highest seqno whose effects this client has cleared
        self.cleared = 0
        # H, Z and U, pruned below cleared - 1
        self.chain: Dict[int, Digest] = {-1: self.hash_fn.null_digest, 0: genesis.head}
        self.statuses: Dict[int, Status] = {0: Status.SUCCESS}
        self.needs_auth: Dict[int, bool] = {0: True}
        # Highest cleared seqno that carries an authenticator
        self.anchor = 0

        self.current: Optional[Any] = None
        self.outstanding: Set[int] = set()
        self.alarm: Optional[FaultAlarm] = None

        self.completed_ops = 0
        self.aborted_ops = 0

    # Alarm handling

    @property
    def halted(self) -> bool:
        return self.alarm is not None

    def halt(self, alarm: FaultAlarm) -> FaultAlarm:
        """Record alarm and stop; later calls keep raising the first alarm."""
        if self.alarm is None:
            self.alarm = alarm
            self.logger.error(f"Client {self.client_id} halted: {alarm}")
        return self.alarm

    def reject_garbled(self, error: Exception) -> FaultAlarm:
        """A server message that does not even decode."""
        return self.halt(FaultAlarm(AlarmKind.PROTOCOL_ORDER, None,
                                    f"undecodable server message: {error}"))

    def _fail(self, kind: AlarmKind, seqno: Optional[int], detail: str) -> NoReturn:
        raise self.halt(FaultAlarm(kind, seqno, detail))

    def _ensure_running(self) -> None:
        if self.alarm is not None:
            raise self.alarm

    # Active phase

    def begin_invoke(self, op: Any) -> InvokeMessage:
        self._ensure_running()
        if self.current is not None:
            raise ClientUsageError(f"Client {self.client_id} already has {self.current} in flight")

        self.current = op
        signature = self.keyring.sign(self.client_id, TAG_INVOKE,
                                      invoke_payload(self.ads.op_bytes(op), self.client_id))
        self.logger.debug(f"Client {self.client_id} invoking {op} (cleared={self.cleared})")
        return InvokeMessage(op, signature, self.cleared)

    def receive(self, message: ProtocolMessage) -> ClientStep:
        self._ensure_running()
        if isinstance(message, ReplyMessage):
            commit, response = self.handle_reply(message)
            return ClientStep(commit, True, response)
        if isinstance(message, UpdateAuthMessage):
            return ClientStep(self.handle_update_auth(message), False)
        return self._fail(AlarmKind.PROTOCOL_ORDER, None,
                          f"unexpected {type(message).__name__} from server")

    def handle_reply(self, message: ReplyMessage) -> Tuple[CommitMessage, Any]:
        self._ensure_running()
        if self.current is None:
            self._fail(AlarmKind.PROTOCOL_ORDER, message.seqno,
                       "reply without an operation in flight")

        self._check_view(message)
        self._check_pending(message.pending)
        mine, others = self._separate_pending(message.pending)

        seqno = message.applied + len(message.pending)
        if message.seqno != seqno:
            self._fail(AlarmKind.PROTOCOL_ORDER, message.seqno,
                       f"reply seqno disagrees with pending list (expected {seqno})")

        _, _, valid = self.ads.authexec(mine, message.auth.authenticator,
                                        message.response, message.aux)
        if not valid:
            self._fail(AlarmKind.BAD_PROOF, seqno, f"response to {self.current} does not verify")

        op = self.current
        if self.compatible(others, op):
            status, response = Status.SUCCESS, message.response
            self.completed_ops += 1
        else:
            status, response = Status.ABORT, ABORT
            self.aborted_ops += 1

        self.statuses[seqno] = status
        if self.needs_auth.get(seqno, True):
            self.outstanding.add(seqno)
        signature = self.keyring.sign(
            self.client_id, TAG_COMMIT,
            commit_payload(seqno, self.ads.op_bytes(op), self.client_id, status,
                           self.chain[seqno]))
        self.current = None
        self._collect_garbage()

        self.logger.debug(f"Client {self.client_id} committed {op} at {seqno} as {status.name}")
        return CommitMessage(op, seqno, status, signature), response

    def _check_view(self, message: ReplyMessage) -> None:
        records = message.cleared_ops
        if not records:
            self._fail(AlarmKind.PROTOCOL_ORDER, message.applied, "reply carries no cleared operations")

        base = self.cleared - 1 if message.applied == self.cleared else self.cleared
        for offset, record in enumerate(records, 1):
            seqno = base + offset
            self._check_record(record, seqno)
            self.statuses[seqno] = record.status
            needs = requires_auth(self.ads, record.op, self.query_fast_path)
            self.needs_auth[seqno] = needs
            if needs:
                self.anchor = max(self.anchor, seqno)

        if base + len(records) != message.applied:
            self._fail(AlarmKind.PROTOCOL_ORDER, message.applied,
                       "cleared operations do not end at the applied seqno")

        anchor_record = message.anchor if message.anchor is not None else records[-1]
        if message.anchor is None and self.anchor != message.applied:
            self._fail(AlarmKind.PROTOCOL_ORDER, message.applied,
                       "reply omits the authenticated anchor record")
        if message.anchor is not None:
            self._check_known_record(message.anchor, self.anchor)

        self._check_auth(anchor_record, self.anchor, message.auth.authenticator,
                         message.auth.auth_sig)
        self.cleared = message.applied
        self.outstanding = {seqno for seqno in self.outstanding if seqno > self.cleared}

    def _check_pending(self, pending: Sequence[PendingRecord]) -> None:
        if not pending:
            self._fail(AlarmKind.BAD_PENDING, None, "empty pending list")

        for offset, entry in enumerate(pending, 1):
            seqno = self.cleared + offset
            op_bytes = self.ads.op_bytes(entry.op)
            if not self._extend_chain(op_bytes, seqno, entry.client_id):
                self._fail(AlarmKind.HASH_CHAIN_MISMATCH, seqno,
                           f"pending {entry.op} by client {entry.client_id} conflicts with history")
            if not self.keyring.verify(entry.client_id, TAG_INVOKE,
                                       invoke_payload(op_bytes, entry.client_id),
                                       entry.invoke_sig):
                self._fail(AlarmKind.BAD_SIGNATURE, seqno, "invalid invoke signature")
            if entry.abort_mark is not None and not self.keyring.verify(
                    entry.client_id, TAG_COMMIT,
                    commit_payload(seqno, op_bytes, entry.client_id, Status.ABORT,
                                   self.chain[seqno]),
                    entry.abort_mark):
                self._fail(AlarmKind.BAD_SIGNATURE, seqno, "invalid abort mark")
            self.needs_auth[seqno] = requires_auth(self.ads, entry.op, self.query_fast_path)

        last = pending[-1]
        if last.client_id != self.client_id or last.op != self.current:
            self._fail(AlarmKind.BAD_PENDING, self.cleared + len(pending),
                       "pending list does not end with this client's operation")

    def _separate_pending(self, pending: Sequence[PendingRecord]) -> Tuple[List[Any], List[Any]]:
        """Own successful ops plus the current one, and everyone else's live ops."""
        mine: List[Any] = []
        others: List[Any] = []
        for offset, entry in enumerate(pending, 1):
            seqno = self.cleared + offset
            if entry.client_id == self.client_id:
                if offset == len(pending):
                    mine.append(entry.op)
                    continue
                status = self.statuses.get(seqno)
                if status is None:
                    self._fail(AlarmKind.PROTOCOL_ORDER, seqno,
                               "pending list contains an operation this client never committed")
                if status is Status.SUCCESS:
                    mine.append(entry.op)
            elif entry.abort_mark is None:
                others.append(entry.op)
        return mine, others

    # Passive phase

    def handle_update_auth(self, message: UpdateAuthMessage) -> CommitAuthMessage:
        self._ensure_running()
        seqno = message.seqno
        status = self.statuses.get(seqno)
        digest = self.chain.get(seqno)
        if status is None or digest is None or seqno <= self.cleared:
            self._fail(AlarmKind.PROTOCOL_ORDER, seqno, "update-auth for an unknown operation")
        if not self.needs_auth.get(seqno, False):
            self._fail(AlarmKind.PROTOCOL_ORDER, seqno, "update-auth for an operation without authenticator")

        op_bytes = self.ads.op_bytes(message.op)
        if not self.keyring.verify(self.client_id, TAG_COMMIT,
                                   commit_payload(seqno, op_bytes, self.client_id, status, digest),
                                   message.commit_sig):
            self._fail(AlarmKind.BAD_SIGNATURE, seqno, "update-auth does not match own commit")

        previous = self._previous_authenticated(seqno)
        self._check_known_record(message.prev_record, previous)
        self._check_auth(message.prev_record, previous, message.prev_auth.authenticator,
                         message.prev_auth.auth_sig)

        if status is Status.SUCCESS:
            authenticator, refresh_aux, valid = self.ads.authexec(
                [message.op], message.prev_auth.authenticator, message.response, message.aux)
            if not valid:
                self._fail(AlarmKind.BAD_PROOF, seqno, f"update proof for {message.op} does not verify")
        else:
            if message.response is not None or message.aux is not None:
                self._fail(AlarmKind.PROTOCOL_ORDER, seqno, "aborted operation carries a proof")
            authenticator, refresh_aux = message.prev_auth.authenticator, None

        signature = self.keyring.sign(self.client_id, TAG_AUTH,
                                      auth_payload(op_bytes, seqno, digest, authenticator))
        self.outstanding.discard(seqno)
        return CommitAuthMessage(authenticator, refresh_aux, signature)

    def _previous_authenticated(self, seqno: int) -> int:
        for candidate in range(seqno - 1, self.cleared, -1):
            flag = self.needs_auth.get(candidate)
            if flag is None:
                self._fail(AlarmKind.PROTOCOL_ORDER, candidate, "gap in known history")
            if flag:
                return candidate
        return self.anchor

    # Checks shared by both phases

    def _extend_chain(self, op_bytes: bytes, seqno: int, client_id: int) -> bool:
        previous = self.chain.get(seqno - 1)
        if previous is None:
            return False
        digest = chain_hash(self.hash_fn, previous, op_bytes, seqno, client_id)
        existing = self.chain.get(seqno)
        if existing is None:
            self.chain[seqno] = digest
            return True
        return hmac.compare_digest(existing, digest)

    def _check_record(self, record: OperationRecord, seqno: int) -> None:
        op_bytes = self.ads.op_bytes(record.op)
        if not self._extend_chain(op_bytes, seqno, record.client_id):
            self._fail(AlarmKind.HASH_CHAIN_MISMATCH, seqno,
                       f"{record.op} by client {record.client_id} conflicts with history")
        self._check_commit_sig(record, seqno, op_bytes)

    def _check_known_record(self, record: OperationRecord, seqno: int) -> None:
        """Record must hash to the chain entry this client already holds at seqno."""
        expected = self.chain.get(seqno)
        previous = self.chain.get(seqno - 1)
        op_bytes = self.ads.op_bytes(record.op)
        if expected is None:
            self._fail(AlarmKind.PROTOCOL_ORDER, seqno, "reference to a forgotten seqno")
        if previous is not None:
            digest = chain_hash(self.hash_fn, previous, op_bytes, seqno, record.client_id)
            if not hmac.compare_digest(digest, expected):
                self._fail(AlarmKind.HASH_CHAIN_MISMATCH, seqno, "anchor record conflicts with history")
        self._check_commit_sig(record, seqno, op_bytes)

    def _check_commit_sig(self, record: OperationRecord, seqno: int, op_bytes: bytes) -> None:
        if not self.keyring.verify(record.client_id, TAG_COMMIT,
                                   commit_payload(seqno, op_bytes, record.client_id,
                                                  record.status, self.chain[seqno]),
                                   record.commit_sig):
            self._fail(AlarmKind.BAD_SIGNATURE, seqno, f"invalid commit signature by client {record.client_id}")

    def _check_auth(self, record: OperationRecord, seqno: int, authenticator: bytes,
                    signature: Any) -> None:
        digest = self.chain.get(seqno)
        if digest is None or not self.keyring.verify(
                record.client_id, TAG_AUTH,
                auth_payload(self.ads.op_bytes(record.op), seqno, digest, authenticator),
                signature):
            self._fail(AlarmKind.BAD_SIGNATURE, seqno, "invalid authenticator signature")

    def _collect_garbage(self) -> None:
        floor = self.cleared - 1
        for table in (self.chain, self.statuses, self.needs_auth):
            stale = [seqno for seqno in table
                     if seqno < floor and seqno != self.anchor and seqno not in self.outstanding]
            for seqno in stale:
                del table[seqno]

    # Persistence between runs

    def snapshot(self) -> Dict[str, Any]:
        """Serializable client state; only valid while no operation is in flight."""
        if self.current is not None:
            raise ClientUsageError("Cannot snapshot a client with an operation in flight")
        return {
            "client_id": self.client_id,
            "cleared": self.cleared,
            "anchor": self.anchor,
            "chain": {str(k): v.hex() for k, v in self.chain.items()},
            "statuses": {str(k): v.value for k, v in self.statuses.items()},
            "needs_auth": {str(k): v for k, v in self.needs_auth.items()},
            "outstanding": sorted(self.outstanding),
        }

    def restore(self, data: Dict[str, Any]) -> None:
        if data.get("client_id") != self.client_id:
            raise ValueError(f"Snapshot belongs to client {data.get('client_id')}")
        self.cleared = int(data["cleared"])
        self.anchor = int(data["anchor"])
        self.chain = {int(k): bytes.fromhex(v) for k, v in data["chain"].items()}
        self.statuses = {int(k): Status(v) for k, v in data["statuses"].items()}
        self.needs_auth = {int(k): bool(v) for k, v in data["needs_auth"].items()}
        self.outstanding = set(int(s) for s in data.get("outstanding", []))


@dataclass
class RetryPolicy:
    """Exponential backoff with jitter for resubmitting aborted operations."""
    attempts: int = 3
    base_delay_ms: float = 10.0
    max_delay_ms: float = 1000.0

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "RetryPolicy":
        retry = config.get('protocol', {}).get('retry', {})
        return cls(attempts=retry.get('attempts', 3),
                   base_delay_ms=retry.get('base_delay_ms', 10.0),
                   max_delay_ms=retry.get('max_delay_ms', 1000.0))

    def delay_s(self, attempt: int, rng: random.Random) -> float:
        ceiling = min(self.max_delay_ms, self.base_delay_ms * (2 ** attempt))
        return rng.uniform(0, ceiling) / 1000.0

    def run(self, invoke: Callable[[Any], Any], op: Any,
            rng: Optional[random.Random] = None,
            sleep: Callable[[float], None] = time.sleep) -> Any:
        """Invoke op until it is not aborted or attempts run out."""
        rng = rng or random.Random()
        response = ABORT
        for attempt in range(max(self.attempts, 1)):
            response = invoke(op)
            if response is not ABORT:
                return response
            if attempt + 1 < self.attempts:
                sleep(self.delay_s(attempt, rng))
        return response
