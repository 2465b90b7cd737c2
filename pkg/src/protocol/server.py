"""
AIP server
Sans-IO: handle() consumes one client message and returns the messages
to send. Holds the ADS state, the logs I, O, A and the counters t, b.
"""

import logging
from collections import deque
from dataclasses import replace
from typing import Any, Deque, Dict, List, NamedTuple, Optional, Tuple

from ..core.ads import AuthenticatedDataStructure
from ..core.crypto import KeyRing
from .chain import TAG_INVOKE, Genesis, Status, invoke_payload, requires_auth
from .journal import ServerJournal
from .messages import (AuthPair, CommitAuthMessage, CommitMessage,
                       InvokeMessage, OperationRecord, PendingRecord,
                       ProtocolMessage, ReplyMessage, UpdateAuthMessage,
                       genesis_auth, genesis_record)


class ProtocolViolation(Exception):
    """A client message the server refuses to process."""
    pass


class Outbound(NamedTuple):
    recipient: int
    message: ProtocolMessage


class AipServer:
    """Single-threaded AIP server state machine."""

    def __init__(self, ads: AuthenticatedDataStructure, keyring: KeyRing,
                 genesis: Genesis, config: Optional[Dict[str, Any]] = None,
                 journal: Optional[ServerJournal] = None):
        self.logger = logging.getLogger(__name__)
        self.ads = ads
        self.keyring = keyring.verifier()
        self.genesis = genesis
        self.config = config or {}
        self.journal = journal

        protocol_config = self.config.get('protocol', {})
        self.query_fast_path = protocol_config.get('query_fast_path', False)
        self.prune_aborted = protocol_config.get('prune_aborted', False)
        self.pending_limit = protocol_config.get('pending_limit', 128)
        if self.pending_limit < 1:
            raise ValueError("pending_limit must be positive")

        self.invoked = 0
        self.applied = 0
        self.pending: Dict[int, PendingRecord] = {}
        self.committed: Dict[int, OperationRecord] = {0: genesis_record(genesis)}
        self.authenticators: Dict[int, AuthPair] = {0: genesis_auth(genesis)}
        self.state = ads.initial_state()
        self.last_authenticated = 0

        self._awaiting_auth: Optional[int] = None
        self._client_cleared: Dict[int, int] = {
            cid: 0 for cid in self.keyring.client_ids if cid != 0
        }
        self._buffered: Deque[Tuple[int, InvokeMessage]] = deque()

    @property
    def buffered_count(self) -> int:
        return len(self._buffered)

    def handle(self, sender: int, message: ProtocolMessage) -> List[Outbound]:
        if isinstance(message, InvokeMessage):
            return self.handle_invoke(sender, message)
        if isinstance(message, CommitMessage):
            return self.handle_commit(sender, message)
        if isinstance(message, CommitAuthMessage):
            return self.handle_commit_auth(sender, message)
        raise ProtocolViolation(f"Unexpected {type(message).__name__} from client {sender}")

    # INVOKE

    def handle_invoke(self, sender: int, message: InvokeMessage) -> List[Outbound]:
        if not self.keyring.verify(sender, TAG_INVOKE,
                                   invoke_payload(self.ads.op_bytes(message.op), sender),
                                   message.invoke_sig):
            raise ProtocolViolation(f"Invalid invoke signature from client {sender}")

        if self.invoked - self.applied >= self.pending_limit:
            self._buffered.append((sender, message))
            self.logger.debug(f"Pending list full; buffered invoke from client {sender}")
            return []
        return [self._admit(sender, message)]

    def _admit(self, sender: int, message: InvokeMessage) -> Outbound:
        self.invoked += 1
        seqno = self.invoked
        self.pending[seqno] = PendingRecord(message.op, message.invoke_sig, sender)
        self._client_cleared[sender] = message.cleared

        if self.applied == message.cleared:
            cleared_ops = (self.committed[self.applied],)
        else:
            cleared_ops = tuple(self.committed[l]
                                for l in range(message.cleared + 1, self.applied + 1)
                                if l in self.committed)

        pending = tuple(self._pending_entry(l) for l in range(self.applied + 1, seqno + 1))
        mine = self._own_live_ops(sender, pending)
        response, aux = self.ads.query(self.state, mine)
        anchor = self.committed[self.last_authenticated] if self.query_fast_path else None

        self._collect_garbage()
        self.logger.debug(f"Invoke {message.op} from client {sender} assigned seqno {seqno}")
        return Outbound(sender, ReplyMessage(
            cleared_ops, self.applied, self.authenticators[self.last_authenticated],
            pending, seqno, response, aux, anchor))

    def _pending_entry(self, seqno: int) -> PendingRecord:
        entry = self.pending[seqno]
        if self.prune_aborted:
            record = self.committed.get(seqno)
            if record is not None and record.status is Status.ABORT:
                return replace(entry, abort_mark=record.commit_sig)
        return entry

    def _own_live_ops(self, sender: int, pending: Tuple[PendingRecord, ...]) -> List[Any]:
        ops = []
        for offset, entry in enumerate(pending, 1):
            if entry.client_id != sender:
                continue
            if offset == len(pending):
                ops.append(entry.op)
                continue
            record = self.committed.get(self.applied + offset)
            if record is not None and record.status is Status.SUCCESS:
                ops.append(entry.op)
        return ops

    # COMMIT

    def handle_commit(self, sender: int, message: CommitMessage) -> List[Outbound]:
        seqno = message.seqno
        if seqno <= self.applied:
            self.logger.debug(f"Ignoring duplicate commit for applied seqno {seqno}")
            return []
        entry = self.pending.get(seqno)
        if entry is None or entry.client_id != sender:
            raise ProtocolViolation(f"Client {sender} committed seqno {seqno} it does not own")

        self.committed[seqno] = OperationRecord(message.op, message.status,
                                                message.commit_sig, sender)
        return self._advance()

    def _advance(self) -> List[Outbound]:
        """Apply committed ops in order until one needs a client round trip."""
        outbound: List[Outbound] = []
        while self._awaiting_auth is None:
            seqno = self.applied + 1
            record = self.committed.get(seqno)
            if record is None:
                break

            if not requires_auth(self.ads, record.op, self.query_fast_path):
                self.applied = seqno
                self._record_applied(seqno, record, None)
                continue

            response, aux = None, None
            if record.status is Status.SUCCESS:
                response, aux = self.ads.query(self.state, [record.op])
            previous = self.last_authenticated
            outbound.append(Outbound(record.client_id, UpdateAuthMessage(
                record.op, response, aux, record.commit_sig, seqno,
                self.committed[previous], self.authenticators[previous])))
            self._awaiting_auth = seqno

        for seqno in [s for s in self.pending if s <= self.applied]:
            del self.pending[seqno]
        outbound.extend(self._admit_buffered())
        return outbound

    def _admit_buffered(self) -> List[Outbound]:
        admitted = []
        while self._buffered and self.invoked - self.applied < self.pending_limit:
            sender, message = self._buffered.popleft()
            admitted.append(self._admit(sender, message))
        return admitted

    def resend_update_auth(self, client_id: int) -> List[Outbound]:
        """Repeat the outstanding update-auth if it belongs to a reconnecting client."""
        seqno = self._awaiting_auth
        if seqno is None or self.committed[seqno].client_id != client_id:
            return []
        record = self.committed[seqno]
        response, aux = None, None
        if record.status is Status.SUCCESS:
            response, aux = self.ads.query(self.state, [record.op])
        previous = self.last_authenticated
        return [Outbound(client_id, UpdateAuthMessage(
            record.op, response, aux, record.commit_sig, seqno,
            self.committed[previous], self.authenticators[previous]))]

    # COMMIT-AUTH

    def handle_commit_auth(self, sender: int, message: CommitAuthMessage) -> List[Outbound]:
        seqno = self._awaiting_auth
        if seqno is None or self.committed[seqno].client_id != sender:
            raise ProtocolViolation(f"Unexpected commit-auth from client {sender}")

        record = self.committed[seqno]
        if record.status is Status.SUCCESS:
            self.state = self.ads.refresh(self.state, record.op, message.refresh_aux)

        auth = AuthPair(message.authenticator, message.auth_sig)
        self.applied = seqno
        self.authenticators[seqno] = auth
        self.last_authenticated = seqno
        self._awaiting_auth = None
        self._record_applied(seqno, record, auth)
        return self._advance()

    def _record_applied(self, seqno: int, record: OperationRecord, auth: Optional[AuthPair]) -> None:
        if self.journal is not None:
            self.journal.append(seqno, record, auth)

    def _collect_garbage(self) -> None:
        if not self._client_cleared:
            return
        floor = min(self._client_cleared.values())
        keep = (self.applied, self.last_authenticated)
        for seqno in [s for s in self.committed if s < floor and s not in keep]:
            del self.committed[seqno]

    # Fork support and restart

    def fork(self) -> "AipServer":
        """Independent copy of this server, as a forking adversary would keep."""
        clone = AipServer(self.ads, self.keyring, self.genesis, self.config)
        clone.invoked = self.invoked
        clone.applied = self.applied
        clone.pending = dict(self.pending)
        clone.committed = dict(self.committed)
        clone.authenticators = dict(self.authenticators)
        clone.state = self.ads.copy_state(self.state)
        clone.last_authenticated = self.last_authenticated
        clone._awaiting_auth = self._awaiting_auth
        clone._client_cleared = dict(self._client_cleared)
        clone._buffered = deque(self._buffered)
        return clone

    def restore_from_journal(self) -> int:
        """Replay the journal into a fresh server; returns the applied seqno."""
        if self.journal is None:
            return self.applied
        for entry in self.journal.entries():
            record = entry.record
            if record.status is Status.SUCCESS and self.ads.is_update(record.op):
                self.state, _ = self.ads.apply(self.state, record.op)
            self.committed[entry.seqno] = record
            if entry.auth is not None:
                self.authenticators[entry.seqno] = entry.auth
                self.last_authenticated = entry.seqno
            self.applied = self.invoked = entry.seqno
        self.logger.info(f"Restored server state up to seqno {self.applied}")
        return self.applied
