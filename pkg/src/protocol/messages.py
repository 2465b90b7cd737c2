"""
AIP wire messages and their canonical codec
"""

from dataclasses import dataclass
from enum import Enum
from typing import Any, ClassVar, Optional, Tuple, Union

from ..core.ads import AuthenticatedDataStructure
from ..core.codec import DecodeError, Decoder, Encoder
from ..core.crypto import Signature, scheme_code, scheme_from_code
from .chain import Genesis, Status


WIRE_VERSION = 1


class MessageKind(Enum):
    INVOKE = 1
    REPLY = 2
    COMMIT = 3
    UPDATE_AUTH = 4
    COMMIT_AUTH = 5

    @property
    def label(self) -> str:
        return self.name.lower().replace("_", "-")


@dataclass(frozen=True)
class OperationRecord:
    """Entry of the committed log O."""
    op: Any
    status: Status
    commit_sig: Signature
    client_id: int


@dataclass(frozen=True)
class PendingRecord:
    """Entry of the invoked log I, optionally marked as committed-aborted."""
    op: Any
    invoke_sig: Signature
    client_id: int
    abort_mark: Optional[Signature] = None


@dataclass(frozen=True)
class AuthPair:
    """Entry of the authenticator log A."""
    authenticator: bytes
    auth_sig: Signature


@dataclass(frozen=True)
class InvokeMessage:
    kind: ClassVar[MessageKind] = MessageKind.INVOKE
    op: Any
    invoke_sig: Signature
    cleared: int


@dataclass(frozen=True)
class ReplyMessage:
    kind: ClassVar[MessageKind] = MessageKind.REPLY
    cleared_ops: Tuple[OperationRecord, ...]
    applied: int
    auth: AuthPair
    pending: Tuple[PendingRecord, ...]
    seqno: int
    response: Any
    aux: Any
    anchor: Optional[OperationRecord] = None


@dataclass(frozen=True)
class CommitMessage:
    kind: ClassVar[MessageKind] = MessageKind.COMMIT
    op: Any
    seqno: int
    status: Status
    commit_sig: Signature


@dataclass(frozen=True)
class UpdateAuthMessage:
    kind: ClassVar[MessageKind] = MessageKind.UPDATE_AUTH
    op: Any
    response: Any
    aux: Any
    commit_sig: Signature
    seqno: int
    prev_record: OperationRecord
    prev_auth: AuthPair


@dataclass(frozen=True)
class CommitAuthMessage:
    kind: ClassVar[MessageKind] = MessageKind.COMMIT_AUTH
    authenticator: bytes
    refresh_aux: Any
    auth_sig: Signature


ProtocolMessage = Union[InvokeMessage, ReplyMessage, CommitMessage,
                        UpdateAuthMessage, CommitAuthMessage]

SERVER_BOUND = (MessageKind.INVOKE, MessageKind.COMMIT, MessageKind.COMMIT_AUTH)
CLIENT_BOUND = (MessageKind.REPLY, MessageKind.UPDATE_AUTH)


def genesis_record(genesis: Genesis) -> OperationRecord:
    return OperationRecord(genesis.op, Status.SUCCESS, genesis.commit_sig, 0)


def genesis_auth(genesis: Genesis) -> AuthPair:
    return AuthPair(genesis.authenticator, genesis.auth_sig)


class MessageCodec:
    """Length-prefixed binary encoding; a version byte leads every message."""

    def __init__(self, ads: AuthenticatedDataStructure):
        self.ads = ads

    def encode(self, message: ProtocolMessage) -> bytes:
        encoder = Encoder().u8(WIRE_VERSION).u8(message.kind.value)

        if isinstance(message, InvokeMessage):
            self.ads.write_op(encoder, message.op)
            self._write_signature(encoder, message.invoke_sig)
            encoder.u64(message.cleared)
        elif isinstance(message, ReplyMessage):
            encoder.u32(len(message.cleared_ops))
            for record in message.cleared_ops:
                self._write_record(encoder, record)
            encoder.u64(message.applied)
            self._write_auth_pair(encoder, message.auth)
            encoder.u32(len(message.pending))
            for entry in message.pending:
                self._write_pending(encoder, entry)
            encoder.u64(message.seqno)
            self.ads.write_response(encoder, message.response)
            self.ads.write_aux(encoder, message.aux)
            encoder.flag(message.anchor is not None)
            if message.anchor is not None:
                self._write_record(encoder, message.anchor)
        elif isinstance(message, CommitMessage):
            self.ads.write_op(encoder, message.op)
            encoder.u64(message.seqno).u8(message.status.value)
            self._write_signature(encoder, message.commit_sig)
        elif isinstance(message, UpdateAuthMessage):
            self.ads.write_op(encoder, message.op)
            self.ads.write_response(encoder, message.response)
            self.ads.write_aux(encoder, message.aux)
            self._write_signature(encoder, message.commit_sig)
            encoder.u64(message.seqno)
            self._write_record(encoder, message.prev_record)
            self._write_auth_pair(encoder, message.prev_auth)
        elif isinstance(message, CommitAuthMessage):
            encoder.blob(message.authenticator)
            self.ads.write_refresh_aux(encoder, message.refresh_aux)
            self._write_signature(encoder, message.auth_sig)
        else:
            raise TypeError(f"Not a protocol message: {type(message).__name__}")

        return encoder.getvalue()

    def decode(self, data: bytes) -> ProtocolMessage:
        decoder = Decoder(data)
        try:
            version = decoder.u8()
            if version != WIRE_VERSION:
                raise DecodeError(f"unsupported wire version {version}")
            kind = MessageKind(decoder.u8())
        except ValueError as e:
            raise DecodeError(f"unknown message kind: {e}") from e

        try:
            message = self._decode_body(kind, decoder)
        except ValueError as e:
            # Dataclass validation of decoded fields
            raise DecodeError(f"invalid {kind.label} message: {e}") from e
        decoder.finish()
        return message

    def _decode_body(self, kind: MessageKind, decoder: Decoder) -> ProtocolMessage:
        if kind is MessageKind.INVOKE:
            return InvokeMessage(self.ads.read_op(decoder),
                                 self._read_signature(decoder), decoder.u64())

        if kind is MessageKind.REPLY:
            cleared_ops = tuple(self._read_record(decoder) for _ in range(decoder.count(8)))
            applied = decoder.u64()
            auth = self._read_auth_pair(decoder)
            pending = tuple(self._read_pending(decoder) for _ in range(decoder.count(8)))
            seqno = decoder.u64()
            response = self.ads.read_response(decoder)
            aux = self.ads.read_aux(decoder)
            anchor = self._read_record(decoder) if decoder.flag() else None
            return ReplyMessage(cleared_ops, applied, auth, pending, seqno,
                                response, aux, anchor)

        if kind is MessageKind.COMMIT:
            op = self.ads.read_op(decoder)
            seqno = decoder.u64()
            status = self._read_status(decoder)
            return CommitMessage(op, seqno, status, self._read_signature(decoder))

        if kind is MessageKind.UPDATE_AUTH:
            op = self.ads.read_op(decoder)
            response = self.ads.read_response(decoder)
            aux = self.ads.read_aux(decoder)
            commit_sig = self._read_signature(decoder)
            seqno = decoder.u64()
            return UpdateAuthMessage(op, response, aux, commit_sig, seqno,
                                     self._read_record(decoder),
                                     self._read_auth_pair(decoder))

        authenticator = decoder.blob()
        refresh_aux = self.ads.read_refresh_aux(decoder)
        return CommitAuthMessage(authenticator, refresh_aux, self._read_signature(decoder))

    # Records, shared with the server journal

    def encode_record(self, record: OperationRecord) -> bytes:
        encoder = Encoder()
        self._write_record(encoder, record)
        return encoder.getvalue()

    def decode_record(self, data: bytes) -> OperationRecord:
        decoder = Decoder(data)
        record = self._read_record(decoder)
        decoder.finish()
        return record

    def encode_auth_pair(self, pair: AuthPair) -> bytes:
        encoder = Encoder()
        self._write_auth_pair(encoder, pair)
        return encoder.getvalue()

    def decode_auth_pair(self, data: bytes) -> AuthPair:
        decoder = Decoder(data)
        pair = self._read_auth_pair(decoder)
        decoder.finish()
        return pair

    def _write_signature(self, encoder: Encoder, signature: Signature) -> None:
        encoder.u32(signature.signer).u8(scheme_code(signature.scheme)).blob(signature.value)

    def _read_signature(self, decoder: Decoder) -> Signature:
        signer = decoder.u32()
        scheme = scheme_from_code(decoder.u8())
        if scheme is None:
            raise DecodeError("unknown signature scheme")
        return Signature(signer, scheme, decoder.blob())

    def _read_status(self, decoder: Decoder) -> Status:
        code = decoder.u8()
        try:
            return Status(code)
        except ValueError as e:
            raise DecodeError(f"unknown status {code}") from e

    def _write_record(self, encoder: Encoder, record: OperationRecord) -> None:
        self.ads.write_op(encoder, record.op)
        encoder.u8(record.status.value)
        self._write_signature(encoder, record.commit_sig)
        encoder.u32(record.client_id)

    def _read_record(self, decoder: Decoder) -> OperationRecord:
        op = self.ads.read_op(decoder)
        status = self._read_status(decoder)
        signature = self._read_signature(decoder)
        return OperationRecord(op, status, signature, decoder.u32())

    def _write_pending(self, encoder: Encoder, entry: PendingRecord) -> None:
        self.ads.write_op(encoder, entry.op)
        self._write_signature(encoder, entry.invoke_sig)
        encoder.u32(entry.client_id)
        encoder.flag(entry.abort_mark is not None)
        if entry.abort_mark is not None:
            self._write_signature(encoder, entry.abort_mark)

    def _read_pending(self, decoder: Decoder) -> PendingRecord:
        op = self.ads.read_op(decoder)
        signature = self._read_signature(decoder)
        client_id = decoder.u32()
        mark = self._read_signature(decoder) if decoder.flag() else None
        return PendingRecord(op, signature, client_id, mark)

    def _write_auth_pair(self, encoder: Encoder, pair: AuthPair) -> None:
        encoder.blob(pair.authenticator)
        self._write_signature(encoder, pair.auth_sig)

    def _read_auth_pair(self, decoder: Decoder) -> AuthPair:
        return AuthPair(decoder.blob(), self._read_signature(decoder))
