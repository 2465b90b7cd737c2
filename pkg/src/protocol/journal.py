"""
Append-only server journal
One JSON line per applied sequence number; lets a restarted server
resume from its own applied prefix.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

from .messages import AuthPair, MessageCodec, OperationRecord


class JournalError(Exception):
    """Raised when a journal file cannot be written or parsed."""
    pass


@dataclass(frozen=True)
class JournalEntry:
    seqno: int
    record: OperationRecord
    auth: Optional[AuthPair]


class ServerJournal:
    """Writes and replays applied records."""

    def __init__(self, path: Path, codec: MessageCodec):
        self.path = Path(path)
        self.codec = codec
        self.logger = logging.getLogger(__name__)

    def append(self, seqno: int, record: OperationRecord, auth: Optional[AuthPair]) -> None:
        line = {
            "seqno": seqno,
            "record": self.codec.encode_record(record).hex(),
            "auth": self.codec.encode_auth_pair(auth).hex() if auth is not None else None,
        }
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(line) + "\n")
        except OSError as e:
            raise JournalError(f"Cannot append to journal {self.path}: {e}") from e

    def entries(self) -> Iterator[JournalEntry]:
        if not self.path.exists():
            return
        with open(self.path, "r", encoding="utf-8") as f:
            for number, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    data = json.loads(line)
                    auth = data.get("auth")
                    yield JournalEntry(
                        seqno=int(data["seqno"]),
                        record=self.codec.decode_record(bytes.fromhex(data["record"])),
                        auth=self.codec.decode_auth_pair(bytes.fromhex(auth)) if auth else None,
                    )
                except Exception as e:
                    raise JournalError(f"Corrupt journal line {number} in {self.path}: {e}") from e
