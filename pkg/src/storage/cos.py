"""
Cloud object storage backends
Untrusted blob stores: VICOS verifies everything it reads back.
"""

import logging
import os
import tempfile
import threading
import time
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, List, Optional


class CosError(Exception):
    """Storage backend failure."""
    pass


class CosBackend(ABC):
    """Flat namespace of string keys to byte blobs."""

    @abstractmethod
    def put(self, key: str, data: bytes) -> None: ...

    @abstractmethod
    def get(self, key: str) -> Optional[bytes]:
        """Stored bytes, or None if the key does not exist."""

    @abstractmethod
    def delete(self, key: str) -> None:
        """Remove key; missing keys are ignored."""

    @abstractmethod
    def list(self) -> List[str]: ...

    def stored_at(self, key: str) -> Optional[float]:
        """Wall-clock time key was last written, or None when unknown."""
        return None

    def delete_prefix(self, prefix: str) -> int:
        removed = 0
        for key in self.list():
            if key.startswith(prefix):
                self.delete(key)
                removed += 1
        return removed


class InMemoryCos(CosBackend):
    """Dictionary-backed store, shared safely between threads."""

    def __init__(self):
        self._objects: Dict[str, bytes] = {}
        self._written: Dict[str, float] = {}
        self._lock = threading.Lock()

    def put(self, key: str, data: bytes) -> None:
        with self._lock:
            self._objects[key] = bytes(data)
            self._written[key] = time.time()

    def get(self, key: str) -> Optional[bytes]:
        with self._lock:
            return self._objects.get(key)

    def delete(self, key: str) -> None:
        with self._lock:
            self._objects.pop(key, None)
            self._written.pop(key, None)

    def list(self) -> List[str]:
        with self._lock:
            return sorted(self._objects)

    def stored_at(self, key: str) -> Optional[float]:
        with self._lock:
            return self._written.get(key)

    def __len__(self) -> int:
        with self._lock:
            return len(self._objects)


class FilesystemCos(CosBackend):
    """One file per object under root; file names are the hex of the key."""

    TEMP_PREFIX = ".tmp-"

    def __init__(self, root: Path):
        self.logger = logging.getLogger(__name__)
        self.root = Path(root)
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise CosError(f"Cannot create storage root {self.root}: {e}") from e

    def _path(self, key: str) -> Path:
        return self.root / key.encode("utf-8").hex()

    def put(self, key: str, data: bytes) -> None:
        # Write to a temp file and rename so readers never see partial objects
        try:
            fd, tmp_name = tempfile.mkstemp(prefix=self.TEMP_PREFIX, dir=self.root)
            with os.fdopen(fd, "wb") as f:
                f.write(data)
            os.replace(tmp_name, self._path(key))
        except OSError as e:
            raise CosError(f"Cannot store object {key!r}: {e}") from e

    def get(self, key: str) -> Optional[bytes]:
        try:
            return self._path(key).read_bytes()
        except FileNotFoundError:
            return None
        except OSError as e:
            raise CosError(f"Cannot read object {key!r}: {e}") from e

    def delete(self, key: str) -> None:
        try:
            self._path(key).unlink(missing_ok=True)
        except OSError as e:
            raise CosError(f"Cannot delete object {key!r}: {e}") from e

    def list(self) -> List[str]:
        keys = []
        for entry in self.root.iterdir():
            if entry.name.startswith(self.TEMP_PREFIX):
                continue
            try:
                keys.append(bytes.fromhex(entry.name).decode("utf-8"))
            except (ValueError, UnicodeDecodeError):
                self.logger.debug(f"Ignoring foreign file {entry.name}")
        return sorted(keys)

    def stored_at(self, key: str) -> Optional[float]:
        try:
            return self._path(key).stat().st_mtime
        except FileNotFoundError:
            return None
        except OSError as e:
            raise CosError(f"Cannot stat object {key!r}: {e}") from e


def create_backend(config: Dict[str, Any]) -> CosBackend:
    """Backend selected by the vicos section of the configuration."""
    vicos_config = config.get('vicos', {})
    backend = vicos_config.get('backend', 'memory')
    if backend == 'memory':
        return InMemoryCos()
    if backend == 'filesystem':
        return FilesystemCos(Path(vicos_config.get('cos_root', 'data/cos')))
    raise CosError(f"Unknown storage backend: {backend}")
