"""
Reliable FIFO byte channels between one client and the server
In-process queues for tests and simulations, length-framed TCP otherwise.
"""

import logging
import queue
import socket
import struct
import threading
from abc import ABC, abstractmethod
from typing import Callable, Optional, Tuple

from ..core.codec import DecodeError


FRAME_HEADER = struct.Struct(">I")
HELLO_VERSION = 1
DEFAULT_MAX_FRAME_BYTES = 256 * 1024 * 1024


class ChannelClosedError(Exception):
    """The peer closed the channel or the connection broke."""
    pass


class Channel(ABC):
    """Ordered, reliable delivery of whole byte messages."""

    @abstractmethod
    def send(self, data: bytes) -> None: ...

    @abstractmethod
    def recv(self, timeout: Optional[float] = None) -> bytes:
        """Next message; TimeoutError if none arrives in time."""

    @abstractmethod
    def close(self) -> None: ...

    @property
    @abstractmethod
    def closed(self) -> bool: ...


_CLOSE = object()


class InProcessChannel(Channel):
    """One end of a queue.Queue pair."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue):
        self._inbox = inbox
        self._outbox = outbox
        self._closed = False

    @classmethod
    def pair(cls) -> Tuple["InProcessChannel", "InProcessChannel"]:
        a_to_b: queue.Queue = queue.Queue()
        b_to_a: queue.Queue = queue.Queue()
        return cls(b_to_a, a_to_b), cls(a_to_b, b_to_a)

    def send(self, data: bytes) -> None:
        if self._closed:
            raise ChannelClosedError("channel is closed")
        self._outbox.put(bytes(data))

    def recv(self, timeout: Optional[float] = None) -> bytes:
        if self._closed:
            raise ChannelClosedError("channel is closed")
        try:
            item = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError(f"no message within {timeout}s")
        if item is _CLOSE:
            self._closed = True
            raise ChannelClosedError("peer closed the channel")
        return item

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        self._outbox.put(_CLOSE)
        self._inbox.put(_CLOSE)

    @property
    def closed(self) -> bool:
        return self._closed


class TcpChannel(Channel):
    """4-byte big-endian length prefix per message."""

    def __init__(self, sock: socket.socket, max_frame_bytes: int = DEFAULT_MAX_FRAME_BYTES):
        self.sock = sock
        self.max_frame_bytes = max_frame_bytes
        self._send_lock = threading.Lock()
        self._closed = False
        self.logger = logging.getLogger(__name__)

    def send(self, data: bytes) -> None:
        if self._closed:
            raise ChannelClosedError("channel is closed")
        try:
            with self._send_lock:
                self.sock.sendall(FRAME_HEADER.pack(len(data)) + data)
        except OSError as e:
            self.close()
            raise ChannelClosedError(f"send failed: {e}") from e

    def recv(self, timeout: Optional[float] = None) -> bytes:
        if self._closed:
            raise ChannelClosedError("channel is closed")
        self.sock.settimeout(timeout)
        (size,) = FRAME_HEADER.unpack(self._read_exact(FRAME_HEADER.size))
        if size > self.max_frame_bytes:
            self.close()
            raise ChannelClosedError(f"frame of {size} bytes exceeds limit {self.max_frame_bytes}")
        return self._read_exact(size)

    def _read_exact(self, size: int) -> bytes:
        chunks = []
        remaining = size
        while remaining:
            try:
                chunk = self.sock.recv(min(remaining, 1 << 20))
            except socket.timeout:
                raise TimeoutError("timed out waiting for frame")
            except OSError as e:
                self.close()
                raise ChannelClosedError(f"receive failed: {e}") from e
            if not chunk:
                self.close()
                raise ChannelClosedError("connection closed by peer")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()

    @property
    def closed(self) -> bool:
        return self._closed


def _hello(client_id: int) -> bytes:
    return struct.pack(">BI", HELLO_VERSION, client_id)


def _parse_hello(data: bytes) -> int:
    if len(data) != 5:
        raise DecodeError(f"hello frame must be 5 bytes, got {len(data)}")
    version, client_id = struct.unpack(">BI", data)
    if version != HELLO_VERSION:
        raise DecodeError(f"unsupported hello version {version}")
    return client_id


def connect_tcp(host: str, port: int, client_id: int, timeout: float = 10.0,
                max_frame_bytes: int = DEFAULT_MAX_FRAME_BYTES) -> TcpChannel:
    """Open a channel to the server and announce the client id."""
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as e:
        raise ChannelClosedError(f"cannot connect to {host}:{port}: {e}") from e
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    channel = TcpChannel(sock, max_frame_bytes)
    channel.send(_hello(client_id))
    return channel


class TcpListener:
    """Accepts client connections and hands each (client id, channel) to a callback."""

    def __init__(self, host: str, port: int,
                 on_connect: Callable[[int, Channel], None],
                 max_frame_bytes: int = DEFAULT_MAX_FRAME_BYTES,
                 hello_timeout: float = 10.0):
        self.logger = logging.getLogger(__name__)
        self.host = host
        self.port = port
        self.on_connect = on_connect
        self.max_frame_bytes = max_frame_bytes
        self.hello_timeout = hello_timeout
        self._sock: Optional[socket.socket] = None
        self._thread: Optional[threading.Thread] = None
        self._running = threading.Event()

    @property
    def address(self) -> Tuple[str, int]:
        if self._sock is None:
            return self.host, self.port
        return self._sock.getsockname()[:2]

    def start(self) -> None:
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((self.host, self.port))
        self._sock.listen()
        self._sock.settimeout(0.5)
        self._running.set()
        self._thread = threading.Thread(target=self._accept_loop, name="tcp-listener", daemon=True)
        self._thread.start()
        self.logger.info(f"Listening on {self.address[0]}:{self.address[1]}")

    def _accept_loop(self) -> None:
        while self._running.is_set():
            try:
                sock, peer = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            channel = TcpChannel(sock, self.max_frame_bytes)
            try:
                client_id = _parse_hello(channel.recv(timeout=self.hello_timeout))
            except (DecodeError, TimeoutError, ChannelClosedError) as e:
                self.logger.warning(f"Rejected connection from {peer}: {e}")
                channel.close()
                continue
            channel.sock.settimeout(None)
            self.logger.info(f"Client {client_id} connected from {peer}")
            self.on_connect(client_id, channel)

    def stop(self) -> None:
        self._running.clear()
        if self._sock is not None:
            self._sock.close()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
