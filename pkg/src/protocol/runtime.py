"""
Threaded runtimes around the sans-IO client and server
"""

import heapq
import itertools
import logging
import queue
import threading
from collections import deque
from typing import Any, Deque, Dict, List, Optional, Tuple

from ..core.ads import IntegrityError
from ..core.codec import DecodeError
from ..transport.channel import Channel, ChannelClosedError, TcpListener
from .client import AipClient, FaultAlarm
from .messages import MessageCodec, MessageKind, ProtocolMessage
from .server import AipServer, Outbound, ProtocolViolation


# Lower value is served first: messages that finish operations beat new work
INTAKE_PRIORITY = {
    MessageKind.COMMIT: 0,
    MessageKind.UPDATE_AUTH: 0,
    MessageKind.COMMIT_AUTH: 0,
    MessageKind.INVOKE: 1,
    MessageKind.REPLY: 1,
}


class IntakeQueue:
    """Priority queue of (sender, message), FIFO within a priority class."""

    def __init__(self, trace_limit: int = 10000):
        self._heap: List[Tuple[int, int, int, ProtocolMessage]] = []
        self._arrival = itertools.count()
        self._cond = threading.Condition()
        self._closed = False
        self.trace: Deque[MessageKind] = deque(maxlen=trace_limit)

    def put(self, sender: int, message: ProtocolMessage) -> None:
        with self._cond:
            heapq.heappush(self._heap, (INTAKE_PRIORITY[message.kind],
                                        next(self._arrival), sender, message))
            self._cond.notify()

    def get(self, timeout: Optional[float] = None) -> Optional[Tuple[int, ProtocolMessage]]:
        """Next message, or None once closed or on timeout."""
        with self._cond:
            if not self._heap and not self._closed:
                self._cond.wait(timeout)
            if self._closed or not self._heap:
                return None
            _, _, sender, message = heapq.heappop(self._heap)
            self.trace.append(message.kind)
            return sender, message

    def __len__(self) -> int:
        with self._cond:
            return len(self._heap)

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()


class ServerRuntime:
    """Reader thread per client feeding one processing loop."""

    def __init__(self, server: AipServer, codec: MessageCodec,
                 config: Optional[Dict[str, Any]] = None):
        self.logger = logging.getLogger(__name__)
        self.server = server
        self.codec = codec
        self.config = config or {}
        self.intake = IntakeQueue()
        self._channels: Dict[int, Channel] = {}
        self._lock = threading.Lock()
        self._running = threading.Event()
        self._stopped = threading.Event()
        self._loop: Optional[threading.Thread] = None
        self._readers: List[threading.Thread] = []
        self._listener: Optional[TcpListener] = None
        self.bytes_received = 0
        self.bytes_sent = 0
        self.failure: Optional[IntegrityError] = None

    def start(self) -> None:
        self._running.set()
        self._loop = threading.Thread(target=self._process_loop, name="aip-server", daemon=True)
        self._loop.start()

    def attach(self, client_id: int, channel: Channel) -> None:
        """Serve a connected client; replaces any previous channel for the same id."""
        with self._lock:
            previous = self._channels.get(client_id)
            self._channels[client_id] = channel
        if previous is not None and previous is not channel:
            previous.close()

        reader = threading.Thread(target=self._read_loop, args=(client_id, channel),
                                  name=f"aip-reader-{client_id}", daemon=True)
        self._readers.append(reader)
        reader.start()
        self._send_all(self._resend_for(client_id))

    def _resend_for(self, client_id: int) -> List[Outbound]:
        # Runs on the attaching thread; the resent message is read-only on server state
        with self._lock:
            return self.server.resend_update_auth(client_id)

    def serve_tcp(self, host: str, port: int, max_frame_bytes: int) -> TcpListener:
        self._listener = TcpListener(host, port, self.attach, max_frame_bytes)
        self._listener.start()
        return self._listener

    def _read_loop(self, client_id: int, channel: Channel) -> None:
        while self._running.is_set():
            try:
                data = channel.recv()
            except ChannelClosedError:
                break
            with self._lock:
                self.bytes_received += len(data)
            try:
                message = self.codec.decode(data)
            except DecodeError as e:
                self.logger.warning(f"Dropping client {client_id}: undecodable message ({e})")
                channel.close()
                break
            self.intake.put(client_id, message)
        self._detach(client_id, channel)

    def _detach(self, client_id: int, channel: Channel) -> None:
        with self._lock:
            if self._channels.get(client_id) is channel:
                del self._channels[client_id]
        self.logger.debug(f"Client {client_id} disconnected")

    def _process_loop(self) -> None:
        while self._running.is_set():
            item = self.intake.get(timeout=0.5)
            if item is None:
                continue
            sender, message = item
            try:
                with self._lock:
                    outbound = self.server.handle(sender, message)
            except ProtocolViolation as e:
                self.logger.warning(f"Dropping client {sender}: {e}")
                self._drop(sender)
                continue
            except IntegrityError as e:
                self.logger.critical(f"Server state diverged from the authenticated state: {e}")
                self.failure = e
                self._shutdown()
                return
            except Exception as e:
                self.logger.error(f"Server failed handling {message.kind.label} from {sender}: {e}")
                continue
            self._send_all(outbound)

    def _drop(self, client_id: int) -> None:
        with self._lock:
            channel = self._channels.get(client_id)
        if channel is not None:
            channel.close()
            self._detach(client_id, channel)

    def _send_all(self, outbound: List[Outbound]) -> None:
        for recipient, message in outbound:
            with self._lock:
                channel = self._channels.get(recipient)
            if channel is None:
                self.logger.debug(f"Client {recipient} offline; {message.kind.label} not delivered")
                continue
            data = self.codec.encode(message)
            try:
                channel.send(data)
            except ChannelClosedError as e:
                self.logger.debug(f"Send to client {recipient} failed: {e}")
                continue
            with self._lock:
                self.bytes_sent += len(data)

    @property
    def running(self) -> bool:
        return self._running.is_set()

    def wait_stopped(self, timeout: Optional[float] = None) -> bool:
        """Block until the runtime has shut down, by stop() or a fatal integrity failure."""
        return self._stopped.wait(timeout)

    def _shutdown(self) -> None:
        """Stop accepting work and close every channel; safe from any thread."""
        self._running.clear()
        self.intake.close()
        if self._listener is not None:
            self._listener.stop()
        with self._lock:
            channels = list(self._channels.values())
            self._channels.clear()
        for channel in channels:
            channel.close()
        self._stopped.set()

    def stop(self) -> None:
        self._shutdown()
        if self._loop is not None:
            self._loop.join(timeout=2.0)
        for reader in self._readers:
            reader.join(timeout=2.0)


class ClientConnection:
    """Blocking invoke() over a channel; a reader thread answers update-auth messages."""

    def __init__(self, client: AipClient, channel: Channel, codec: MessageCodec,
                 config: Optional[Dict[str, Any]] = None):
        self.logger = logging.getLogger(__name__)
        self.client = client
        self.channel = channel
        self.codec = codec
        self.config = config or {}
        self.timeout = self.config.get('transport', {}).get('recv_timeout_s', 30.0)
        self._results: queue.Queue = queue.Queue()
        self._invoke_lock = threading.Lock()
        self._state_lock = threading.Condition()
        self._reader: Optional[threading.Thread] = None
        self._closed = False
        self._bytes_lock = threading.Lock()
        self.bytes_sent = 0
        self.bytes_received = 0

    @property
    def client_id(self) -> int:
        return self.client.client_id

    @property
    def alarm(self) -> Optional[FaultAlarm]:
        return self.client.alarm

    def start(self) -> "ClientConnection":
        self._reader = threading.Thread(target=self._read_loop,
                                        name=f"aip-client-{self.client_id}", daemon=True)
        self._reader.start()
        return self

    def invoke(self, op: Any, timeout: Optional[float] = None) -> Any:
        """Run op through the active phase; returns its response or ABORT."""
        with self._invoke_lock:
            with self._state_lock:
                message = self.client.begin_invoke(op)
            self._send(self.codec.encode(message))
            try:
                result = self._results.get(timeout=timeout or self.timeout)
            except queue.Empty:
                raise TimeoutError(f"Client {self.client_id}: no reply for {op}")
            if isinstance(result, BaseException):
                raise result
            return result

    def drain(self, timeout: float = 5.0) -> bool:
        """Wait until every own committed op has been authenticated."""
        with self._state_lock:
            return self._state_lock.wait_for(
                lambda: not self.client.outstanding or self.client.halted or self._closed,
                timeout=timeout) and not self.client.outstanding

    def _send(self, data: bytes) -> None:
        self.channel.send(data)
        with self._bytes_lock:
            self.bytes_sent += len(data)

    def _read_loop(self) -> None:
        while not self._closed:
            try:
                data = self.channel.recv()
            except ChannelClosedError as e:
                self._results.put(e)
                break
            self.bytes_received += len(data)

            with self._state_lock:
                try:
                    try:
                        message = self.codec.decode(data)
                    except DecodeError as e:
                        raise self.client.reject_garbled(e)
                    step = self.client.receive(message)
                except FaultAlarm as alarm:
                    self._results.put(alarm)
                    self._state_lock.notify_all()
                    break
                try:
                    self._send(self.codec.encode(step.outbound))
                except ChannelClosedError as e:
                    self._results.put(e)
                    break
                if step.completed:
                    self._results.put(step.response)
                self._state_lock.notify_all()

    def close(self) -> None:
        self._closed = True
        self.channel.close()
        with self._state_lock:
            self._state_lock.notify_all()
        if self._reader is not None and self._reader is not threading.current_thread():
            self._reader.join(timeout=2.0)
