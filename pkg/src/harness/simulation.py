"""
Deterministic multi-client simulation
Clients, server views and per-direction channels are driven by a seeded
scheduler; the same seed replays the same interleaving.
"""

import logging
import random
import time
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import (Any, Callable, Deque, Dict, List, Mapping, Optional,
                    Sequence, Tuple)

from ..core.adict import Operation
from ..core.ads import AuthenticatedDataStructure
from ..core.codec import DecodeError
from ..core.crypto import KeyRing
from ..protocol.chain import Status, build_genesis
from ..protocol.client import AipClient, Compatibility, FaultAlarm
from ..protocol.messages import MessageCodec, MessageKind, ProtocolMessage
from ..protocol.server import AipServer, ProtocolViolation
from ..storage.cos import CosBackend
from ..storage.vicos import OperationTask, VicosSession


OpId = Tuple[int, int]

PRIORITY_KIND_CODES = {MessageKind.COMMIT.value, MessageKind.UPDATE_AUTH.value,
                       MessageKind.COMMIT_AUTH.value}


@dataclass
class HistoryEntry:
    """One task as its client saw it: invocation and (maybe) response."""
    op_id: OpId
    client_id: int
    operation: Operation
    invoked_at: int
    responded_at: Optional[int] = None
    response: Any = None
    started_ns: int = 0
    finished_ns: Optional[int] = None

    @property
    def completed(self) -> bool:
        return self.responded_at is not None

    @property
    def latency_us(self) -> Optional[float]:
        if self.finished_ns is None:
            return None
        return (self.finished_ns - self.started_ns) / 1000.0


class History:
    """Per-client ordered invocation/response events, with logical times."""

    def __init__(self):
        self.entries: List[HistoryEntry] = []

    def begin(self, op_id: OpId, operation: Operation, clock: int) -> HistoryEntry:
        entry = HistoryEntry(op_id, op_id[0], operation, clock,
                             started_ns=time.perf_counter_ns())
        self.entries.append(entry)
        return entry

    def for_client(self, client_id: int) -> List[HistoryEntry]:
        return [e for e in self.entries if e.client_id == client_id]

    def completed(self) -> List[HistoryEntry]:
        return [e for e in self.entries if e.completed]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class Task:
    """A client-level operation: a description plus the generator that runs it."""
    operation: Operation
    factory: Callable[[], OperationTask]


def _single_op(op: Operation) -> OperationTask:
    return (yield op)


def aip_task(op: Operation) -> Task:
    return Task(op, lambda: _single_op(op))


def vicos_task(session: VicosSession, op: Operation) -> Task:
    """VICOS counterpart of a dictionary operation on string keys."""
    key = op.key.decode("utf-8") if op.key is not None else None
    factories = {
        "PUT": lambda: session.put_task(key, op.value),
        "GET": lambda: session.get_task(key),
        "DEL": lambda: session.delete_task(key),
        "LIST": lambda: session.list_task(),
    }
    return Task(op, factories[op.kind.name])


def parse_step(line: str) -> Operation:
    """'put k v' | 'get k' | 'del k' | 'list'."""
    parts = line.split()
    if not parts:
        raise ValueError("Empty workload step")
    verb = parts[0].lower()
    if verb == "put" and len(parts) == 3:
        return Operation.put(parts[1].encode(), parts[2].encode())
    if verb == "get" and len(parts) == 2:
        return Operation.get(parts[1].encode())
    if verb in ("del", "delete") and len(parts) == 2:
        return Operation.delete(parts[1].encode())
    if verb == "list" and len(parts) == 1:
        return Operation.list()
    raise ValueError(f"Cannot parse workload step: {line!r}")


def random_operations(client_id: int, count: int, keys: int, rng: random.Random,
                      write_ratio: float = 0.4, delete_ratio: float = 0.1,
                      list_ratio: float = 0.05) -> List[Operation]:
    """Random dictionary operations with values unique per client and step."""
    ops = []
    for step in range(count):
        key = f"k{rng.randrange(keys)}".encode()
        roll = rng.random()
        if roll < list_ratio:
            ops.append(Operation.list())
        elif roll < list_ratio + delete_ratio:
            ops.append(Operation.delete(key))
        elif roll < list_ratio + delete_ratio + write_ratio:
            ops.append(Operation.put(key, f"v{client_id}.{step}".encode()))
        else:
            ops.append(Operation.get(key))
    return ops


@dataclass
class Delivery:
    """Bytes queued for a client, tagged with the server view that produced them."""
    data: bytes
    view: int
    kind: MessageKind
    mutated: bool = False


@dataclass(frozen=True)
class ViewEntry:
    """An operation as it appears in some client's view."""
    op_id: OpId
    client_id: int
    operation: Operation
    response: Any
    invoked_at: Optional[int] = None
    responded_at: Optional[int] = None


class ClientDriver:
    """Feeds one client its tasks, one at a time."""

    def __init__(self, client: AipClient, tasks: Sequence[Task]):
        self.client = client
        self.tasks: Deque[Task] = deque(tasks)
        self.task_count = 0
        self.aip_count = 0
        self.current_task: Optional[OperationTask] = None
        self.current_entry: Optional[HistoryEntry] = None
        self.current_aip: Optional[OpId] = None
        self.last_completed: Optional[Tuple[int, int]] = None

    @property
    def client_id(self) -> int:
        return self.client.client_id

    @property
    def can_start(self) -> bool:
        return self.current_task is None and bool(self.tasks) and not self.client.halted


@dataclass
class SimulationOutcome:
    history: History
    alarms: Dict[int, FaultAlarm]
    views: Dict[int, List[ViewEntry]]
    message_counts: Counter
    steps: int
    applied_mutations: int = 0
    detected_mutations: int = 0


class Simulation:
    """Seeded scheduler over clients, server views and channels."""

    def __init__(self, ads: AuthenticatedDataStructure, keyring: KeyRing,
                 workload: Mapping[int, Sequence[Task]], seed: int = 0,
                 config: Optional[Dict[str, Any]] = None,
                 compatibility: Optional[Compatibility] = None,
                 priority_bias: float = 0.0,
                 cos: Optional[CosBackend] = None):
        self.logger = logging.getLogger(__name__)
        self.rng = random.Random(seed)
        self.ads = ads
        self.codec = MessageCodec(ads)
        self.config = config or {}
        self.priority_bias = priority_bias
        self.cos = cos
        self.interposer: Any = None

        genesis = build_genesis(keyring, ads)
        self.servers: List[AipServer] = [AipServer(ads, keyring, genesis, self.config)]
        self.sequence_logs: List[Dict[int, OpId]] = [{}]
        self.route: Dict[int, int] = {}
        self.drivers: Dict[int, ClientDriver] = {}
        self.to_server: Dict[int, Deque[bytes]] = {}
        self.to_client: Dict[int, Deque[Delivery]] = {}
        for client_id in sorted(workload):
            client = AipClient(client_id, ads, keyring, genesis, self.config, compatibility)
            self.drivers[client_id] = ClientDriver(client, workload[client_id])
            self.route[client_id] = 0
            self.to_server[client_id] = deque()
            self.to_client[client_id] = deque()

        self.clock = 0
        self.history = History()
        self.message_counts: Counter = Counter()
        self.bytes_on_wire = 0
        self.alarms: Dict[int, FaultAlarm] = {}
        self.aip_ops: Dict[OpId, Operation] = {}
        self.aip_status: Dict[OpId, Status] = {}
        self.aip_responses: Dict[OpId, Any] = {}
        # Logical times of each protocol op, for real-time order in views
        self.aip_invoked_at: Dict[OpId, int] = {}
        self.aip_responded_at: Dict[OpId, int] = {}
        self.applied_mutations = 0
        self.detected_mutations = 0

        self.fork_groups: List[List[int]] = []
        self.fork_seqno: Optional[int] = None
        self.post_fork_completions: List[int] = []

    # Scheduling

    def _enabled(self) -> Tuple[List[Tuple[str, int]], List[Tuple[str, int]]]:
        priority, normal = [], []
        for client_id, driver in self.drivers.items():
            if driver.can_start:
                normal.append(("start", client_id))
            outgoing = self.to_server[client_id]
            if outgoing:
                target = priority if outgoing[0][1] in PRIORITY_KIND_CODES else normal
                target.append(("server", client_id))
            incoming = self.to_client[client_id]
            if incoming:
                target = priority if incoming[0].kind.value in PRIORITY_KIND_CODES else normal
                target.append(("client", client_id))
        return priority, normal

    def step(self) -> bool:
        priority, normal = self._enabled()
        if not priority and not normal:
            return False
        if priority and (not normal or self.rng.random() < self.priority_bias):
            pool = priority
        else:
            pool = priority + normal
        action, client_id = self.rng.choice(pool)

        self.clock += 1
        if action == "start":
            self._start_task(self.drivers[client_id])
        elif action == "server":
            self._deliver_to_server(client_id)
        else:
            self._deliver_to_client(client_id)
        return True

    def run(self, max_steps: int = 2_000_000) -> SimulationOutcome:
        steps = 0
        while steps < max_steps and self.step():
            steps += 1
        if steps >= max_steps:
            self.logger.warning(f"Simulation stopped after {max_steps} steps")
        return SimulationOutcome(self.history, dict(self.alarms), self.client_views(),
                                 self.message_counts, steps,
                                 self.applied_mutations, self.detected_mutations)

    # Client side

    def _start_task(self, driver: ClientDriver) -> None:
        task = driver.tasks.popleft()
        op_id = (driver.client_id, driver.task_count)
        driver.task_count += 1
        driver.current_entry = self.history.begin(op_id, task.operation, self.clock)
        driver.current_task = task.factory()
        self._advance_task(driver, None, first=True)

    def _advance_task(self, driver: ClientDriver, value: Any, first: bool = False) -> None:
        try:
            op = next(driver.current_task) if first else driver.current_task.send(value)
        except StopIteration as stop:
            entry = driver.current_entry
            entry.responded_at = self.clock
            entry.response = stop.value
            entry.finished_ns = time.perf_counter_ns()
            driver.current_task = None
            driver.current_entry = None
            return
        except FaultAlarm as alarm:
            self._record_alarm(driver, alarm)
            return

        op_id = (driver.client_id, driver.aip_count)
        driver.aip_count += 1
        driver.current_aip = op_id
        self.aip_ops[op_id] = op
        self.aip_invoked_at[op_id] = self.clock
        self._send_to_server(driver.client_id, driver.client.begin_invoke(op))

    def _send_to_server(self, client_id: int, message: ProtocolMessage) -> None:
        data = self.codec.encode(message)
        self.to_server[client_id].append(data)
        self.message_counts[message.kind.label] += 1
        self.bytes_on_wire += len(data)

    def _deliver_to_client(self, client_id: int) -> None:
        delivery = self.to_client[client_id].popleft()
        driver = self.drivers[client_id]
        if driver.client.halted:
            return
        try:
            try:
                message = self.codec.decode(delivery.data)
            except DecodeError as e:
                raise driver.client.reject_garbled(e)
            step = driver.client.receive(message)
        except FaultAlarm as alarm:
            self._record_alarm(driver, alarm, delivery)
            return
        if delivery.mutated:
            self.logger.warning(f"Client {client_id} accepted a mutated {delivery.kind.label}")

        self._send_to_server(client_id, step.outbound)
        if step.completed:
            op_id = driver.current_aip
            seqno = step.outbound.seqno
            self.aip_status[op_id] = step.outbound.status
            self.aip_responses[op_id] = step.response
            self.aip_responded_at[op_id] = self.clock
            driver.last_completed = (delivery.view, seqno)
            self._note_post_fork_completion(client_id, seqno)
            self._advance_task(driver, step.response)

    def _record_alarm(self, driver: ClientDriver, alarm: FaultAlarm,
                      delivery: Optional[Delivery] = None) -> None:
        self.alarms[driver.client_id] = driver.client.halt(alarm)
        driver.current_task = None
        driver.current_entry = None
        if delivery is not None and delivery.mutated:
            self.detected_mutations += 1
        self.logger.info(f"Client {driver.client_id} raised {alarm.kind.value} at step {self.clock}")

    # Server side

    def _deliver_to_server(self, client_id: int) -> None:
        data = self.to_server[client_id].popleft()
        message = self.codec.decode(data)
        view = self.route[client_id]
        server = self.servers[view]
        before = server.invoked
        try:
            outbound = server.handle(client_id, message)
        except ProtocolViolation as e:
            self.logger.warning(f"View {view} rejected message from client {client_id}: {e}")
            return

        log = self.sequence_logs[view]
        for seqno in range(before + 1, server.invoked + 1):
            owner = server.pending[seqno].client_id
            log[seqno] = self.drivers[owner].current_aip

        for recipient, reply in outbound:
            self._send_to_client(view, recipient, reply)

    def _send_to_client(self, view: int, recipient: int, message: ProtocolMessage) -> None:
        data = self.codec.encode(message)
        deliveries = [Delivery(data, view, message.kind)]
        if self.interposer is not None:
            deliveries = self.interposer.intercept(view, recipient, message, deliveries[0])
        for delivery in deliveries:
            self.to_client[recipient].append(delivery)
            self.message_counts[message.kind.label] += 1
            self.bytes_on_wire += len(delivery.data)

    # Forking adversary support

    def fork(self, groups: Sequence[Sequence[int]]) -> None:
        """Give every group after the first its own copy of the primary view."""
        self.fork_groups = [list(g) for g in groups]
        self.fork_seqno = self.servers[0].invoked
        self.post_fork_completions = [0] * len(groups)
        for group in self.fork_groups[1:]:
            self.servers.append(self.servers[0].fork())
            self.sequence_logs.append(dict(self.sequence_logs[0]))
            view = len(self.servers) - 1
            for client_id in group:
                self.route[client_id] = view
        self.logger.info(f"Forked into {len(groups)} views at seqno {self.fork_seqno}")

    def join(self) -> None:
        """Route every client back to the primary view."""
        for client_id in self.route:
            self.route[client_id] = 0
        self.logger.info("Joined all clients onto the primary view")

    def fork_ready(self) -> bool:
        """Every fork group completed an operation sequenced after the fork."""
        return bool(self.fork_groups) and all(n > 0 for n in self.post_fork_completions)

    def _note_post_fork_completion(self, client_id: int, seqno: int) -> None:
        if self.fork_seqno is None or seqno <= self.fork_seqno:
            return
        for index, group in enumerate(self.fork_groups):
            if client_id in group:
                self.post_fork_completions[index] += 1

    # Views

    def client_views(self) -> Dict[int, List[ViewEntry]]:
        """Successful ops in seqno order up to each client's last completed op."""
        views: Dict[int, List[ViewEntry]] = {}
        for client_id, driver in self.drivers.items():
            views[client_id] = []
            if driver.last_completed is None:
                continue
            view, cut = driver.last_completed
            log = self.sequence_logs[view]
            for seqno in sorted(s for s in log if s <= cut):
                op_id = log[seqno]
                if self.aip_status.get(op_id) is Status.SUCCESS:
                    views[client_id].append(ViewEntry(
                        op_id, op_id[0], self.aip_ops[op_id], self.aip_responses.get(op_id),
                        self.aip_invoked_at.get(op_id), self.aip_responded_at.get(op_id)))
        return views
