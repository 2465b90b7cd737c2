"""
Benchmark workloads and statistics
Clients issue Zipf-distributed VICOS reads and writes over a fixed object
set; every operation is classified as success or abort and timed.
"""

import csv
import logging
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np
import psutil

from ..core.adict import Adict, Operation
from ..core.ads import ABORT
from ..core.crypto import KeyRing, SignatureScheme
from ..harness.simulation import Simulation, Task, vicos_task
from ..protocol.chain import build_genesis, provision_keyring
from ..protocol.client import AipClient
from ..protocol.messages import MessageCodec
from ..protocol.runtime import ClientConnection, ServerRuntime
from ..protocol.server import AipServer
from ..storage.cos import CosBackend, InMemoryCos
from ..storage.vicos import NONCE_BYTES, VicosClient, VicosSession
from ..transport.channel import InProcessChannel
from .acop import commutative_compatibility
from .zipf import BenchConfigError, ZipfGenerator


logger = logging.getLogger(__name__)

CONFLICT_MODES = ("compatible", "commutative")
CSV_COLUMNS = ["op_kind", "count", "success", "abort", "p50_us", "p95_us", "p99_us",
               "throughput_bps"]


class BenchAlarmError(Exception):
    """A fault alarm was raised during a benign benchmark."""
    pass


def object_key(index: int) -> str:
    return f"obj-{index:04d}"


@dataclass
class WorkloadSpec:
    clients: int = 16
    objects: int = 64
    object_size: int = 10 * 1024
    read_ratio: float = 0.5
    zipf_theta: float = 0.0
    op_count: int = 250
    warmup_s: float = 5.0
    measure_s: float = 10.0
    conflict_mode: str = "compatible"
    seed: int = 0

    def __post_init__(self):
        if self.clients < 1:
            raise BenchConfigError(f"Need at least one client, got {self.clients}")
        if self.objects < 1:
            raise BenchConfigError(f"Need at least one object, got {self.objects}")
        if self.object_size < 0:
            raise BenchConfigError(f"Object size cannot be negative: {self.object_size}")
        if not 0.0 <= self.read_ratio <= 1.0:
            raise BenchConfigError(f"Read ratio must lie in [0, 1], got {self.read_ratio}")
        if not 0.0 <= self.zipf_theta < 1.0:
            raise BenchConfigError(f"Zipf theta must lie in [0, 1), got {self.zipf_theta}")
        if self.op_count < 0:
            raise BenchConfigError(f"Operation count cannot be negative: {self.op_count}")
        if self.conflict_mode not in CONFLICT_MODES:
            raise BenchConfigError(f"Unknown conflict mode: {self.conflict_mode}")

    @classmethod
    def from_config(cls, config: Dict[str, Any], **overrides: Any) -> "WorkloadSpec":
        bench_config = config.get('bench', {})
        values = {name: bench_config[name] for name in cls.__dataclass_fields__
                  if name in bench_config}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass
class KindStats:
    count: int = 0
    success: int = 0
    abort: int = 0
    bytes: int = 0
    latencies_us: List[float] = field(default_factory=list)

    def quantiles(self) -> Dict[str, float]:
        if not self.latencies_us:
            return {"p50_us": 0.0, "p95_us": 0.0, "p99_us": 0.0}
        p50, p95, p99 = np.percentile(np.asarray(self.latencies_us), [50, 95, 99])
        return {"p50_us": float(p50), "p95_us": float(p95), "p99_us": float(p99)}

    @property
    def success_rate(self) -> float:
        return self.success / self.count if self.count else 1.0


class RunStats:
    """Per-kind counts and latencies plus a per-object access histogram."""

    def __init__(self, objects: int):
        self.per_kind: Dict[str, KindStats] = {"get": KindStats(), "put": KindStats()}
        self.histogram = np.zeros(objects, dtype=np.int64)
        self.elapsed_s = 0.0
        self.rss_bytes = 0
        self._lock = threading.Lock()

    def record(self, kind: str, object_index: int, aborted: bool,
               latency_us: float, size: int) -> None:
        with self._lock:
            stats = self.per_kind.setdefault(kind, KindStats())
            stats.count += 1
            if aborted:
                stats.abort += 1
            else:
                stats.success += 1
                stats.bytes += size
            stats.latencies_us.append(latency_us)
            self.histogram[object_index] += 1

    @property
    def count(self) -> int:
        return sum(s.count for s in self.per_kind.values())

    def success_rate(self, kind: str) -> float:
        return self.per_kind[kind].success_rate

    def throughput_bps(self, kind: Optional[str] = None) -> float:
        if self.elapsed_s <= 0:
            return 0.0
        kinds = [self.per_kind[kind]] if kind else self.per_kind.values()
        return sum(s.bytes for s in kinds) / self.elapsed_s

    def rows(self) -> List[Dict[str, Any]]:
        rows = []
        for kind, stats in sorted(self.per_kind.items()):
            row = {"op_kind": kind, "count": stats.count, "success": stats.success,
                   "abort": stats.abort, "throughput_bps": self.throughput_bps(kind)}
            row.update(stats.quantiles())
            rows.append(row)
        return rows

    def write_csv(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.DictWriter(handle, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            writer.writerows(self.rows())
        logger.info(f"Wrote benchmark results to {path}")

    def summary(self) -> Dict[str, Any]:
        return {
            "operations": self.count,
            "elapsed_s": round(self.elapsed_s, 3),
            "success_rate": {k: round(s.success_rate, 4) for k, s in self.per_kind.items()},
            "rss_mb": round(self.rss_bytes / 1024 / 1024, 1),
        }


def _process_rss() -> int:
    return psutil.Process(os.getpid()).memory_info().rss


def plan_operations(spec: WorkloadSpec, client_id: int) -> List[Operation]:
    """Seeded per-client sequence of object reads and writes."""
    rng = random.Random(spec.seed * 1_000_003 + client_id)
    zipf = ZipfGenerator(spec.objects, spec.zipf_theta,
                         np.random.default_rng(spec.seed * 1_000_003 + client_id))
    payload = rng.randbytes(spec.object_size)
    ops = []
    for rank in zipf.sample(spec.op_count):
        key = object_key(int(rank) - 1).encode()
        if rng.random() < spec.read_ratio:
            ops.append(Operation.get(key))
        else:
            ops.append(Operation.put(key, payload))
    return ops


def preload_operations(spec: WorkloadSpec, client_id: int) -> List[Operation]:
    """Each client first writes its round-robin share of the objects."""
    payload = bytes(spec.object_size)
    return [Operation.put(object_key(i).encode(), payload)
            for i in range(client_id - 1, spec.objects, spec.clients)]


def _compatibility(spec: WorkloadSpec) -> Optional[Callable]:
    return commutative_compatibility if spec.conflict_mode == "commutative" else None


def _object_index(op: Operation) -> int:
    return int(op.key.decode("utf-8").rsplit("-", 1)[1])


def run_simulated_bench(spec: WorkloadSpec, config: Optional[Dict[str, Any]] = None,
                        keyring: Optional[KeyRing] = None) -> RunStats:
    """
    Conflict experiment under the deterministic scheduler: abort rates
    depend only on the seed, never on machine speed.
    """
    ads = Adict()
    keyring = keyring or provision_keyring(SignatureScheme.MAC, spec.clients, ads)
    cos = InMemoryCos()
    nonce_rng = random.Random(spec.seed)
    session = VicosSession(cos, ads.hash_fn, config,
                           nonce_source=lambda: nonce_rng.randbytes(NONCE_BYTES))

    workload: Dict[int, List[Task]] = {}
    warmup: Dict[int, int] = {}
    for client_id in range(1, spec.clients + 1):
        preload = preload_operations(spec, client_id)
        warmup[client_id] = len(preload)
        workload[client_id] = [vicos_task(session, op)
                               for op in preload + plan_operations(spec, client_id)]

    started = time.perf_counter()
    sim = Simulation(ads, keyring, workload, seed=spec.seed, config=config,
                     compatibility=_compatibility(spec), priority_bias=1.0, cos=cos)
    outcome = sim.run()
    if outcome.alarms:
        raise BenchAlarmError(f"Benign benchmark raised alarms: {outcome.alarms}")

    stats = RunStats(spec.objects)
    stats.elapsed_s = time.perf_counter() - started
    for entry in outcome.history.entries:
        if entry.op_id[1] < warmup[entry.client_id] or not entry.completed:
            continue
        kind = entry.operation.kind.name.lower()
        stats.record(kind, _object_index(entry.operation), entry.response is ABORT,
                     entry.latency_us or 0.0, spec.object_size)
    stats.rss_bytes = _process_rss()
    logger.info(f"Simulated bench theta={spec.zipf_theta} mode={spec.conflict_mode}: "
                f"{stats.summary()}")
    return stats


def local_cluster(clients: int, config: Optional[Dict[str, Any]] = None,
                  compatibility: Optional[Callable] = None,
                  cos: Optional[CosBackend] = None) -> Tuple[ServerRuntime, Dict[int, VicosClient]]:
    """In-process server runtime with VICOS clients 1..clients on a shared store."""
    ads = Adict()
    keyring = provision_keyring(SignatureScheme.MAC, clients, ads)
    genesis = build_genesis(keyring, ads)
    codec = MessageCodec(ads)
    runtime = ServerRuntime(AipServer(ads, keyring, genesis, config), codec, config)
    runtime.start()

    cos = cos if cos is not None else InMemoryCos()
    vicos_clients = {}
    for client_id in range(1, clients + 1):
        server_end, client_end = InProcessChannel.pair()
        runtime.attach(client_id, server_end)
        client = AipClient(client_id, ads, keyring, genesis, config, compatibility)
        connection = ClientConnection(client, client_end, codec, config).start()
        vicos_clients[client_id] = VicosClient(connection, cos, config)
    return runtime, vicos_clients


def close_cluster(runtime: Optional[ServerRuntime], clients: Mapping[int, VicosClient]) -> None:
    for client in clients.values():
        client.connection.drain()
        client.connection.close()
    if runtime is not None:
        runtime.stop()


def run_live_bench(spec: WorkloadSpec, clients: Mapping[int, Any]) -> RunStats:
    """
    Drive connected VICOS clients from one thread each for the warm-up and
    measurement windows; only operations started inside the measurement
    window are recorded.
    """
    stats = RunStats(spec.objects)
    start = time.monotonic()
    measure_from = start + spec.warmup_s
    deadline = measure_from + spec.measure_s
    failures: List[BaseException] = []

    def worker(client_id: int, client: Any) -> None:
        for op in preload_operations(spec, client_id):
            client.put(op.key.decode("utf-8"), op.value)
        planned = plan_operations(replace(spec, op_count=max(spec.op_count, 1)), client_id)
        position = 0
        while time.monotonic() < deadline:
            op = planned[position % len(planned)]
            position += 1
            key = op.key.decode("utf-8")
            began = time.monotonic()
            try:
                result = client.get(key) if op.value is None else client.put(key, op.value)
            except Exception as e:
                failures.append(e)
                return
            if began >= measure_from:
                stats.record(op.kind.name.lower(), _object_index(op), result is ABORT,
                             (time.monotonic() - began) * 1e6, spec.object_size)

    with ThreadPoolExecutor(max_workers=len(clients), thread_name_prefix="bench") as pool:
        for client_id, client in clients.items():
            pool.submit(worker, client_id, client)

    stats.elapsed_s = spec.measure_s
    stats.rss_bytes = _process_rss()
    if failures:
        raise BenchAlarmError(f"Benchmark client failed: {failures[0]!r}") from failures[0]
    logger.info(f"Live bench theta={spec.zipf_theta}: {stats.summary()}")
    return stats


def sweep_theta(spec: WorkloadSpec, thetas: List[float],
                config: Optional[Dict[str, Any]] = None) -> Dict[str, Dict[float, RunStats]]:
    """The conflict experiment: both modes at each skew."""
    results: Dict[str, Dict[float, RunStats]] = {}
    for mode in CONFLICT_MODES:
        results[mode] = {theta: run_simulated_bench(replace(spec, zipf_theta=theta,
                                                            conflict_mode=mode), config)
                         for theta in thetas}
    return results
