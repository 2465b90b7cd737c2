"""
Pytest configuration and fixtures for vicos tests
"""

import pytest
import json
import tempfile
from collections import Counter, deque
from pathlib import Path
from typing import Dict, Any

from src.core.adict import Adict
from src.core.crypto import SignatureScheme
from src.protocol.chain import build_genesis, provision_keyring
from src.protocol.client import AipClient
from src.protocol.messages import MessageCodec
from src.protocol.server import AipServer, Outbound


SCENARIO_DIR = Path(__file__).parent.parent / "scenarios"


@pytest.fixture
def test_config() -> Dict[str, Any]:
    """Provide test configuration."""
    return {
        "app": {
            "name": "vicos-test",
            "version": "0.3.0-test"
        },
        "logging": {
            "level": "DEBUG",
            "file": None
        },
        "crypto": {
            "hash": "sha256",
            "mode": "mac"
        },
        "protocol": {
            "query_fast_path": False,
            "prune_aborted": False,
            "pending_limit": 128,
            "retry": {"attempts": 3, "base_delay_ms": 1, "max_delay_ms": 5}
        },
        "server": {
            "host": "127.0.0.1",
            "port": 0
        },
        "transport": {
            "recv_timeout_s": 10.0,
            "max_frame_bytes": 16 * 1024 * 1024
        },
        "vicos": {
            "backend": "memory",
            "max_object_mb": 4,
            "gc_grace_s": 0
        },
        "harness": {
            "search_budget": 200000,
            "scenario_dir": str(SCENARIO_DIR)
        },
        "bench": {
            "clients": 4,
            "objects": 16,
            "object_size": 256,
            "op_count": 40,
            "warmup_s": 0.2,
            "measure_s": 0.5
        }
    }


@pytest.fixture
def fast_path_config(test_config) -> Dict[str, Any]:
    """Configuration with the query fast path enabled."""
    test_config["protocol"]["query_fast_path"] = True
    return test_config


@pytest.fixture
def temp_config_file(test_config) -> Path:
    """Create temporary config file."""
    with tempfile.NamedTemporaryFile(mode='w', suffix='.json', delete=False) as f:
        json.dump(test_config, f, indent=2)
        return Path(f.name)


@pytest.fixture
def adict() -> Adict:
    return Adict()


@pytest.fixture
def keyring(adict):
    """MAC key ring for clients 1..4 with a signed genesis record."""
    return provision_keyring(SignatureScheme.MAC, 4, adict)


@pytest.fixture(scope="session")
def pk_keyring():
    """Ed25519 key ring for clients 1..3 (key generation is slow-ish, share it)."""
    return provision_keyring(SignatureScheme.PUBLIC_KEY, 3, Adict())


@pytest.fixture
def genesis(keyring, adict):
    return build_genesis(keyring, adict)


@pytest.fixture
def scenario_dir() -> Path:
    return SCENARIO_DIR


class LoopbackNetwork:
    """
    Drives clients and server views directly, passing every message
    through the wire codec. Replies can be held and delivered later to
    build concurrent interleavings.
    """

    def __init__(self, ads, keyring, config=None, journal=None):
        self.ads = ads
        self.keyring = keyring
        self.config = config or {}
        self.codec = MessageCodec(ads)
        self.genesis = build_genesis(keyring, ads)
        self.servers = [AipServer(ads, keyring, self.genesis, self.config, journal)]
        self.route = {}
        self.clients = {}
        self.counts = Counter()

    @property
    def server(self):
        return self.servers[0]

    def client(self, client_id, compatibility=None):
        if client_id not in self.clients:
            self.clients[client_id] = AipClient(client_id, self.ads, self.keyring,
                                                self.genesis, self.config, compatibility)
            self.route[client_id] = 0
        return self.clients[client_id]

    def wire(self, message):
        self.counts[message.kind.label] += 1
        return self.codec.decode(self.codec.encode(message))

    def to_server(self, client_id, message):
        server = self.servers[self.route[client_id]]
        return [Outbound(r, self.wire(m)) for r, m in server.handle(client_id, self.wire(message))]

    def submit(self, client_id, op):
        """Send an invoke; returns the server's outbound messages undelivered."""
        return self.to_server(client_id, self.client(client_id).begin_invoke(op))

    def pump(self, outbound):
        """Deliver messages until quiet; returns the response each client completed with."""
        responses = {}
        pending = deque(outbound)
        while pending:
            recipient, message = pending.popleft()
            step = self.clients[recipient].receive(message)
            if step.completed:
                responses[recipient] = step.response
            pending.extend(self.to_server(recipient, step.outbound))
        return responses

    def run(self, client_id, op):
        return self.pump(self.submit(client_id, op))[client_id]


@pytest.fixture
def network(adict, keyring, test_config):
    """Loopback network over the MAC key ring with the fast path off."""
    return LoopbackNetwork(adict, keyring, test_config)


@pytest.fixture
def make_network(adict, test_config):
    """Factory for loopback networks with a custom key ring, config or journal."""
    def factory(keyring, config=None, journal=None):
        return LoopbackNetwork(adict, keyring, config or test_config, journal)
    return factory
