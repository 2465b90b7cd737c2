"""
Unit tests for the AIP server
"""

import copy

import pytest

from src.core.adict import Operation
from src.core.ads import ABORT
from src.core.crypto import Signature, SignatureScheme
from src.protocol.chain import provision_keyring
from src.protocol.journal import JournalError, ServerJournal
from src.protocol.messages import (CommitAuthMessage, MessageCodec,
                                   UpdateAuthMessage)
from src.protocol.server import AipServer, ProtocolViolation


def put(key, value):
    return Operation.put(key.encode(), value.encode())


def get(key):
    return Operation.get(key.encode())


class TestMessageHandling:
    """Test cases for AipServer.handle."""

    def test_invoke_signature_checked(self, network):
        """Invokes signed by another client are refused."""
        invoke = network.client(2).begin_invoke(get("a"))
        with pytest.raises(ProtocolViolation):
            network.server.handle(1, invoke)
        assert network.server.invoked == 0

    def test_commit_by_non_owner(self, network):
        """Only the invoking client may commit a sequence number."""
        network.client(2)
        (_, reply), = network.submit(1, put("a", "1"))
        commit = network.clients[1].receive(reply).outbound
        with pytest.raises(ProtocolViolation):
            network.server.handle(2, commit)

    def test_duplicate_commit_ignored(self, network):
        """A commit for an already applied sequence number is a no-op."""
        (_, reply), = network.submit(1, put("a", "1"))
        commit = network.clients[1].receive(reply).outbound
        network.pump(network.to_server(1, commit))
        assert network.server.applied == 1
        assert network.server.handle(1, commit) == []

    def test_unexpected_messages(self, network):
        """Replies and unsolicited commit-auths are refused."""
        (_, reply), = network.submit(1, put("a", "1"))
        with pytest.raises(ProtocolViolation):
            network.server.handle(1, reply)
        stray = CommitAuthMessage(bytes(32), None,
                                  Signature(1, SignatureScheme.MAC, b"\x00" * 32))
        with pytest.raises(ProtocolViolation):
            network.server.handle(1, stray)

    def test_update_auth_goes_to_invoker(self, network):
        """The passive phase of an update runs with the client that invoked it."""
        (_, reply), = network.submit(1, put("a", "1"))
        commit = network.clients[1].receive(reply).outbound
        outbound = network.server.handle(1, commit)
        assert len(outbound) == 1
        assert outbound[0].recipient == 1
        assert isinstance(outbound[0].message, UpdateAuthMessage)
        assert outbound[0].message.seqno == 1

    def test_resend_update_auth(self, network):
        """A reconnecting client gets its outstanding update-auth again."""
        network.client(2)
        (_, reply), = network.submit(1, put("a", "1"))
        commit = network.clients[1].receive(reply).outbound
        (_, update_auth), = network.server.handle(1, commit)

        (_, resent), = network.server.resend_update_auth(1)
        assert resent == update_auth
        assert network.server.resend_update_auth(2) == []


class TestPendingLimit:
    """Test cases for invoke buffering."""

    def test_invokes_buffered_at_limit(self, make_network, keyring, test_config):
        """Invokes beyond the pending limit wait until the log drains."""
        config = copy.deepcopy(test_config)
        config["protocol"]["pending_limit"] = 1
        network = make_network(keyring, config)

        held = network.submit(1, put("a", "1"))
        assert network.submit(2, put("b", "2")) == []
        assert network.server.buffered_count == 1

        assert network.pump(held) == {1: None, 2: None}
        assert network.server.buffered_count == 0
        assert network.server.applied == 2

    def test_invalid_limit(self, adict, keyring, genesis):
        """The pending limit must be positive."""
        with pytest.raises(ValueError):
            AipServer(adict, keyring, genesis, {"protocol": {"pending_limit": 0}})


class TestGarbageCollection:
    """Test cases for log pruning."""

    def test_committed_log_stays_bounded(self, make_network, adict):
        """Records every client has cleared are dropped on both sides."""
        network = make_network(provision_keyring(SignatureScheme.MAC, 2, adict))
        for round_number in range(10):
            network.run(1, put(f"k{round_number}", "v"))
            network.run(2, get(f"k{round_number}"))

        assert 0 not in network.server.committed
        assert len(network.server.committed) <= 5
        assert len(network.clients[1].chain) <= 5
        assert network.server.pending == {}

    def test_idle_client_blocks_pruning(self, network):
        """A client that never cleared anything keeps the log alive."""
        for round_number in range(4):
            network.run(1, put(f"k{round_number}", "v"))
        assert 0 in network.server.committed


class TestAbortPruning:
    """Test cases for marking aborted pending entries."""

    def abort_then_read(self, network):
        held_write = network.submit(1, put("x", "1"))
        assert network.pump(network.submit(2, get("x"))) == {2: ABORT}
        held_read = network.submit(3, get("z"))
        return held_write, held_read

    def test_aborted_entries_marked(self, make_network, keyring, test_config):
        """With pruning on, later replies carry the abort signature."""
        config = copy.deepcopy(test_config)
        config["protocol"]["prune_aborted"] = True
        network = make_network(keyring, config)

        held_write, held_read = self.abort_then_read(network)
        pending = held_read[0].message.pending
        assert pending[1].abort_mark is not None
        assert pending[0].abort_mark is None

        assert network.pump(held_read) == {3: None}
        network.pump(held_write)
        assert network.server.applied == 3

    def test_no_marks_by_default(self, network):
        """Without pruning, aborted entries look like any other pending entry."""
        held_write, held_read = self.abort_then_read(network)
        assert all(entry.abort_mark is None for entry in held_read[0].message.pending)
        network.pump(held_read)
        network.pump(held_write)


class TestJournal:
    """Test cases for journaling and restart."""

    def test_restore_from_journal(self, make_network, adict, keyring, test_config, tmp_path):
        """A restarted server resumes with the same state and logs."""
        path = tmp_path / "journal.jsonl"
        network = make_network(keyring, journal=ServerJournal(path, MessageCodec(adict)))
        network.run(1, put("a", "1"))
        network.run(2, put("b", "2"))
        network.run(1, get("a"))
        original = network.server

        restored = AipServer(adict, keyring, network.genesis, test_config,
                             ServerJournal(path, MessageCodec(adict)))
        assert restored.restore_from_journal() == original.applied == 3
        assert restored.state.root() == original.state.root()
        assert restored.last_authenticated == original.last_authenticated
        assert (restored.authenticators[restored.last_authenticated]
                == original.authenticators[original.last_authenticated])

        network.servers[0] = restored
        assert network.run(2, get("a")) == b"1"
        assert network.run(1, get("b")) == b"2"

    def test_one_line_per_applied_operation(self, make_network, adict, keyring, tmp_path):
        """Each applied sequence number is journaled once."""
        path = tmp_path / "journal.jsonl"
        network = make_network(keyring, journal=ServerJournal(path, MessageCodec(adict)))
        for index in range(3):
            network.run(1, put(f"k{index}", "v"))
        entries = list(ServerJournal(path, MessageCodec(adict)).entries())
        assert [entry.seqno for entry in entries] == [1, 2, 3]
        assert all(entry.auth is not None for entry in entries)

    def test_missing_journal(self, adict, tmp_path):
        """A journal that was never written replays nothing."""
        assert list(ServerJournal(tmp_path / "none.jsonl", MessageCodec(adict)).entries()) == []

    def test_corrupt_journal(self, adict, tmp_path):
        """Unparseable journal lines raise JournalError."""
        path = tmp_path / "journal.jsonl"
        path.write_text("not json\n")
        with pytest.raises(JournalError):
            list(ServerJournal(path, MessageCodec(adict)).entries())


class TestFork:
    """Test cases for AipServer.fork."""

    def test_fork_is_independent(self, network):
        """Work on a forked view leaves the original untouched."""
        network.run(1, put("a", "1"))
        clone = network.server.fork()
        clone.handle(2, network.client(2).begin_invoke(put("b", "2")))
        assert clone.invoked == 2
        assert network.server.invoked == 1
        assert network.server.state.root() == clone.state.root()
