"""
Integration tests: honest multi-client schedules under the deterministic scheduler
"""

import random

import pytest

from src.core.adict import Adict, AdictState, OpKind
from src.core.ads import ABORT
from src.harness.checkers import CheckOutcome, check_fork_linearizable, check_linearizable
from src.harness.simulation import Simulation, aip_task, random_operations, vicos_task
from src.protocol.chain import Status
from src.storage.cos import InMemoryCos
from src.storage.vicos import NONCE_BYTES, VicosSession


def honest_run(adict, keyring, seed, clients, ops_per_client, config, priority_bias=0.0):
    rng = random.Random(seed)
    workload = {cid: [aip_task(op) for op in random_operations(cid, ops_per_client, 4, rng)]
                for cid in range(1, clients + 1)}
    sim = Simulation(adict, keyring, workload, seed=seed, config=config,
                     priority_bias=priority_bias)
    return sim, sim.run()


@pytest.mark.integration
class TestHonestSchedules:
    """Test cases for honest runs: no alarms, linearizable histories."""

    @pytest.mark.parametrize("seed", range(30))
    def test_no_alarms_and_linearizable(self, adict, keyring, test_config, seed):
        """Random schedules complete every operation and linearize."""
        clients = 2 + seed % 3
        _, outcome = honest_run(adict, keyring, seed, clients, 8, test_config)
        assert outcome.alarms == {}
        assert len(outcome.history.completed()) == clients * 8
        assert check_linearizable(outcome.history.entries).outcome is CheckOutcome.OK
        assert check_fork_linearizable(outcome.views, outcome.history.entries)

    @pytest.mark.parametrize("seed", range(10))
    def test_fast_path_schedules(self, adict, keyring, fast_path_config, seed):
        """The query fast path keeps histories linearizable."""
        _, outcome = honest_run(adict, keyring, seed, 4, 8, fast_path_config)
        assert outcome.alarms == {}
        assert check_linearizable(outcome.history.entries).outcome is CheckOutcome.OK

    @pytest.mark.parametrize("seed", range(10))
    def test_aborted_pruning_schedules(self, adict, keyring, test_config, seed):
        """Abort marks in pending lists are verified by every client."""
        test_config["protocol"]["prune_aborted"] = True
        _, outcome = honest_run(adict, keyring, seed, 4, 8, test_config)
        assert outcome.alarms == {}
        assert check_linearizable(outcome.history.entries).outcome is CheckOutcome.OK

    def test_same_seed_same_schedule(self, adict, keyring, test_config):
        """Runs are reproducible from their seed."""
        _, first = honest_run(adict, keyring, 42, 3, 6, test_config)
        _, second = honest_run(adict, keyring, 42, 3, 6, test_config)
        assert ([(e.op_id, e.invoked_at, e.responded_at, e.response)
                 for e in first.history.entries]
                == [(e.op_id, e.invoked_at, e.responded_at, e.response)
                    for e in second.history.entries])

    def test_final_state_matches_server(self, adict, keyring, test_config):
        """The server's state equals replaying every successful update in sequence order."""
        sim, outcome = honest_run(adict, keyring, 3, 4, 10, test_config)
        expected = AdictState()
        for seqno in sorted(sim.sequence_logs[0]):
            op_id = sim.sequence_logs[0][seqno]
            if sim.aip_status[op_id] is Status.SUCCESS and sim.aip_ops[op_id].is_update:
                expected.apply(sim.aip_ops[op_id])
        assert sim.servers[0].state.root() == expected.root()
        assert sim.servers[0].applied == len(outcome.history.entries)

    @pytest.mark.slow
    def test_thousand_schedules(self, adict, test_config):
        """Many schedules with two to eight clients raise no false alarms."""
        from src.core.crypto import SignatureScheme
        from src.protocol.chain import provision_keyring
        keyring = provision_keyring(SignatureScheme.MAC, 8, adict)
        for seed in range(1000):
            rng = random.Random(seed)
            clients = rng.randint(2, 8)
            ops = rng.randint(1, 200 // clients)
            _, outcome = honest_run(adict, keyring, seed, clients, ops, test_config)
            assert outcome.alarms == {}, f"seed {seed}"
            result = check_linearizable(outcome.history.entries)
            assert result.outcome is not CheckOutcome.VIOLATION, f"seed {seed}: {result.detail}"


@pytest.mark.integration
class TestMessageComplexity:
    """Test cases for messages per operation."""

    def test_five_messages_per_operation(self, adict, keyring, test_config):
        """Without the fast path each operation costs five messages."""
        _, outcome = honest_run(adict, keyring, 7, 4, 10, test_config)
        counts = outcome.message_counts
        assert {counts[k] for k in ("invoke", "reply", "commit", "update-auth", "commit-auth")} == {40}
        assert sum(counts.values()) == 5 * 40

    def test_three_messages_per_query(self, adict, keyring, fast_path_config):
        """With the fast path queries skip the passive phase."""
        sim, outcome = honest_run(adict, keyring, 7, 4, 10, fast_path_config)
        updates = sum(1 for op in sim.aip_ops.values() if op.is_update)
        queries = len(sim.aip_ops) - updates
        counts = outcome.message_counts
        assert counts["update-auth"] == counts["commit-auth"] == updates
        assert sum(counts.values()) == 5 * updates + 3 * queries


@pytest.mark.integration
class TestSequentialClient:
    """Test cases for a client running alone."""

    def test_sequential_client_never_aborts(self, adict, keyring, test_config):
        """A lone client's operations are never concurrent, so none abort."""
        rng = random.Random(9)
        ops = random_operations(1, 1000, 16, rng, write_ratio=0.4, delete_ratio=0.2,
                                list_ratio=0.1)
        sim = Simulation(adict, keyring, {1: [aip_task(op) for op in ops]}, seed=9,
                         config=test_config)
        outcome = sim.run()
        assert outcome.alarms == {}
        assert all(e.response is not ABORT for e in outcome.history.entries)
        assert len(outcome.history.completed()) == 1000


@pytest.mark.integration
class TestVicosSimulation:
    """Test cases for VICOS tasks under the scheduler."""

    def test_concurrent_object_clients(self, adict, keyring, test_config):
        """Object reads return exactly the bytes some put stored, or an abort."""
        cos = InMemoryCos()
        nonce_rng = random.Random(4)
        session = VicosSession(cos, adict.hash_fn, test_config,
                               nonce_source=lambda: nonce_rng.randbytes(NONCE_BYTES))
        rng = random.Random(4)
        workload = {cid: [vicos_task(session, op)
                          for op in random_operations(cid, 10, 3, rng, delete_ratio=0.0,
                                                             list_ratio=0.1)]
                    for cid in range(1, 4)}
        sim = Simulation(adict, keyring, workload, seed=4, config=test_config, cos=cos)
        outcome = sim.run()

        assert outcome.alarms == {}
        written = {e.operation.value for e in outcome.history.entries
                   if e.operation.kind is OpKind.PUT}
        for e in outcome.history.entries:
            if e.operation.kind is OpKind.GET and e.response not in (None, ABORT):
                assert e.response in written
        assert check_linearizable(outcome.history.entries).outcome is CheckOutcome.OK


@pytest.mark.integration
class TestAdsGame:
    """Randomized authenticated dictionary game against a naive map."""

    @pytest.mark.slow
    def test_ten_thousand_sequences(self):
        """Every proof verifies and the final state equals the naive map."""
        from src.core.adict import Operation
        adict = Adict()
        rng = random.Random(2024)
        for _ in range(10_000):
            state, auth, model = adict.initial_state(), adict.initial_authenticator(), {}
            for _ in range(rng.randint(1, 30)):
                key = f"k{rng.randrange(64)}".encode()
                roll = rng.random()
                if roll < 0.45:
                    op = Operation.put(key, rng.randbytes(4))
                elif roll < 0.65:
                    op = Operation.delete(key)
                elif roll < 0.95:
                    op = Operation.get(key)
                else:
                    op = Operation.list()
                response, aux = adict.query(state, [op])
                auth, hint, valid = adict.authexec([op], auth, response, aux)
                assert valid
                state = adict.refresh(state, op, hint)
                if op.kind is OpKind.PUT:
                    model[key] = op.value
                elif op.kind is OpKind.DEL:
                    model.pop(key, None)
            assert dict(state.items()) == model
            assert state.root() == auth
