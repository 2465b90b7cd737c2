"""
Adversarial server behaviour for the simulation
Attack scripts are declarative rule lists (JSON, validated with pydantic);
the Interposer applies them to server-to-client traffic and can fork and
rejoin server views or corrupt stored objects.
"""

import logging
import random
from dataclasses import replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..core.adict import Adict, ListProof, MerkleProof, UpdateProof
from ..core.crypto import KeyRing, SignatureScheme
from ..protocol.chain import Status, provision_keyring
from ..protocol.messages import (AuthPair, OperationRecord,
                                 ProtocolMessage, ReplyMessage,
                                 UpdateAuthMessage, genesis_auth,
                                 genesis_record)
from ..storage.cos import InMemoryCos
from ..storage.vicos import NONCE_BYTES, VicosSession
from .simulation import (Delivery, Simulation, SimulationOutcome, Task,
                         aip_task, parse_step, random_operations, vicos_task)


logger = logging.getLogger(__name__)


class ScenarioError(Exception):
    """Attack script cannot be loaded or run."""
    pass


class RuleAction(str, Enum):
    PASS = "pass"
    DROP = "drop"
    MODIFY = "modify"
    REPLAY = "replay"
    FORK = "fork"
    JOIN = "join"
    TAMPER_COS = "tamper-cos"


class Mutation(str, Enum):
    FLIP_RESPONSE = "flip-response"
    SWAP_PROOF = "swap-proof"
    FLIP_STATUS = "flip-status"
    STRIP_SIGNATURE = "strip-signature"
    SHIFT_SEQNO = "shift-seqno"
    REORDER_PENDING = "reorder-pending"
    STALE_AUTH = "stale-auth"
    FLIP_BYTE = "flip-byte"
    DROP_CLEARED = "drop-cleared"
    DROP_PENDING = "drop-pending"


class InterpositionRule(BaseModel):
    """Fire once on the n-th server-to-client message matching the filters."""
    model_config = ConfigDict(frozen=True)

    action: RuleAction
    kind: Optional[str] = Field(None, pattern="^(reply|update-auth)$")
    client: Optional[int] = None
    min_seqno: int = 0
    occurrence: int = Field(1, ge=1)
    mutation: Optional[Mutation] = None
    groups: Optional[List[List[int]]] = None

    @model_validator(mode="after")
    def _check_arguments(self) -> "InterpositionRule":
        if self.action is RuleAction.MODIFY and self.mutation is None:
            raise ValueError("modify rules need a mutation")
        if self.action is RuleAction.FORK and (not self.groups or len(self.groups) < 2):
            raise ValueError("fork rules need at least two client groups")
        return self


class WorkloadModel(BaseModel):
    """Client tasks for a scenario: explicit steps or a random mix."""
    clients: int = Field(3, ge=1)
    ops_per_client: int = Field(8, ge=0)
    keys: int = Field(4, ge=1)
    write_ratio: float = Field(0.4, ge=0.0, le=1.0)
    delete_ratio: float = Field(0.1, ge=0.0, le=1.0)
    list_ratio: float = Field(0.05, ge=0.0, le=1.0)
    vicos: bool = False
    steps: Optional[Dict[int, List[str]]] = None


class AttackScript(BaseModel):
    name: str
    description: str = ""
    workload: WorkloadModel = Field(default_factory=WorkloadModel)
    rules: List[InterpositionRule] = Field(default_factory=list)
    expect_alarm: bool = True
    expected_alarms: Optional[List[str]] = None

    @classmethod
    def load(cls, path: Path) -> "AttackScript":
        try:
            return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise ScenarioError(f"Cannot read attack script {path}: {e}") from e
        except ValueError as e:
            raise ScenarioError(f"Invalid attack script {path}: {e}") from e


def load_catalog(directory: Path) -> List[AttackScript]:
    return [AttackScript.load(path) for path in sorted(Path(directory).glob("*.json"))]


def _seqno_of(message: ProtocolMessage) -> int:
    return getattr(message, "seqno", 0)


class Interposer:
    """Applies an attack script to messages leaving the server views."""

    def __init__(self, script: AttackScript, sim: Simulation, seed: int = 0):
        self.script = script
        self.sim = sim
        self.rng = random.Random(seed)
        self._matches = [0] * len(script.rules)
        self._fired = [False] * len(script.rules)
        self._sent: List[Tuple[int, ProtocolMessage]] = []
        genesis = sim.servers[0].genesis
        self._auth_pairs: List[tuple] = [(genesis_record(genesis), genesis_auth(genesis))]
        self.fired: List[str] = []

    def intercept(self, view: int, recipient: int, message: ProtocolMessage,
                  delivery: Delivery) -> List[Delivery]:
        result = [delivery]
        for index, rule in enumerate(self.script.rules):
            if self._fired[index] or not self._matches_filters(rule, recipient, message):
                continue
            if rule.action is RuleAction.JOIN and not self.sim.fork_ready():
                continue

            replacement = self._prepare(rule, recipient, message, delivery)
            if replacement is None:
                continue
            self._matches[index] += 1
            if self._matches[index] < rule.occurrence:
                continue

            self._fired[index] = True
            self.fired.append(f"{rule.action.value}:{rule.mutation.value if rule.mutation else ''}")
            result = self._commit(rule, replacement, delivery)
            break

        self._capture(recipient, message)
        return result

    def _matches_filters(self, rule: InterpositionRule, recipient: int,
                         message: ProtocolMessage) -> bool:
        if rule.kind is not None and rule.kind != message.kind.label:
            return False
        if rule.client is not None and rule.client != recipient:
            return False
        return _seqno_of(message) >= rule.min_seqno

    def _prepare(self, rule: InterpositionRule, recipient: int, message: ProtocolMessage,
                 delivery: Delivery) -> Optional[Any]:
        """What the rule would deliver, or None if it does not apply to this message."""
        if rule.action is RuleAction.MODIFY:
            return self.mutate(rule.mutation, message, delivery)
        if rule.action is RuleAction.REPLAY:
            for earlier_recipient, earlier in reversed(self._sent):
                if (earlier_recipient == recipient and earlier.kind is message.kind
                        and earlier != message):
                    return earlier
            return None
        return message

    def _commit(self, rule: InterpositionRule, replacement: Any, delivery: Delivery) -> List[Delivery]:
        action = rule.action
        if action is RuleAction.DROP:
            return []
        if action is RuleAction.FORK:
            self.sim.fork(rule.groups)
            return [delivery]
        if action is RuleAction.JOIN:
            self.sim.join()
            return [delivery]
        if action is RuleAction.TAMPER_COS:
            self.tamper_cos()
            return [delivery]
        if action is RuleAction.PASS:
            return [delivery]

        data = replacement if isinstance(replacement, bytes) else self.sim.codec.encode(replacement)
        self.sim.applied_mutations += 1
        return [Delivery(data, delivery.view, delivery.kind, mutated=True)]

    # Capture of traffic for replay and swap attacks

    def _capture(self, recipient: int, message: ProtocolMessage) -> None:
        self._sent.append((recipient, message))
        if isinstance(message, UpdateAuthMessage):
            self._auth_pairs.append((message.prev_record, message.prev_auth))

    def tamper_cos(self) -> int:
        cos = self.sim.cos
        if cos is None:
            raise ScenarioError("tamper-cos needs a simulation with object storage")
        flipped = 0
        for key in cos.list():
            data = cos.get(key)
            if data:
                position = self.rng.randrange(len(data))
                cos.put(key, data[:position] + bytes([data[position] ^ 0x01]) + data[position + 1:])
                flipped += 1
        logger.info(f"Flipped one byte in {flipped} stored objects")
        return flipped

    # Mutations: each returns a changed message (or raw bytes), or None if not applicable

    def mutate(self, mutation: Mutation, message: ProtocolMessage,
               delivery: Delivery) -> Optional[Any]:
        handler = getattr(self, f"_mutate_{mutation.name.lower()}")
        return handler(message, delivery)

    def _mutate_flip_response(self, message, delivery):
        if not isinstance(message, (ReplyMessage, UpdateAuthMessage)):
            return None
        response = message.response
        if isinstance(response, bytes):
            changed = bytes([response[0] ^ 0x01]) + response[1:] if response else b"\x00"
        elif isinstance(response, tuple):
            changed = response[1:] if response else (b"tampered",)
        else:
            changed = b"tampered"
        return replace(message, response=changed)

    def _mutate_swap_proof(self, message, delivery):
        if not isinstance(message, (ReplyMessage, UpdateAuthMessage)):
            return None
        for _, earlier in reversed(self._sent):
            aux = getattr(earlier, "aux", None)
            if aux is not None and aux != message.aux:
                return replace(message, aux=aux)
        return replace(message, aux=_truncate_aux(message.aux))

    def _mutate_flip_status(self, message, delivery):
        def flipped(record: OperationRecord) -> OperationRecord:
            status = Status.ABORT if record.status is Status.SUCCESS else Status.SUCCESS
            return replace(record, status=status)

        if isinstance(message, ReplyMessage):
            records = list(message.cleared_ops)
            index = self.rng.randrange(len(records))
            records[index] = flipped(records[index])
            return replace(message, cleared_ops=tuple(records))
        if isinstance(message, UpdateAuthMessage):
            return replace(message, prev_record=flipped(message.prev_record))
        return None

    def _mutate_strip_signature(self, message, delivery):
        if isinstance(message, ReplyMessage):
            return replace(message, auth=replace(message.auth,
                                                 auth_sig=replace(message.auth.auth_sig, value=b"")))
        if isinstance(message, UpdateAuthMessage):
            return replace(message, commit_sig=replace(message.commit_sig, value=b""))
        return None

    def _mutate_shift_seqno(self, message, delivery):
        if isinstance(message, (ReplyMessage, UpdateAuthMessage)):
            return replace(message, seqno=message.seqno + 1)
        return None

    def _mutate_reorder_pending(self, message, delivery):
        if not isinstance(message, ReplyMessage) or len(message.pending) < 2:
            return None
        entries = list(message.pending)
        identity = [(e.op, e.client_id) for e in entries]
        # Prefer swapping two foreign entries, which the victim cannot spot at once
        candidates = [(i, j) for i in range(len(entries) - 1) for j in range(i + 1, len(entries) - 1)
                      if identity[i] != identity[j]]
        if not candidates:
            candidates = [(i, len(entries) - 1) for i in range(len(entries) - 1)
                          if identity[i] != identity[-1]]
        if not candidates:
            return None
        i, j = candidates[0]
        entries[i], entries[j] = entries[j], entries[i]
        return replace(message, pending=tuple(entries))

    def _mutate_stale_auth(self, message, delivery):
        if isinstance(message, ReplyMessage):
            for _, pair in reversed(self._auth_pairs):
                if pair != message.auth:
                    return replace(message, auth=pair)
            return None
        if isinstance(message, UpdateAuthMessage):
            current = (message.prev_record, message.prev_auth)
            for record, pair in reversed(self._auth_pairs):
                if (record, pair) != current:
                    return replace(message, prev_record=record, prev_auth=pair)
        return None

    def _mutate_flip_byte(self, message, delivery):
        data = delivery.data
        position = self.rng.randrange(len(data))
        bit = 1 << self.rng.randrange(8)
        return data[:position] + bytes([data[position] ^ bit]) + data[position + 1:]

    def _mutate_drop_cleared(self, message, delivery):
        if not isinstance(message, ReplyMessage):
            return None
        return replace(message, cleared_ops=message.cleared_ops[1:])

    def _mutate_drop_pending(self, message, delivery):
        if not isinstance(message, ReplyMessage):
            return None
        return replace(message, pending=message.pending[1:])


def _truncate_aux(aux: Any) -> Any:
    """A damaged copy of a proof, used when no other proof is at hand."""
    if aux is None:
        return (ListProof(()),)
    proofs = list(aux)
    last = proofs[-1]
    if isinstance(last, UpdateProof):
        proofs[-1] = replace(last, target=_truncate_path(last.target))
    elif isinstance(last, MerkleProof):
        proofs[-1] = _truncate_path(last)
    elif isinstance(last, ListProof):
        entries = last.entries
        proofs[-1] = ListProof(entries[:-1] if entries else ((b"tampered", b"\x00" * 32),))
    return tuple(proofs)


def _truncate_path(proof: MerkleProof) -> MerkleProof:
    if proof.siblings:
        return replace(proof, siblings=proof.siblings[:-1])
    digest = proof.leaf.value_digest
    damaged = bytes([digest[0] ^ 0x01]) + digest[1:] if digest else b"\x00"
    return replace(proof, leaf=replace(proof.leaf, value_digest=damaged))


# Scenario running

FUZZ_MUTATIONS = {
    "reply": [Mutation.FLIP_RESPONSE, Mutation.SWAP_PROOF, Mutation.FLIP_STATUS,
              Mutation.STRIP_SIGNATURE, Mutation.SHIFT_SEQNO, Mutation.STALE_AUTH,
              Mutation.FLIP_BYTE, Mutation.DROP_CLEARED, Mutation.DROP_PENDING],
    "update-auth": [Mutation.FLIP_RESPONSE, Mutation.SWAP_PROOF, Mutation.FLIP_STATUS,
                    Mutation.STRIP_SIGNATURE, Mutation.SHIFT_SEQNO, Mutation.STALE_AUTH,
                    Mutation.FLIP_BYTE],
}


def build_workload(model: WorkloadModel, rng: random.Random,
                   session: Optional[VicosSession] = None) -> Dict[int, List[Task]]:
    make = (lambda op: vicos_task(session, op)) if session is not None else aip_task
    if model.steps is not None:
        return {cid: [make(parse_step(line)) for line in lines]
                for cid, lines in sorted(model.steps.items())}

    workload = {}
    for client_id in range(1, model.clients + 1):
        ops = random_operations(client_id, model.ops_per_client, model.keys, rng,
                                model.write_ratio, model.delete_ratio, model.list_ratio)
        workload[client_id] = [make(op) for op in ops]
    return workload


def run_scenario(script: AttackScript, seed: int = 0,
                 config: Optional[Dict[str, Any]] = None,
                 keyring: Optional[KeyRing] = None,
                 priority_bias: float = 0.0) -> SimulationOutcome:
    """Run one attack script under one scheduling seed."""
    ads = Adict()
    rng = random.Random(seed)
    if keyring is None:
        steps = script.workload.steps
        clients = max(steps) if steps else script.workload.clients
        keyring = provision_keyring(SignatureScheme.MAC, clients, ads)

    cos, session = None, None
    if script.workload.vicos:
        cos = InMemoryCos()
        session = VicosSession(cos, ads.hash_fn, config,
                               nonce_source=lambda: rng.randbytes(NONCE_BYTES))

    workload = build_workload(script.workload, rng, session)
    sim = Simulation(ads, keyring, workload, seed=seed, config=config,
                     priority_bias=priority_bias, cos=cos)
    sim.interposer = Interposer(script, sim, seed=seed)
    outcome = sim.run()
    logger.info(f"Scenario {script.name} (seed {seed}): {len(outcome.alarms)} alarms, "
                f"rules fired {sim.interposer.fired}")
    return outcome


def fuzz_script(rng: random.Random, clients: int = 3, ops_per_client: int = 5) -> AttackScript:
    """A single random message mutation against a random workload."""
    kind = rng.choice(sorted(FUZZ_MUTATIONS))
    mutation = rng.choice(FUZZ_MUTATIONS[kind])
    rule = InterpositionRule(action=RuleAction.MODIFY, kind=kind, mutation=mutation,
                             occurrence=rng.randint(1, 6))
    return AttackScript(name=f"fuzz-{kind}-{mutation.value}",
                        workload=WorkloadModel(clients=clients, ops_per_client=ops_per_client),
                        rules=[rule])
