"""
ADICT - authenticated dictionary
Sorted key/value map committed to by the root of a Merkle tree over
successor-linked leaves, so both membership and absence are provable.
"""

import bisect
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .ads import ABORT, AuthenticatedDataStructure, IntegrityError
from .codec import DecodeError, Decoder, Encoder
from .crypto import SHA256, Digest, HashFunction
from .merkle import (Side, fold_path, index_from_sides, merkle_path,
                     merkle_root)


LEAF_PREFIX = b"\x00"


class AdictIntegrityError(IntegrityError):
    """Server state and client-computed authenticator disagree."""
    pass


class OpKind(Enum):
    """Dictionary operation kinds."""
    GENESIS = 0
    PUT = 1
    GET = 2
    DEL = 3
    LIST = 4


@dataclass(frozen=True)
class Operation:
    """A dictionary operation; keys and values are raw bytes."""
    kind: OpKind
    key: Optional[bytes] = None
    value: Optional[bytes] = None

    def __post_init__(self):
        needs_key = self.kind in (OpKind.PUT, OpKind.GET, OpKind.DEL)
        if needs_key and not isinstance(self.key, bytes):
            raise ValueError(f"{self.kind.name} requires a bytes key")
        if not needs_key and self.key is not None:
            raise ValueError(f"{self.kind.name} takes no key")
        if self.kind is OpKind.PUT and not isinstance(self.value, bytes):
            raise ValueError("PUT requires a bytes value")
        if self.kind is not OpKind.PUT and self.value is not None:
            raise ValueError(f"{self.kind.name} takes no value")

    @classmethod
    def put(cls, key: bytes, value: bytes) -> "Operation":
        return cls(OpKind.PUT, key, value)

    @classmethod
    def get(cls, key: bytes) -> "Operation":
        return cls(OpKind.GET, key)

    @classmethod
    def delete(cls, key: bytes) -> "Operation":
        return cls(OpKind.DEL, key)

    @classmethod
    def list(cls) -> "Operation":
        return cls(OpKind.LIST)

    @classmethod
    def genesis(cls) -> "Operation":
        return cls(OpKind.GENESIS)

    @property
    def is_update(self) -> bool:
        return self.kind in (OpKind.PUT, OpKind.DEL)

    def __str__(self) -> str:
        if self.kind in (OpKind.LIST, OpKind.GENESIS):
            return self.kind.name.lower()
        return f"{self.kind.name.lower()}({self.key!r})"


@dataclass(frozen=True)
class LeafPayload:
    """One leaf: key (None is the head sentinel), value digest, successor (None is +inf)."""
    key: Optional[bytes]
    value_digest: Digest
    successor: Optional[bytes]


@dataclass(frozen=True)
class MerkleProof:
    """A leaf and its sibling path from leaf to root."""
    leaf: LeafPayload
    siblings: Tuple[Tuple[Side, Digest], ...]


@dataclass(frozen=True)
class UpdateProof:
    """
    Proof for put/del. Structural changes (insert, remove) also carry the
    full leaf digest list; a remove carries the predecessor leaf.
    """
    target: MerkleProof
    predecessor: Optional[LeafPayload] = None
    leaf_digests: Optional[Tuple[Digest, ...]] = None


@dataclass(frozen=True)
class ListProof:
    """Every (key, value digest) pair in key order."""
    entries: Tuple[Tuple[bytes, Digest], ...]


@dataclass(frozen=True)
class RefreshHint:
    """Root the server must reach after applying an authenticated update."""
    root: Digest


Proof = Union[MerkleProof, UpdateProof, ListProof]


def _encode_key(key: Optional[bytes]) -> bytes:
    return b"\x00" if key is None else b"\x01" + Encoder().blob(key).getvalue()


def _encode_successor(key: Optional[bytes]) -> bytes:
    return b"\x02" if key is None else b"\x01" + Encoder().blob(key).getvalue()


def leaf_hash(hash_fn: HashFunction, leaf: LeafPayload) -> Digest:
    return hash_fn.hash_parts(LEAF_PREFIX, _encode_key(leaf.key),
                              Encoder().blob(leaf.value_digest).getvalue(),
                              _encode_successor(leaf.successor))


def _key_below(left: Optional[bytes], key: bytes) -> bool:
    return left is None or left < key


def _successor_above(successor: Optional[bytes], key: bytes) -> bool:
    return successor is None or key < successor


def covers_gap(leaf: LeafPayload, key: bytes) -> bool:
    """Whether leaf proves key absent: leaf.key < key < leaf.successor."""
    return _key_below(leaf.key, key) and _successor_above(leaf.successor, key)


class AdictState:
    """Server-side dictionary with cached sorted keys and leaf digests."""

    def __init__(self, hash_fn: HashFunction = SHA256,
                 entries: Optional[Dict[bytes, bytes]] = None):
        self.hash_fn = hash_fn
        self.head_digest = hash_fn(b"")
        self._data: Dict[bytes, bytes] = {}
        self._value_digests: Dict[bytes, Digest] = {}
        self._keys: List[bytes] = []
        self._leaf_cache: Optional[List[Digest]] = None
        for key, value in (entries or {}).items():
            self.put(key, value)

    def __len__(self) -> int:
        return len(self._keys)

    def __contains__(self, key: bytes) -> bool:
        return key in self._data

    def get(self, key: bytes) -> Optional[bytes]:
        return self._data.get(key)

    def keys(self) -> Tuple[bytes, ...]:
        return tuple(self._keys)

    def value_digest(self, key: bytes) -> Digest:
        return self._value_digests[key]

    def items(self) -> Iterable[Tuple[bytes, bytes]]:
        return ((key, self._data[key]) for key in self._keys)

    def copy(self) -> "AdictState":
        clone = AdictState(self.hash_fn)
        clone._data = dict(self._data)
        clone._value_digests = dict(self._value_digests)
        clone._keys = list(self._keys)
        clone._leaf_cache = list(self._leaf_cache) if self._leaf_cache else None
        return clone

    def put(self, key: bytes, value: bytes) -> None:
        digest = self.hash_fn(value)
        if key in self._data:
            self._data[key] = value
            self._value_digests[key] = digest
            if self._leaf_cache is not None:
                index, _ = self.locate(key)
                self._leaf_cache[index] = leaf_hash(self.hash_fn, self.leaf(index))
            return
        bisect.insort(self._keys, key)
        self._data[key] = value
        self._value_digests[key] = digest
        self._leaf_cache = None

    def delete(self, key: bytes) -> None:
        if key not in self._data:
            return
        index = bisect.bisect_left(self._keys, key)
        del self._keys[index]
        del self._data[key]
        del self._value_digests[key]
        self._leaf_cache = None

    def apply(self, op: Operation) -> Any:
        """Execute op in place and return its response."""
        if op.kind is OpKind.PUT:
            self.put(op.key, op.value)
            return None
        if op.kind is OpKind.DEL:
            self.delete(op.key)
            return None
        if op.kind is OpKind.GET:
            return self._data.get(op.key)
        if op.kind is OpKind.LIST:
            return self.keys()
        return None

    # Leaf layout: index 0 is the head sentinel, index i >= 1 holds keys[i - 1]

    def locate(self, key: bytes) -> Tuple[int, bool]:
        """Leaf index holding key, or of its predecessor when absent."""
        pos = bisect.bisect_left(self._keys, key)
        present = pos < len(self._keys) and self._keys[pos] == key
        return (pos + 1, True) if present else (pos, False)

    def leaf(self, index: int) -> LeafPayload:
        successor = self._keys[index] if index < len(self._keys) else None
        if index == 0:
            return LeafPayload(None, self.head_digest, successor)
        key = self._keys[index - 1]
        return LeafPayload(key, self._value_digests[key], successor)

    def leaf_digests(self) -> List[Digest]:
        if self._leaf_cache is None:
            self._leaf_cache = [leaf_hash(self.hash_fn, self.leaf(i))
                                for i in range(len(self._keys) + 1)]
        return self._leaf_cache

    def root(self) -> Digest:
        return merkle_root(self.leaf_digests(), self.hash_fn)

    def membership_proof(self, index: int) -> MerkleProof:
        return MerkleProof(self.leaf(index),
                           merkle_path(self.leaf_digests(), index, self.hash_fn))


_KIND_BY_CODE = {kind.value: kind for kind in OpKind}

_RESPONSE_NONE, _RESPONSE_VALUE, _RESPONSE_KEYS = 0, 1, 2
_PROOF_MEMBERSHIP, _PROOF_UPDATE, _PROOF_LIST = 1, 2, 3


class Adict(AuthenticatedDataStructure):
    """Authenticated dictionary with put, get, del and list."""

    def __init__(self, hash_fn: HashFunction = SHA256):
        self.hash_fn = hash_fn
        self.logger = logging.getLogger(__name__)

    # State

    def initial_state(self) -> AdictState:
        return AdictState(self.hash_fn)

    def initial_authenticator(self) -> Digest:
        return AdictState(self.hash_fn).root()

    def copy_state(self, state: AdictState) -> AdictState:
        return state.copy()

    def apply(self, state: AdictState, op: Operation) -> Tuple[AdictState, Any]:
        new_state = state.copy()
        return new_state, new_state.apply(op)

    def genesis_op(self) -> Operation:
        return Operation.genesis()

    def is_update(self, op: Operation) -> bool:
        return op.is_update

    def compatible(self, pending: Sequence[Operation], op: Operation) -> bool:
        """A read is incompatible with any pending write that could change its answer."""
        for other in pending:
            if not other.is_update:
                continue
            if op.kind is OpKind.LIST:
                return False
            if op.kind is OpKind.GET and op.key == other.key:
                return False
        return True

    # Server side

    def query(self, state: AdictState, ops: Sequence[Operation]) -> Tuple[Any, Tuple[Proof, ...]]:
        if not ops:
            raise ValueError("query needs at least one operation")

        work = state
        proofs: List[Proof] = []
        response: Any = None
        for position, op in enumerate(ops):
            proofs.append(self._prove(work, op))
            if position == len(ops) - 1:
                response = work.apply(op) if not op.is_update else None
            elif op.is_update:
                if work is state:
                    work = state.copy()
                work.apply(op)
        return response, tuple(proofs)

    def _prove(self, state: AdictState, op: Operation) -> Proof:
        if op.kind is OpKind.LIST:
            return ListProof(tuple((key, state.value_digest(key)) for key in state.keys()))

        index, present = state.locate(op.key)
        target = state.membership_proof(index)
        if op.kind is OpKind.GET:
            return target

        if op.kind is OpKind.PUT:
            if present:
                return UpdateProof(target)
            return UpdateProof(target, leaf_digests=tuple(state.leaf_digests()))

        if op.kind is OpKind.DEL:
            if not present:
                return UpdateProof(target)
            return UpdateProof(target, predecessor=state.leaf(index - 1),
                               leaf_digests=tuple(state.leaf_digests()))

        raise ValueError(f"Cannot prove operation {op}")

    def refresh(self, state: AdictState, op: Operation, aux: Any) -> AdictState:
        if not op.is_update:
            return state
        if not isinstance(aux, RefreshHint):
            raise AdictIntegrityError(f"Refresh of {op} needs a root hint")
        # The caller's state stays untouched unless the roots agree
        updated = state.copy()
        updated.apply(op)
        if updated.root() != aux.root:
            raise AdictIntegrityError(
                f"State root after {op} does not match the authenticated root"
            )
        return updated

    # Client side

    def authexec(self, ops: Sequence[Operation], authenticator: Digest,
                 response: Any, aux: Any) -> Tuple[Digest, Any, bool]:
        failed = (authenticator, None, False)
        if not ops or not isinstance(aux, tuple) or len(aux) != len(ops):
            return failed

        current = authenticator
        for position, (op, proof) in enumerate(zip(ops, aux)):
            try:
                outcome = self._verify_step(op, current, proof)
            except (TypeError, ValueError, AttributeError, IndexError) as e:
                self.logger.debug(f"Malformed proof for {op}: {e}")
                return failed
            if outcome is None:
                return failed
            current, observed = outcome
            if position == len(ops) - 1 and not self._response_matches(op, observed, response):
                return failed

        hint = RefreshHint(current) if ops[-1].is_update else None
        return current, hint, True

    def _verify_step(self, op: Operation, root: Digest, proof: Any) -> Optional[Tuple[Digest, Any]]:
        """New root and what the proof says about op, or None if invalid."""
        if op.kind is OpKind.LIST:
            return self._verify_list(root, proof)

        if op.kind is OpKind.GET:
            if not self._path_valid(proof, root):
                return None
            leaf = proof.leaf
            if leaf.key == op.key:
                return root, leaf.value_digest
            return (root, None) if covers_gap(leaf, op.key) else None

        if not isinstance(proof, UpdateProof) or not self._path_valid(proof.target, root):
            return None
        leaf = proof.target.leaf

        if op.kind is OpKind.PUT:
            value_digest = self.hash_fn(op.value)
            if leaf.key == op.key:
                if proof.predecessor is not None or proof.leaf_digests is not None:
                    return None
                updated = LeafPayload(leaf.key, value_digest, leaf.successor)
                return fold_path(leaf_hash(self.hash_fn, updated),
                                 proof.target.siblings, self.hash_fn), None
            if not covers_gap(leaf, op.key) or proof.predecessor is not None:
                return None
            digests, index = self._locate_leaf(proof, root)
            if digests is None:
                return None
            digests[index:index + 1] = [
                leaf_hash(self.hash_fn, LeafPayload(leaf.key, leaf.value_digest, op.key)),
                leaf_hash(self.hash_fn, LeafPayload(op.key, value_digest, leaf.successor)),
            ]
            return merkle_root(digests, self.hash_fn), None

        if op.kind is OpKind.DEL:
            if leaf.key != op.key:
                absent = (covers_gap(leaf, op.key) and proof.predecessor is None
                          and proof.leaf_digests is None)
                return (root, None) if absent else None
            predecessor = proof.predecessor
            digests, index = self._locate_leaf(proof, root)
            if digests is None or predecessor is None or index == 0:
                return None
            if (predecessor.successor != op.key
                    or leaf_hash(self.hash_fn, predecessor) != digests[index - 1]):
                return None
            digests[index - 1:index + 1] = [
                leaf_hash(self.hash_fn, LeafPayload(predecessor.key,
                                                    predecessor.value_digest,
                                                    leaf.successor)),
            ]
            return merkle_root(digests, self.hash_fn), None

        return None

    def _path_valid(self, proof: Any, root: Digest) -> bool:
        if not isinstance(proof, MerkleProof) or not isinstance(proof.leaf, LeafPayload):
            return False
        return fold_path(leaf_hash(self.hash_fn, proof.leaf),
                         proof.siblings, self.hash_fn) == root

    def _locate_leaf(self, proof: UpdateProof, root: Digest) -> Tuple[Optional[List[Digest]], int]:
        """Check the full leaf list against root and find the target leaf in it."""
        if not proof.leaf_digests:
            return None, -1
        digests = list(proof.leaf_digests)
        if merkle_root(digests, self.hash_fn) != root:
            return None, -1
        index = index_from_sides([side for side, _ in proof.target.siblings], len(digests))
        if index is None or digests[index] != leaf_hash(self.hash_fn, proof.target.leaf):
            return None, -1
        return digests, index

    def _verify_list(self, root: Digest, proof: Any) -> Optional[Tuple[Digest, Any]]:
        if not isinstance(proof, ListProof):
            return None
        keys = [key for key, _ in proof.entries]
        if any(a >= b for a, b in zip(keys, keys[1:])):
            return None

        leaves = [LeafPayload(None, self.hash_fn(b""), keys[0] if keys else None)]
        for position, (key, value_digest) in enumerate(proof.entries):
            successor = keys[position + 1] if position + 1 < len(keys) else None
            leaves.append(LeafPayload(key, value_digest, successor))
        digests = [leaf_hash(self.hash_fn, leaf) for leaf in leaves]
        if merkle_root(digests, self.hash_fn) != root:
            return None
        return root, tuple(keys)

    def _response_matches(self, op: Operation, observed: Any, response: Any) -> bool:
        if response is ABORT:
            return False
        if op.kind is OpKind.GET:
            if observed is None:
                return response is None
            return isinstance(response, bytes) and self.hash_fn(response) == observed
        if op.kind is OpKind.LIST:
            return isinstance(response, tuple) and response == observed
        return response is None

    # Encoding

    def write_op(self, encoder: Encoder, op: Operation) -> None:
        encoder.u8(op.kind.value)
        if op.key is not None:
            encoder.blob(op.key)
        if op.value is not None:
            encoder.blob(op.value)

    def read_op(self, decoder: Decoder) -> Operation:
        kind = _KIND_BY_CODE.get(decoder.u8())
        if kind is None:
            raise DecodeError("unknown operation kind")
        key = decoder.blob() if kind in (OpKind.PUT, OpKind.GET, OpKind.DEL) else None
        value = decoder.blob() if kind is OpKind.PUT else None
        return Operation(kind, key, value)

    def write_response(self, encoder: Encoder, response: Any) -> None:
        if response is None:
            encoder.u8(_RESPONSE_NONE)
        elif isinstance(response, bytes):
            encoder.u8(_RESPONSE_VALUE).blob(response)
        elif isinstance(response, tuple):
            encoder.u8(_RESPONSE_KEYS).u32(len(response))
            for key in response:
                encoder.blob(key)
        else:
            raise ValueError(f"Response {response!r} cannot be encoded")

    def read_response(self, decoder: Decoder) -> Any:
        tag = decoder.u8()
        if tag == _RESPONSE_NONE:
            return None
        if tag == _RESPONSE_VALUE:
            return decoder.blob()
        if tag == _RESPONSE_KEYS:
            return tuple(decoder.blob() for _ in range(decoder.count(4)))
        raise DecodeError(f"unknown response tag {tag}")

    def _write_leaf(self, encoder: Encoder, leaf: LeafPayload) -> None:
        encoder.optional_blob(leaf.key).blob(leaf.value_digest).optional_blob(leaf.successor)

    def _read_leaf(self, decoder: Decoder) -> LeafPayload:
        return LeafPayload(decoder.optional_blob(), decoder.blob(), decoder.optional_blob())

    def _write_membership(self, encoder: Encoder, proof: MerkleProof) -> None:
        self._write_leaf(encoder, proof.leaf)
        encoder.u32(len(proof.siblings))
        for side, digest in proof.siblings:
            encoder.u8(side.value).blob(digest)

    def _read_membership(self, decoder: Decoder) -> MerkleProof:
        leaf = self._read_leaf(decoder)
        siblings = []
        for _ in range(decoder.count(5)):
            code = decoder.u8()
            if code not in (Side.LEFT.value, Side.RIGHT.value):
                raise DecodeError(f"invalid sibling side {code}")
            siblings.append((Side(code), decoder.blob()))
        return MerkleProof(leaf, tuple(siblings))

    def write_aux(self, encoder: Encoder, aux: Any) -> None:
        encoder.flag(aux is not None)
        if aux is None:
            return
        encoder.u32(len(aux))
        for proof in aux:
            if isinstance(proof, MerkleProof):
                encoder.u8(_PROOF_MEMBERSHIP)
                self._write_membership(encoder, proof)
            elif isinstance(proof, UpdateProof):
                encoder.u8(_PROOF_UPDATE)
                self._write_membership(encoder, proof.target)
                encoder.flag(proof.predecessor is not None)
                if proof.predecessor is not None:
                    self._write_leaf(encoder, proof.predecessor)
                encoder.flag(proof.leaf_digests is not None)
                if proof.leaf_digests is not None:
                    encoder.u32(len(proof.leaf_digests))
                    for digest in proof.leaf_digests:
                        encoder.blob(digest)
            elif isinstance(proof, ListProof):
                encoder.u8(_PROOF_LIST).u32(len(proof.entries))
                for key, digest in proof.entries:
                    encoder.blob(key).blob(digest)
            else:
                raise ValueError(f"Unknown proof type {type(proof).__name__}")

    def read_aux(self, decoder: Decoder) -> Any:
        if not decoder.flag():
            return None
        proofs: List[Proof] = []
        for _ in range(decoder.count(1)):
            tag = decoder.u8()
            if tag == _PROOF_MEMBERSHIP:
                proofs.append(self._read_membership(decoder))
            elif tag == _PROOF_UPDATE:
                target = self._read_membership(decoder)
                predecessor = self._read_leaf(decoder) if decoder.flag() else None
                digests = None
                if decoder.flag():
                    digests = tuple(decoder.blob() for _ in range(decoder.count(4)))
                proofs.append(UpdateProof(target, predecessor, digests))
            elif tag == _PROOF_LIST:
                entries = tuple((decoder.blob(), decoder.blob())
                                for _ in range(decoder.count(8)))
                proofs.append(ListProof(entries))
            else:
                raise DecodeError(f"unknown proof tag {tag}")
        return tuple(proofs)

    def write_refresh_aux(self, encoder: Encoder, aux: Any) -> None:
        encoder.optional_blob(aux.root if isinstance(aux, RefreshHint) else None)

    def read_refresh_aux(self, decoder: Decoder) -> Any:
        root = decoder.optional_blob()
        return RefreshHint(root) if root is not None else None
