"""
Hash chain and signed payloads shared by clients and server
"""

from dataclasses import dataclass
from enum import Enum
from typing import Any

from ..core.ads import AuthenticatedDataStructure
from ..core.codec import Encoder
from ..core.crypto import (SETUP_CLIENT_ID, Digest, GenesisSignatures,
                           HashFunction, KeyRing, SignatureScheme)


TAG_INVOKE = "aip-invoke"
TAG_COMMIT = "aip-commit"
TAG_AUTH = "aip-auth"


class Status(Enum):
    """Outcome a client recorded for its operation."""
    SUCCESS = 0
    ABORT = 1


def chain_hash(hash_fn: HashFunction, previous: Digest, op_bytes: bytes,
               seqno: int, client_id: int) -> Digest:
    return hash_fn(Encoder().blob(previous).blob(op_bytes)
                   .u64(seqno).u32(client_id).getvalue())


def invoke_payload(op_bytes: bytes, client_id: int) -> bytes:
    return Encoder().blob(op_bytes).u32(client_id).getvalue()


def commit_payload(seqno: int, op_bytes: bytes, client_id: int,
                   status: Status, chain_digest: Digest) -> bytes:
    return (Encoder().u64(seqno).blob(op_bytes).u32(client_id)
            .u8(status.value).blob(chain_digest).getvalue())


def auth_payload(op_bytes: bytes, seqno: int, chain_digest: Digest,
                 authenticator: bytes) -> bytes:
    return (Encoder().blob(op_bytes).u64(seqno).blob(chain_digest)
            .blob(authenticator).getvalue())


def requires_auth(ads: AuthenticatedDataStructure, op: Any, query_fast_path: bool) -> bool:
    """Whether op goes through the passive phase and gets an authenticator entry."""
    return not query_fast_path or ads.is_update(op) or op == ads.genesis_op()


@dataclass(frozen=True)
class Genesis:
    """Agreed starting point: O[0], A[0] and H[0]."""
    op: Any
    commit_sig: Any
    authenticator: bytes
    auth_sig: Any
    head: Digest


def genesis_head(ads: AuthenticatedDataStructure, hash_fn: HashFunction) -> Digest:
    return chain_hash(hash_fn, hash_fn.null_digest, ads.op_bytes(ads.genesis_op()),
                      0, SETUP_CLIENT_ID)


def sign_genesis(keyring: KeyRing, ads: AuthenticatedDataStructure) -> GenesisSignatures:
    op_bytes = ads.op_bytes(ads.genesis_op())
    head = genesis_head(ads, keyring.hash_fn)
    commit_sig = keyring.sign(SETUP_CLIENT_ID, TAG_COMMIT,
                              commit_payload(0, op_bytes, SETUP_CLIENT_ID,
                                             Status.SUCCESS, head))
    auth_sig = keyring.sign(SETUP_CLIENT_ID, TAG_AUTH,
                            auth_payload(op_bytes, 0, head,
                                         ads.initial_authenticator()))
    return GenesisSignatures(commit_sig, auth_sig)


def build_genesis(keyring: KeyRing, ads: AuthenticatedDataStructure) -> Genesis:
    """Genesis record from the key ring, signing it on first use."""
    if keyring.genesis is None:
        keyring.with_genesis(sign_genesis(keyring, ads))
    return Genesis(op=ads.genesis_op(),
                   commit_sig=keyring.genesis.commit_sig,
                   authenticator=ads.initial_authenticator(),
                   auth_sig=keyring.genesis.auth_sig,
                   head=genesis_head(ads, keyring.hash_fn))


def provision_keyring(scheme: SignatureScheme, client_count: int,
                      ads: AuthenticatedDataStructure,
                      hash_name: str = "sha256") -> KeyRing:
    """Generate keys for a deployment and sign its genesis record."""
    keyring = KeyRing.generate(scheme, client_count, hash_name)
    return keyring.with_genesis(sign_genesis(keyring, ads))
