"""
Crypto primitives for VICOS
Collision-resistant hashing and per-client signatures in two modes:
shared-key MAC (HMAC) or Ed25519 public keys.
"""

import hashlib
import hmac
import json
import logging
import secrets
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

from Cryptodome.PublicKey import ECC
from Cryptodome.Signature import eddsa

from .codec import Encoder


Digest = bytes

MAC_KEY_BYTES = 16
SETUP_CLIENT_ID = 0


class CryptoConfigError(Exception):
    """Raised for unknown modes, missing keys or malformed key files."""
    pass


class SignatureScheme(Enum):
    """Signature mode; one mode per deployment."""
    MAC = "mac"
    PUBLIC_KEY = "public-key"


_SCHEME_CODES = {SignatureScheme.MAC: 1, SignatureScheme.PUBLIC_KEY: 2}
_SCHEME_BY_CODE = {code: scheme for scheme, code in _SCHEME_CODES.items()}


def scheme_code(scheme: SignatureScheme) -> int:
    return _SCHEME_CODES[scheme]


def scheme_from_code(code: int) -> Optional[SignatureScheme]:
    return _SCHEME_BY_CODE.get(code)


class HashFunction:
    """Named hashlib digest with a fixed output size."""

    def __init__(self, name: str = "sha256"):
        try:
            sample = hashlib.new(name)
        except (ValueError, TypeError) as e:
            raise CryptoConfigError(f"Unsupported hash function: {name}") from e
        if sample.digest_size == 0:
            raise CryptoConfigError(f"Hash function {name} has variable output size")

        self.name = name
        self.digest_size = sample.digest_size
        self.null_digest = bytes(self.digest_size)

    def __call__(self, data: bytes) -> Digest:
        return hashlib.new(self.name, data).digest()

    def hash_parts(self, *parts: bytes) -> Digest:
        h = hashlib.new(self.name)
        for part in parts:
            h.update(part)
        return h.digest()

    def __eq__(self, other: object) -> bool:
        return isinstance(other, HashFunction) and other.name == self.name

    def __hash__(self) -> int:
        return hash(self.name)

    def __repr__(self) -> str:
        return f"HashFunction({self.name!r})"


SHA256 = HashFunction("sha256")


@dataclass(frozen=True)
class Signature:
    """A signature or MAC tag attributed to one client."""
    signer: int
    scheme: SignatureScheme
    value: bytes

    def __post_init__(self):
        if self.signer < 0:
            raise ValueError(f"Signer id must be non-negative, got {self.signer}")


@dataclass(frozen=True)
class GenesisSignatures:
    """Setup-time signatures over the genesis record, made by client 0."""
    commit_sig: Signature
    auth_sig: Signature


def _signed_bytes(signer: int, tag: str, message: bytes) -> bytes:
    # Binding the signer id makes a MAC tag useless under any other identity
    return Encoder().text(tag).u32(signer).blob(message).getvalue()


class KeyRing:
    """
    Signing and verification keys for every client of one deployment.

    A verifier-only ring (see verifier()) refuses to sign; the server
    holds one of those.
    """

    def __init__(self, scheme: SignatureScheme, *,
                 hash_fn: HashFunction = SHA256,
                 mac_key: Optional[bytes] = None,
                 private_keys: Optional[Dict[int, Any]] = None,
                 public_keys: Optional[Dict[int, Any]] = None,
                 client_ids: Optional[Iterable[int]] = None,
                 genesis: Optional[GenesisSignatures] = None,
                 can_sign: bool = True):
        self.logger = logging.getLogger(__name__)
        self.scheme = scheme
        self.hash_fn = hash_fn
        self.genesis = genesis
        self._can_sign = can_sign
        self._mac_key = mac_key
        self._private = dict(private_keys or {})
        self._public = dict(public_keys or {})

        if scheme is SignatureScheme.MAC:
            if not mac_key or len(mac_key) < MAC_KEY_BYTES:
                raise CryptoConfigError(
                    f"MAC mode requires a key of at least {MAC_KEY_BYTES} bytes"
                )
            self._client_ids = sorted(set(client_ids or []) | {SETUP_CLIENT_ID})
        else:
            self._client_ids = sorted(set(self._public) | set(client_ids or []))

    # Construction

    @classmethod
    def generate(cls, scheme: SignatureScheme, client_count: int,
                 hash_name: str = "sha256") -> "KeyRing":
        """Fresh keys for clients 1..client_count plus the setup identity 0."""
        if client_count < 1:
            raise CryptoConfigError("At least one client is required")

        ids = list(range(SETUP_CLIENT_ID, client_count + 1))
        hash_fn = HashFunction(hash_name)

        if scheme is SignatureScheme.MAC:
            return cls(scheme, hash_fn=hash_fn,
                       mac_key=secrets.token_bytes(MAC_KEY_BYTES), client_ids=ids)

        private = {cid: ECC.generate(curve="Ed25519") for cid in ids}
        public = {cid: key.public_key() for cid, key in private.items()}
        return cls(scheme, hash_fn=hash_fn, private_keys=private,
                   public_keys=public, client_ids=ids)

    def with_genesis(self, genesis: GenesisSignatures) -> "KeyRing":
        self.genesis = genesis
        return self

    def verifier(self) -> "KeyRing":
        """Copy without signing capability, for the untrusted server."""
        return KeyRing(self.scheme, hash_fn=self.hash_fn, mac_key=self._mac_key,
                       public_keys=self._public, client_ids=self._client_ids,
                       genesis=self.genesis, can_sign=False)

    @property
    def client_ids(self) -> list[int]:
        """All identities, including the setup identity 0."""
        return list(self._client_ids)

    def can_sign(self, signer: int) -> bool:
        if not self._can_sign:
            return False
        if self.scheme is SignatureScheme.MAC:
            return signer in self._client_ids
        return signer in self._private

    # Signing

    def sign(self, signer: int, tag: str, message: bytes) -> Signature:
        if not self.can_sign(signer):
            raise CryptoConfigError(f"No signing key for client {signer}")

        data = _signed_bytes(signer, tag, message)
        if self.scheme is SignatureScheme.MAC:
            value = hmac.new(self._mac_key, data, self.hash_fn.name).digest()
        else:
            value = eddsa.new(self._private[signer], "rfc8032").sign(data)
        return Signature(signer, self.scheme, value)

    def verify(self, signer: int, tag: str, message: bytes, signature: Any) -> bool:
        """False on any mismatch; never raises for malformed signatures."""
        if not isinstance(signature, Signature):
            return False
        if signature.signer != signer or signature.scheme is not self.scheme:
            return False

        data = _signed_bytes(signer, tag, message)
        if self.scheme is SignatureScheme.MAC:
            if signer not in self._client_ids:
                return False
            expected = hmac.new(self._mac_key, data, self.hash_fn.name).digest()
            return hmac.compare_digest(expected, signature.value)

        key = self._public.get(signer)
        if key is None:
            return False
        try:
            eddsa.new(key, "rfc8032").verify(data, signature.value)
            return True
        except (ValueError, TypeError):
            return False

    # Persistence

    def to_dict(self, include_private: bool = True) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "mode": self.scheme.value,
            "hash": self.hash_fn.name,
        }
        if self.scheme is SignatureScheme.MAC:
            data["mac_key"] = self._mac_key.hex()
            data["clients"] = {str(cid): {} for cid in self._client_ids}
        else:
            clients = {}
            for cid in self._client_ids:
                entry = {"public": self._public[cid].export_key(format="DER").hex()}
                if include_private and cid in self._private:
                    entry["private"] = self._private[cid].export_key(format="DER").hex()
                clients[str(cid)] = entry
            data["clients"] = clients

        if self.genesis is not None:
            data["genesis"] = {
                "commit_sig": self.genesis.commit_sig.value.hex(),
                "auth_sig": self.genesis.auth_sig.value.hex(),
            }
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "KeyRing":
        try:
            scheme = SignatureScheme(data["mode"])
            hash_fn = HashFunction(data.get("hash", "sha256"))
            clients = data.get("clients", {})
            ids = [int(cid) for cid in clients]

            genesis = None
            if "genesis" in data:
                genesis = GenesisSignatures(
                    commit_sig=Signature(SETUP_CLIENT_ID, scheme,
                                         bytes.fromhex(data["genesis"]["commit_sig"])),
                    auth_sig=Signature(SETUP_CLIENT_ID, scheme,
                                       bytes.fromhex(data["genesis"]["auth_sig"])),
                )

            if scheme is SignatureScheme.MAC:
                return cls(scheme, hash_fn=hash_fn,
                           mac_key=bytes.fromhex(data["mac_key"]),
                           client_ids=ids, genesis=genesis)

            public, private = {}, {}
            for cid, entry in clients.items():
                public[int(cid)] = ECC.import_key(bytes.fromhex(entry["public"]))
                if "private" in entry:
                    private[int(cid)] = ECC.import_key(bytes.fromhex(entry["private"]))
            return cls(scheme, hash_fn=hash_fn, private_keys=private,
                       public_keys=public, client_ids=ids, genesis=genesis)
        except CryptoConfigError:
            raise
        except (KeyError, ValueError, TypeError) as e:
            raise CryptoConfigError(f"Malformed key material: {e}") from e

    def save(self, path: Path, include_private: bool = True) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(include_private), f, indent=2)
        self.logger.info(f"Saved {self.scheme.value} key ring to {path}")

    @classmethod
    def load(cls, path: Path) -> "KeyRing":
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise CryptoConfigError(f"Cannot read key file {path}: {e}") from e
        return cls.from_dict(data)
