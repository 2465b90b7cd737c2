"""
Authenticated data structure interface
The protocol layer only ever talks to an ADS through this contract.
"""

from abc import ABC, abstractmethod
from typing import Any, Optional, Sequence, Tuple

from .codec import Decoder, Encoder


class _Abort:
    """Distinguished response of an operation that did not take effect."""

    _instance: Optional["_Abort"] = None

    def __new__(cls) -> "_Abort":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "ABORT"

    def __reduce__(self):
        return (_Abort, ())


ABORT = _Abort()


class IntegrityError(Exception):
    """Server state cannot follow an authenticated update; the server must stop."""
    pass


class AuthenticatedDataStructure(ABC):
    """
    Server-side state plus a short client-side authenticator.

    query runs on the server and returns a response and a proof (aux);
    authexec runs on a client and checks them against an authenticator;
    refresh lets the server adopt the client-computed authenticator.
    Operations are opaque to the protocol apart from is_update,
    compatible and the canonical encoding hooks.
    """

    @abstractmethod
    def initial_state(self) -> Any:
        """Fresh server state s0."""

    @abstractmethod
    def initial_authenticator(self) -> bytes:
        """Authenticator a0 of s0."""

    @abstractmethod
    def copy_state(self, state: Any) -> Any:
        """Independent copy of a server state."""

    @abstractmethod
    def apply(self, state: Any, op: Any) -> Tuple[Any, Any]:
        """Plain functional execution F(state, op) -> (state', response)."""

    @abstractmethod
    def query(self, state: Any, ops: Sequence[Any]) -> Tuple[Any, Any]:
        """Response of the last op after applying the others, with a proof."""

    @abstractmethod
    def authexec(self, ops: Sequence[Any], authenticator: bytes,
                 response: Any, aux: Any) -> Tuple[bytes, Any, bool]:
        """Verify a query result; returns (authenticator', refresh aux, valid)."""

    @abstractmethod
    def refresh(self, state: Any, op: Any, aux: Any) -> Any:
        """Return the state after op; raises IntegrityError and leaves state unchanged on mismatch."""

    @abstractmethod
    def is_update(self, op: Any) -> bool:
        """Whether op can change the state."""

    @abstractmethod
    def compatible(self, pending: Sequence[Any], op: Any) -> bool:
        """Whether op's response is the same whether or not pending ops ran first."""

    @abstractmethod
    def genesis_op(self) -> Any:
        """The operation recorded at sequence number 0."""

    # Canonical encoding hooks

    @abstractmethod
    def write_op(self, encoder: Encoder, op: Any) -> None: ...

    @abstractmethod
    def read_op(self, decoder: Decoder) -> Any: ...

    @abstractmethod
    def write_response(self, encoder: Encoder, response: Any) -> None: ...

    @abstractmethod
    def read_response(self, decoder: Decoder) -> Any: ...

    @abstractmethod
    def write_aux(self, encoder: Encoder, aux: Any) -> None: ...

    @abstractmethod
    def read_aux(self, decoder: Decoder) -> Any: ...

    @abstractmethod
    def write_refresh_aux(self, encoder: Encoder, aux: Any) -> None: ...

    @abstractmethod
    def read_refresh_aux(self, decoder: Decoder) -> Any: ...

    def op_bytes(self, op: Any) -> bytes:
        """Canonical encoding of op, as hashed into the chain and signed."""
        encoder = Encoder()
        self.write_op(encoder, op)
        return encoder.getvalue()
