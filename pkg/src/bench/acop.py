"""
Commutativity relation used as the ACOP baseline
Two dictionary operations commute when both execution orders leave the
same state and give both operations the same responses, on every state.
"""

from typing import List, Sequence, Tuple

import numpy as np

from ..core.adict import OpKind, Operation


def commutes(first: Operation, second: Operation) -> bool:
    kinds = {first.kind, second.kind}
    if OpKind.LIST in kinds:
        # list reads every key, so it only commutes with reads
        return kinds <= {OpKind.LIST, OpKind.GET}
    if first.key != second.key:
        return True
    if first.kind is OpKind.GET and second.kind is OpKind.GET:
        return True
    # deleting a key twice leaves it absent either way
    return first.kind is OpKind.DEL and second.kind is OpKind.DEL


def commutative_compatibility(pending: Sequence[Operation], op: Operation) -> bool:
    """Drop-in for the client's compatibility check that demands commutativity."""
    return all(commutes(other, op) for other in pending)


def operation_grid(key: bytes = b"x", other_key: bytes = b"y") -> List[Tuple[str, Operation]]:
    """One representative for each row and column of the relation tables."""
    return [
        ("put(x)", Operation.put(key, b"1")),
        ("put(y)", Operation.put(other_key, b"1")),
        ("get(x)", Operation.get(key)),
        ("get(y)", Operation.get(other_key)),
        ("del(x)", Operation.delete(key)),
        ("del(y)", Operation.delete(other_key)),
        ("list", Operation.list()),
    ]


def commutativity_table() -> np.ndarray:
    grid = operation_grid()
    return np.array([[commutes(a, b) for _, b in grid] for _, a in grid], dtype=bool)


def compatibility_table(ads) -> np.ndarray:
    """Cell (i, j): operation j stays compatible with operation i pending before it."""
    grid = operation_grid()
    return np.array([[ads.compatible([a], b) for _, b in grid] for _, a in grid], dtype=bool)
