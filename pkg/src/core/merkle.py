"""
Merkle tree over an ordered list of leaf digests
Left-balanced shape: a node over n leaves splits at the largest power of
two strictly below n. Leaves are hashed by the caller; interior nodes
are H(0x01 || left || right).
"""

from enum import Enum
from typing import List, Optional, Sequence, Tuple

from .crypto import Digest, HashFunction


NODE_PREFIX = b"\x01"


class Side(Enum):
    """Position of a sibling digest relative to the path node."""
    LEFT = 0
    RIGHT = 1


Sibling = Tuple[Side, Digest]


def split_point(count: int) -> int:
    """Largest power of two strictly below count (count >= 2)."""
    k = 1
    while k << 1 < count:
        k <<= 1
    return k


def node_hash(hash_fn: HashFunction, left: Digest, right: Digest) -> Digest:
    return hash_fn.hash_parts(NODE_PREFIX, left, right)


def merkle_root(leaves: Sequence[Digest], hash_fn: HashFunction) -> Digest:
    if not leaves:
        raise ValueError("Merkle tree needs at least one leaf")
    if len(leaves) == 1:
        return leaves[0]
    k = split_point(len(leaves))
    return node_hash(hash_fn, merkle_root(leaves[:k], hash_fn),
                     merkle_root(leaves[k:], hash_fn))


def merkle_path(leaves: Sequence[Digest], index: int,
                hash_fn: HashFunction) -> Tuple[Sibling, ...]:
    """Siblings from the leaf up to the root."""
    if not 0 <= index < len(leaves):
        raise IndexError(f"Leaf index {index} out of range for {len(leaves)} leaves")

    path: List[Sibling] = []
    lo, hi = 0, len(leaves)
    while hi - lo > 1:
        k = split_point(hi - lo)
        mid = lo + k
        if index < mid:
            path.append((Side.RIGHT, merkle_root(leaves[mid:hi], hash_fn)))
            hi = mid
        else:
            path.append((Side.LEFT, merkle_root(leaves[lo:mid], hash_fn)))
            lo = mid
    path.reverse()
    return tuple(path)


def path_sides(index: int, count: int) -> List[Side]:
    """Sibling sides, leaf to root, for leaf index in a tree of count leaves."""
    sides: List[Side] = []
    lo, hi = 0, count
    while hi - lo > 1:
        mid = lo + split_point(hi - lo)
        if index < mid:
            sides.append(Side.RIGHT)
            hi = mid
        else:
            sides.append(Side.LEFT)
            lo = mid
    sides.reverse()
    return sides


def index_from_sides(sides: Sequence[Side], count: int) -> Optional[int]:
    """Leaf index whose path in a count-leaf tree has exactly these sides."""
    if count < 1:
        return None
    lo, hi = 0, count
    for side in reversed(sides):
        if hi - lo <= 1:
            return None
        mid = lo + split_point(hi - lo)
        if side is Side.RIGHT:
            hi = mid
        else:
            lo = mid
    return lo if hi - lo == 1 else None


def fold_path(leaf: Digest, siblings: Sequence[Sibling],
              hash_fn: HashFunction) -> Digest:
    """Root implied by a leaf digest and its sibling path."""
    node = leaf
    for side, digest in siblings:
        if side is Side.LEFT:
            node = node_hash(hash_fn, digest, node)
        else:
            node = node_hash(hash_fn, node, digest)
    return node
