"""
Unit tests for Merkle tree helpers
"""

import pytest

from src.core.crypto import SHA256
from src.core.merkle import (Side, fold_path, index_from_sides, merkle_path,
                             merkle_root, node_hash, path_sides, split_point)


def leaves(count):
    return [SHA256(bytes([i])) for i in range(count)]


class TestTreeShape:
    """Test cases for the left-balanced tree shape."""

    def test_split_point(self):
        """The split is the largest power of two below the leaf count."""
        assert split_point(2) == 1
        assert split_point(3) == 2
        assert split_point(4) == 2
        assert split_point(5) == 4
        assert split_point(9) == 8

    def test_single_leaf_root(self):
        """A one-leaf tree's root is the leaf itself."""
        only = leaves(1)
        assert merkle_root(only, SHA256) == only[0]

    def test_three_leaf_root(self):
        """Three leaves split as (two, one)."""
        a, b, c = leaves(3)
        expected = node_hash(SHA256, node_hash(SHA256, a, b), c)
        assert merkle_root([a, b, c], SHA256) == expected

    def test_empty_tree_rejected(self):
        """Trees need at least one leaf."""
        with pytest.raises(ValueError):
            merkle_root([], SHA256)


class TestPaths:
    """Test cases for authentication paths."""

    @pytest.mark.parametrize("count", [1, 2, 3, 5, 8, 13])
    def test_every_path_folds_to_root(self, count):
        """Each leaf's path folds back to the root."""
        digests = leaves(count)
        root = merkle_root(digests, SHA256)
        for index in range(count):
            path = merkle_path(digests, index, SHA256)
            assert fold_path(digests[index], path, SHA256) == root

    @pytest.mark.parametrize("count", [1, 2, 3, 6, 7, 16])
    def test_sides_identify_the_leaf(self, count):
        """The sequence of sibling sides pins down the leaf index."""
        digests = leaves(count)
        for index in range(count):
            sides = [side for side, _ in merkle_path(digests, index, SHA256)]
            assert sides == path_sides(index, count)
            assert index_from_sides(sides, count) == index

    def test_wrong_length_sides(self):
        """Side sequences of the wrong depth identify no leaf."""
        assert index_from_sides([Side.RIGHT], 4) is None
        assert index_from_sides([Side.LEFT] * 5, 4) is None
        assert index_from_sides([], 0) is None

    def test_wrong_leaf_does_not_fold(self):
        """Folding a different leaf gives a different root."""
        digests = leaves(4)
        path = merkle_path(digests, 1, SHA256)
        assert fold_path(digests[2], path, SHA256) != merkle_root(digests, SHA256)

    def test_index_out_of_range(self):
        """Paths are only defined for existing leaves."""
        with pytest.raises(IndexError):
            merkle_path(leaves(3), 3, SHA256)
