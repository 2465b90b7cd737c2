"""
Unit tests for the commutativity baseline
"""

import numpy as np

from src.bench.acop import (commutative_compatibility, commutativity_table,
                            commutes, compatibility_table, operation_grid)
from src.core.adict import Operation


class TestCommutes:
    """Test cases for the commutativity relation."""

    def test_different_keys(self):
        """Operations on different keys commute."""
        assert commutes(Operation.put(b"x", b"1"), Operation.delete(b"y"))

    def test_same_key(self):
        """Only get/get and del/del commute on one key."""
        x = b"x"
        assert commutes(Operation.get(x), Operation.get(x))
        assert commutes(Operation.delete(x), Operation.delete(x))
        assert not commutes(Operation.put(x, b"1"), Operation.put(x, b"2"))
        assert not commutes(Operation.put(x, b"1"), Operation.get(x))
        assert not commutes(Operation.delete(x), Operation.get(x))

    def test_list(self):
        """list commutes with reads only."""
        assert commutes(Operation.list(), Operation.list())
        assert commutes(Operation.get(b"x"), Operation.list())
        assert not commutes(Operation.list(), Operation.put(b"x", b"1"))
        assert not commutes(Operation.delete(b"x"), Operation.list())

    def test_relation_is_symmetric(self):
        """commutes(a, b) == commutes(b, a) on the whole grid."""
        table = commutativity_table()
        assert np.array_equal(table, table.T)


class TestRelationTables:
    """Test cases for the relation tables over the operation grid."""

    def test_grid(self):
        """Seven representative operations."""
        labels = [label for label, _ in operation_grid()]
        assert labels == ["put(x)", "put(y)", "get(x)", "get(y)", "del(x)", "del(y)", "list"]

    def test_commutativity_conflicts(self):
        """22 of the 49 ordered pairs do not commute."""
        assert int((~commutativity_table()).sum()) == 22

    def test_compatibility_conflicts(self, adict):
        """Only 8 of the 49 ordered pairs are incompatible."""
        table = compatibility_table(adict)
        assert int((~table).sum()) == 8

    def test_compatibility_is_weaker(self, adict):
        """Every commuting pair is also compatible."""
        commuting = commutativity_table()
        compatible = compatibility_table(adict)
        assert np.all(compatible[commuting])

    def test_commutative_compatibility(self):
        """The drop-in check needs commutativity with every pending op."""
        pending = [Operation.get(b"x"), Operation.put(b"y", b"1")]
        assert commutative_compatibility(pending, Operation.get(b"x"))
        assert not commutative_compatibility(pending, Operation.put(b"x", b"2"))
        assert commutative_compatibility([], Operation.list())
