"""
Unit tests for the canonical encoder and decoder
"""

import pytest

from src.core.codec import DecodeError, Decoder, Encoder


class TestEncoder:
    """Test cases for Encoder."""

    def test_fixed_width_integers_are_big_endian(self):
        """Integers use fixed-width big-endian encodings."""
        data = Encoder().u8(1).u32(2).u64(3).getvalue()
        assert data == b"\x01" + b"\x00\x00\x00\x02" + b"\x00" * 7 + b"\x03"

    def test_blob_is_length_prefixed(self):
        """Blobs carry a 4-byte length prefix."""
        assert Encoder().blob(b"abc").getvalue() == b"\x00\x00\x00\x03abc"

    def test_optional_blob(self):
        """Absent optional blobs encode as a single zero flag byte."""
        assert Encoder().optional_blob(None).getvalue() == b"\x00"
        assert Encoder().optional_blob(b"").getvalue() == b"\x01\x00\x00\x00\x00"

    def test_adjacent_fields_cannot_be_confused(self):
        """Length prefixes keep ('ab', 'c') and ('a', 'bc') apart."""
        first = Encoder().blob(b"ab").blob(b"c").getvalue()
        second = Encoder().blob(b"a").blob(b"bc").getvalue()
        assert first != second


class TestDecoder:
    """Test cases for Decoder."""

    def test_reads_back_fields(self):
        """Decoder reads fields in the order they were written."""
        data = Encoder().u8(7).u32(70000).u64(2 ** 40).text("héllo").optional_blob(b"x").getvalue()
        decoder = Decoder(data)
        assert decoder.u8() == 7
        assert decoder.u32() == 70000
        assert decoder.u64() == 2 ** 40
        assert decoder.text() == "héllo"
        assert decoder.optional_blob() == b"x"
        decoder.finish()

    def test_truncated_input(self):
        """Reading past the end raises DecodeError."""
        data = Encoder().blob(b"abcdef").getvalue()[:-1]
        with pytest.raises(DecodeError, match="truncated"):
            Decoder(data).blob()

    def test_invalid_flag(self):
        """Flag bytes other than 0 and 1 are rejected."""
        with pytest.raises(DecodeError, match="invalid flag"):
            Decoder(b"\x02").flag()

    def test_trailing_bytes(self):
        """finish() rejects unread input."""
        decoder = Decoder(b"\x01\x02")
        decoder.u8()
        with pytest.raises(DecodeError, match="trailing"):
            decoder.finish()

    def test_count_bounded_by_input(self):
        """Element counts larger than the remaining input are rejected."""
        data = Encoder().u32(1000).getvalue() + b"\x00" * 10
        with pytest.raises(DecodeError, match="exceeds"):
            Decoder(data).count(minimum_item_size=4)

    def test_invalid_utf8(self):
        """Text fields must be valid UTF-8."""
        data = Encoder().blob(b"\xff\xfe").getvalue()
        with pytest.raises(DecodeError, match="utf-8"):
            Decoder(data).text()
