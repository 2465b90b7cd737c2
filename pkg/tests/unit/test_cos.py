"""
Unit tests for object storage backends
"""

import time

import pytest

from src.storage.cos import CosError, FilesystemCos, InMemoryCos, create_backend


class TestInMemoryCos:
    """Test cases for InMemoryCos."""

    def test_put_get_delete(self):
        """Objects can be stored, read, overwritten and removed."""
        cos = InMemoryCos()
        cos.put("b", b"2")
        cos.put("a", b"1")
        cos.put("a", b"one")
        assert cos.get("a") == b"one"
        assert cos.list() == ["a", "b"]
        cos.delete("a")
        cos.delete("missing")
        assert cos.get("a") is None
        assert len(cos) == 1

    def test_delete_prefix(self):
        """Prefix deletion removes only matching keys."""
        cos = InMemoryCos()
        for key in ("doc\x0001", "doc\x0002", "docs\x0001", "other"):
            cos.put(key, b"x")
        assert cos.delete_prefix("doc\x00") == 2
        assert cos.list() == ["docs\x0001", "other"]

    def test_stores_a_copy(self):
        """Later changes to the caller's buffer do not leak into storage."""
        cos = InMemoryCos()
        buffer = bytearray(b"abc")
        cos.put("k", buffer)
        buffer[0] = ord("z")
        assert cos.get("k") == b"abc"

    def test_stored_at(self):
        """Write times are tracked until the object is removed."""
        cos = InMemoryCos()
        before = time.time()
        cos.put("k", b"v")
        assert before <= cos.stored_at("k") <= time.time()
        cos.delete("k")
        assert cos.stored_at("k") is None


class TestFilesystemCos:
    """Test cases for FilesystemCos."""

    def test_round_trip_and_persistence(self, tmp_path):
        """Objects survive a new backend instance on the same root."""
        cos = FilesystemCos(tmp_path / "cos")
        cos.put("photo.jpg\x00abcd", b"\x00\x01binary")
        cos.put("ünïcode/path", b"text")
        reopened = FilesystemCos(tmp_path / "cos")
        assert reopened.get("photo.jpg\x00abcd") == b"\x00\x01binary"
        assert reopened.list() == ["photo.jpg\x00abcd", "ünïcode/path"]

    def test_stored_at(self, tmp_path):
        """Write times come from file modification times."""
        cos = FilesystemCos(tmp_path)
        cos.put("k", b"v")
        assert cos.stored_at("k") is not None
        assert cos.stored_at("missing") is None

    def test_missing_objects(self, tmp_path):
        """Reads of missing keys return None and deletes are ignored."""
        cos = FilesystemCos(tmp_path)
        assert cos.get("nothing") is None
        cos.delete("nothing")

    def test_foreign_and_temporary_files_ignored(self, tmp_path):
        """Only files written by the backend are listed."""
        cos = FilesystemCos(tmp_path)
        cos.put("real", b"1")
        (tmp_path / "README").write_text("not hex")
        (tmp_path / (FilesystemCos.TEMP_PREFIX + "abc")).write_bytes(b"partial")
        assert cos.list() == ["real"]

    def test_unusable_root(self, tmp_path):
        """A root that cannot be created raises CosError."""
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(CosError):
            FilesystemCos(blocker / "sub")


class TestCreateBackend:
    """Test cases for backend selection."""

    def test_memory_default(self):
        """The in-memory backend is the default."""
        assert isinstance(create_backend({}), InMemoryCos)

    def test_filesystem(self, tmp_path):
        """The filesystem backend uses the configured root."""
        backend = create_backend({"vicos": {"backend": "filesystem", "cos_root": str(tmp_path)}})
        assert isinstance(backend, FilesystemCos)
        assert backend.root == tmp_path

    def test_unknown_backend(self):
        """Unknown backends raise CosError."""
        with pytest.raises(CosError):
            create_backend({"vicos": {"backend": "s3"}})
