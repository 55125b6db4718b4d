import numpy as np
import pytest

from textpose.container import ContainerError, load_container, save_container


def test_roundtrip_arrays_and_text(tmp_path):
    path = tmp_path / "box.bin"
    rng = np.random.default_rng(0)
    entries = {
        "w": rng.standard_normal((3, 4)),
        "b": rng.standard_normal(5),
        "scalar": np.asarray(3.25),
        "note": "hello container",
        "unicode": "prompt: étoile ✶",
    }
    save_container(path, entries)
    back = load_container(path)
    assert set(back) == set(entries)
    for k in ("w", "b", "scalar"):
        assert back[k].dtype == np.float64
        assert np.array_equal(back[k], entries[k])
        assert back[k].shape == np.asarray(entries[k]).shape
    assert back["note"] == "hello container"
    assert back["unicode"] == "prompt: étoile ✶"


def test_writer_is_byte_deterministic(tmp_path):
    entries = {"b": np.ones((2, 2)), "a": np.zeros(3), "t": "text"}
    p1, p2 = tmp_path / "one.bin", tmp_path / "two.bin"
    save_container(p1, entries)
    # same content, different insertion order
    save_container(p2, {"t": "text", "a": np.zeros(3), "b": np.ones((2, 2))})
    assert p1.read_bytes() == p2.read_bytes()


def test_rejects_foreign_file(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"PNG\x89 definitely not ours")
    with pytest.raises(ContainerError):
        load_container(path)


def test_rejects_wrong_version(tmp_path):
    path = tmp_path / "v9.bin"
    save_container(path, {"x": np.ones(2)})
    raw = bytearray(path.read_bytes())
    raw[4] = 9  # bump the little-endian version field
    path.write_bytes(bytes(raw))
    with pytest.raises(ContainerError):
        load_container(path)


def test_rejects_truncated_payload(tmp_path):
    path = tmp_path / "cut.bin"
    save_container(path, {"x": np.ones(64)})
    raw = path.read_bytes()
    path.write_bytes(raw[:-16])
    with pytest.raises(ContainerError):
        load_container(path)


def test_empty_container(tmp_path):
    path = tmp_path / "empty.bin"
    save_container(path, {})
    assert load_container(path) == {}
