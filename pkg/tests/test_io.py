import numpy as np
import pytest

from kinemic.errors import InvalidDataError
from kinemic.io import (
    load_bundle,
    load_dataset_dir,
    pack_arrays,
    save_bundle,
    save_dataset_dir,
    unpack_arrays,
)


def _arrays():
    rng = np.random.default_rng(0)
    return {
        "alpha": rng.normal(size=(3, 4)),
        "beta": rng.integers(0, 10, size=(7,)).astype(np.int64),
        "gamma": rng.normal(size=(2, 2, 2)).astype(np.float32),
    }


def test_pack_unpack_round_trip():
    arrays = _arrays()
    blob, manifest = pack_arrays(arrays)
    out = unpack_arrays(blob, manifest)
    for name, arr in arrays.items():
        assert out[name].dtype == arr.dtype
        assert np.array_equal(out[name], arr)


def test_bundle_round_trip(tmp_path):
    path = tmp_path / "x.kmct"
    meta = {"kind": "test", "nested": {"a": 1}}
    save_bundle(path, _arrays(), meta)
    arrays, loaded_meta = load_bundle(path)
    assert loaded_meta == meta
    assert np.array_equal(arrays["alpha"], _arrays()["alpha"])


def test_bundle_deterministic_bytes(tmp_path):
    a, b = tmp_path / "a.kmct", tmp_path / "b.kmct"
    save_bundle(a, _arrays(), {"k": 1})
    save_bundle(b, _arrays(), {"k": 1})
    assert a.read_bytes() == b.read_bytes()


def test_bundle_bad_magic(tmp_path):
    path = tmp_path / "bad.kmct"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(InvalidDataError):
        load_bundle(path)


def test_dataset_dir_round_trip(tmp_path):
    arrays = _arrays()
    save_dataset_dir(tmp_path / "ds", arrays, {"fps": 20.0})
    out, meta = load_dataset_dir(tmp_path / "ds")
    assert meta == {"fps": 20.0}
    for name in arrays:
        assert np.array_equal(out[name], arrays[name])


def test_dataset_dir_deterministic(tmp_path):
    save_dataset_dir(tmp_path / "a", _arrays(), {"v": 1})
    save_dataset_dir(tmp_path / "b", _arrays(), {"v": 1})
    assert (tmp_path / "a" / "data.bin").read_bytes() == (
        tmp_path / "b" / "data.bin"
    ).read_bytes()
    assert (tmp_path / "a" / "meta.json").read_bytes() == (
        tmp_path / "b" / "meta.json"
    ).read_bytes()


def test_truncated_buffer_rejected():
    blob, manifest = pack_arrays(_arrays())
    with pytest.raises(InvalidDataError):
        unpack_arrays(blob[:-8], manifest)
