"""Flat binary containers with JSON metadata.

Two layouts share the same array packing:

* bundle file: single file holding ``magic | uint32 header length | header
  JSON | raw array bytes``.  Used for model checkpoints.
* dataset directory: ``data.bin`` next to a ``meta.json`` sidecar whose
  ``arrays`` section indexes into the binary.  Used for motion datasets.

All arrays are stored little-endian and C-contiguous; the header records
numpy dtype strings (``<f8`` etc.), shapes and byte offsets.  JSON is written
with sorted keys and no wall-clock fields, so identical inputs produce
byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import InvalidDataError

MAGIC = b"KMCT"
FORMAT_VERSION = 1


def dump_json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_json(path, obj) -> None:
    Path(path).write_bytes(dump_json_bytes(obj) + b"\n")


def read_json(path):
    return json.loads(Path(path).read_text("utf-8"))


def _canonical(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    if arr.dtype.byteorder == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    return arr


def pack_arrays(arrays: dict[str, np.ndarray]) -> tuple[bytes, dict]:
    """Concatenate arrays into one buffer; return (buffer, manifest).

    Iteration order of ``arrays`` fixes the byte layout, so callers that need
    reproducible files must pass deterministically ordered dicts.
    """
    manifest = {}
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        arr = _canonical(np.asarray(arr))
        raw = arr.tobytes()
        manifest[name] = {
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
        }
        chunks.append(raw)
        offset += len(raw)
    return b"".join(chunks), manifest


def unpack_arrays(buf: bytes, manifest: dict) -> dict[str, np.ndarray]:
    out = {}
    for name, entry in manifest.items():
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + count * dtype.itemsize
        if end > len(buf):
            raise InvalidDataError(f"array {name!r} extends past end of buffer")
        out[name] = np.frombuffer(buf[start:end], dtype=dtype).reshape(shape).copy()
    return out


def save_bundle(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write a single-file container: header JSON followed by raw bytes."""
    blob, manifest = pack_arrays(arrays)
    header = dump_json_bytes(
        {"format_version": FORMAT_VERSION, "meta": meta, "arrays": manifest}
    )
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(header).to_bytes(4, "little"))
        f.write(header)
        f.write(blob)


def load_bundle(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise InvalidDataError(f"{path}: not a kinemic bundle (bad magic)")
    hlen = int.from_bytes(raw[4:8], "little")
    header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise InvalidDataError(
            f"{path}: unsupported format version {header.get('format_version')!r}"
        )
    arrays = unpack_arrays(raw[8 + hlen :], header["arrays"])
    return arrays, header["meta"]


def save_dataset_dir(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write ``data.bin`` + ``meta.json`` into directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blob, manifest = pack_arrays(arrays)
    (path / "data.bin").write_bytes(blob)
    write_json(
        path / "meta.json",
        {
            "format_version": FORMAT_VERSION,
            "byte_order": "little",
            "meta": meta,
            "arrays": manifest,
        },
    )


def load_dataset_dir(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    sidecar = read_json(path / "meta.json")
    if sidecar.get("format_version") != FORMAT_VERSION:
        raise InvalidDataError(
            f"{path}: unsupported format version {sidecar.get('format_version')!r}"
        )
    blob = (path / "data.bin").read_bytes()
    return unpack_arrays(blob, sidecar["arrays"]), sidecar["meta"]
