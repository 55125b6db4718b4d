"""Versioned binary container for named arrays and text blobs.

Layout: 4-byte magic, little-endian uint32 version, uint64 header length,
UTF-8 JSON header, then the raw payload. The header lists entries sorted by
name with kind ("f8" for float64 arrays stored little-endian C-order, "text"
for UTF-8 strings), shape, byte offset into the payload, and byte length.
Sorted entries plus canonical JSON make the writer byte-deterministic: the
same mapping always produces the same file.

Checkpoints use only "f8" entries (named parameter tensors and optimizer
moments); dataset files also carry "text" entries for prompts.
"""

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"TPC1"
VERSION = 1


class ContainerError(ValueError):
    """File is not a valid container or does not match this version."""


def save_container(path: str | Path, entries: Mapping[str, "np.ndarray | str"]) -> None:
    index = []
    blobs = []
    offset = 0
    for name in sorted(entries):
        value = entries[name]
        if isinstance(value, str):
            blob = value.encode("utf-8")
            meta = {"kind": "text", "name": name, "nbytes": len(blob)}
        else:
            arr = np.asarray(value, dtype="<f8")
            blob = arr.tobytes()  # C-order bytes, copies if needed
            meta = {"kind": "f8", "name": name, "nbytes": len(blob),
                    "shape": list(arr.shape)}
        meta["offset"] = offset
        offset += len(blob)
        index.append(meta)
        blobs.append(blob)
    header = json.dumps({"entries": index}, sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_container(path: str | Path) -> dict[str, "np.ndarray | str"]:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise ContainerError(f"{path}: not a container file")
    version, header_len = struct.unpack("<IQ", raw[4:16])
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported container version {version}")
    if len(raw) < 16 + header_len:
        raise ContainerError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16:16 + header_len].decode("utf-8"))
        index = header["entries"]
    except (ValueError, KeyError) as exc:
        raise ContainerError(f"{path}: bad header") from exc
    payload = raw[16 + header_len:]
    out: dict[str, np.ndarray | str] = {}
    for meta in index:
        start, nbytes = meta["offset"], meta["nbytes"]
        if start + nbytes > len(payload):
            raise ContainerError(f"{path}: truncated payload at {meta['name']}")
        blob = payload[start:start + nbytes]
        if meta["kind"] == "text":
            out[meta["name"]] = blob.decode("utf-8")
        elif meta["kind"] == "f8":
            arr = np.frombuffer(blob, dtype="<f8").astype(np.float64)
            out[meta["name"]] = arr.reshape(meta["shape"])
        else:
            raise ContainerError(f"{path}: unknown entry kind {meta['kind']!r}")
    return out
