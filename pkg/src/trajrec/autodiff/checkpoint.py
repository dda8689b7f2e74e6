"""Flat, byte-deterministic archive of named arrays with a JSON header.

The format is a magic line, an 8-byte little-endian header length, the
header JSON (sorted keys, no timestamps), then the raw C-order bytes of
each array in manifest order. Identical inputs therefore produce
byte-identical files, and round-trips are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import FormatError

MAGIC = b"TRAJREC-CKPT-1\n"


def save_arrays(path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    manifest = [[name, list(a.shape), str(a.dtype)] for name, a in arrays.items()]
    head = dict(header)
    head["arrays"] = manifest
    blob = json.dumps(head, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for _, a in arrays.items():
            fh.write(np.ascontiguousarray(a).tobytes())


def load_arrays(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise FormatError(f"{path}: not a checkpoint archive")
    off = len(MAGIC)
    hlen = int.from_bytes(raw[off:off + 8], "little")
    off += 8
    try:
        header = json.loads(raw[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from exc
    off += hlen
    manifest = header.pop("arrays", [])
    arrays: dict[str, np.ndarray] = {}
    for name, shape, dtype in manifest:
        dt = np.dtype(dtype)
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dt.itemsize
        if off + nbytes > len(raw):
            raise FormatError(f"{path}: truncated array {name!r}")
        arrays[name] = np.frombuffer(
            raw[off:off + nbytes], dtype=dt).reshape(shape).copy()
        off += nbytes
    return header, arrays
