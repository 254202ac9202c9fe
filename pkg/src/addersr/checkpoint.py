"""Binary checkpoint container.

Layout::

    b"ADSR1"
    uint64 little-endian: byte length of the JSON header
    UTF-8 JSON header
    float64 little-endian arrays, concatenated in header["arrays"] order
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"ADSR1"


def dumps(header: dict, arrays: dict[str, np.ndarray]) -> bytes:
    header = dict(header)
    header["arrays"] = [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()]
    text = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<Q", len(text)), text]
    for v in arrays.values():
        parts.append(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if blob[:5] != MAGIC:
        raise FormatError("bad checkpoint magic", offset=0)
    if len(blob) < 13:
        raise FormatError("truncated header length", offset=len(blob))
    (n,) = struct.unpack("<Q", blob[5:13])
    end = 13 + n
    if len(blob) < end:
        raise FormatError("truncated header", offset=len(blob))
    try:
        header = json.loads(blob[13:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable header: {exc}", offset=13) from None
    arrays = {}
    pos = end
    for entry in header.get("arrays", []):
        shape = tuple(entry["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(blob):
            raise FormatError(f"truncated array {entry['name']!r}", offset=len(blob))
        arrays[entry["name"]] = np.frombuffer(blob, dtype="<f8", count=nbytes // 8,
                                              offset=pos).reshape(shape).astype(np.float64)
        pos += nbytes
    if pos != len(blob):
        raise FormatError("trailing bytes after last array", offset=pos)
    return header, arrays


def save(path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(header, arrays))


def load(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        return loads(fh.read())
