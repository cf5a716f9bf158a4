"""Versioned binary container for named float64 arrays plus JSON metadata.

Layout::

    b"BVAECKPT" | u32 version | u64 header length | header JSON | raw arrays

The header lists every array's name and shape in write order; the array
payload is little-endian float64, C order.  Headers are dumped with sorted
keys so save -> load -> save reproduces the same bytes.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"BVAECKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    path = Path(path)
    entries = [{"name": k, "shape": list(np.shape(a))} for k, a in arrays.items()]
    header = json.dumps({"arrays": entries, "meta": meta}, sort_keys=True,
                        separators=(",", ":")).encode()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, len(header)))
        f.write(header)
        for a in arrays.values():
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", data, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = len(MAGIC) + struct.calcsize("<IQ")
    header = json.loads(data[start:start + hlen])
    offset = start + hlen
    arrays = {}
    for e in header["arrays"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        end = offset + 8 * count
        if end > len(data):
            raise CheckpointError(f"{path}: truncated payload at array {e['name']!r}")
        arrays[e["name"]] = np.frombuffer(data[offset:end], dtype="<f8").reshape(e["shape"]).copy()
        offset = end
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return arrays, header["meta"]
