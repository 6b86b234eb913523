"""Binary checkpoint container with named tensors and a JSON header.

Layout (all integers little-endian):

    bytes 0..3    magic ``I2ID``
    bytes 4..7    format version, uint32 (currently 1)
    bytes 8..15   header length in bytes, uint64
    header        UTF-8 JSON: {"meta": {...}, "arrays": [{"name", "dtype",
                  "shape", "offset", "nbytes"}, ...]} with sorted keys and no
                  whitespace; array entries sorted by name; offsets are
                  relative to the start of the blob
    blob          C-contiguous little-endian tensor bytes, in header order
    trailer       CRC-32 (zlib polynomial) of every preceding byte, uint32

Saving the result of a load produces a byte-identical file.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"I2ID"
FORMAT_VERSION = 1


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        # ascontiguousarray promotes 0-d arrays to 1-d, so take the shape
        # from the original
        original = np.asarray(arrays[name])
        arr = np.ascontiguousarray(original)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        entries.append({"name": name, "dtype": arr.dtype.name,
                        "shape": list(original.shape), "offset": offset,
                        "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": entries},
                        sort_keys=True, separators=(",", ":")).encode()
    body = (MAGIC + struct.pack("<I", FORMAT_VERSION)
            + struct.pack("<Q", len(header)) + header + b"".join(blobs))
    crc = zlib.crc32(body) & 0xFFFFFFFF
    Path(path).write_bytes(body + struct.pack("<I", crc))


def load_checkpoint(path):
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    stored_crc, = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != stored_crc:
        raise ValueError(f"{path}: CRC mismatch, file corrupt")
    version, = struct.unpack("<I", data[4:8])
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    header_len, = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + header_len].decode())
    blob = data[16 + header_len:-4]
    arrays = {}
    for e in header["arrays"]:
        raw = blob[e["offset"]:e["offset"] + e["nbytes"]]
        dt = np.dtype(e["dtype"]).newbyteorder("<")
        arrays[e["name"]] = np.frombuffer(raw, dtype=dt).reshape(
            e["shape"]).astype(e["dtype"])
    return arrays, header["meta"]
