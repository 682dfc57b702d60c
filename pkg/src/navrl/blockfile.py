"""Versioned binary container: a JSON header plus named raw array blocks.

Layout (little-endian):

    bytes 0..7    magic b"NVBLK01\\n"
    bytes 8..11   uint32 header length in bytes
    header        UTF-8 JSON: {"meta": {...}, "blocks": [{name, dtype, shape,
                  offset, nbytes}, ...]}; offsets are relative to the start of
                  the data section
    data          concatenated raw array bytes (C order)

Used for checkpoints and replay-buffer snapshots.
"""
from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"NVBLK01\n"


def write_blockfile(path: str, meta: dict, blocks: dict) -> None:
    entries = []
    offset = 0
    arrays = []
    for name, arr in blocks.items():
        arr = np.ascontiguousarray(arr)
        entries.append({
            "name": name,
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": arr.nbytes,
        })
        arrays.append(arr)
        offset += arr.nbytes
    header = json.dumps({"meta": meta, "blocks": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for arr in arrays:
            f.write(arr.tobytes())


def read_blockfile(path: str) -> tuple[dict, dict]:
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a block file (bad magic)")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        data = f.read()
    blocks = {}
    for e in header["blocks"]:
        raw = data[e["offset"]:e["offset"] + e["nbytes"]]
        blocks[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return header["meta"], blocks
