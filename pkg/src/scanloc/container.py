"""Self-describing binary container for named arrays plus JSON metadata.

One format backs model checkpoints, occupancy-grid caches, and classical
grid maps (each with its own `kind` tag).  Writing is fully deterministic:
the header JSON is canonicalized and arrays are stored little-endian in
sorted name order, so write -> read -> write reproduces identical bytes.
"""
from __future__ import annotations

import json
from typing import Any

import numpy as np

MAGIC = b"SCLARRS\n"
FORMAT_VERSION = 1


def write_container(path: str, kind: str, meta: dict[str, Any],
                    arrays: dict[str, np.ndarray]) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        if a.dtype.byteorder == ">":
            a = a.astype(a.dtype.newbyteorder("<"))
        blob = a.tobytes()
        entries.append({
            "name": name,
            "dtype": a.dtype.str,
            "shape": list(a.shape),
            "offset": offset,
        })
        blobs.append(blob)
        offset += len(blob)

    header = json.dumps(
        {"kind": kind, "version": FORMAT_VERSION, "meta": meta, "arrays": entries},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")

    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.uint64(len(header)).tobytes())
        f.write(header)
        for blob in blobs:
            f.write(blob)


def read_container(path: str,
                   expect_kind: str | None = None
                   ) -> tuple[str, dict[str, Any], dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a scanloc container")
        header_len = int(np.frombuffer(f.read(8), dtype=np.uint64)[0])
        header = json.loads(f.read(header_len).decode("utf-8"))
        if header.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported container version "
                             f"{header.get('version')}")
        kind = header["kind"]
        if expect_kind is not None and kind != expect_kind:
            raise ValueError(f"{path}: expected kind {expect_kind!r}, found {kind!r}")
        payload = f.read()

    arrays = {}
    for entry in header["arrays"]:
        dt = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        n = dt.itemsize * int(np.prod(shape)) if shape else dt.itemsize
        start = entry["offset"]
        arrays[entry["name"]] = np.frombuffer(
            payload[start:start + n], dtype=dt).reshape(shape).copy()
    return kind, header["meta"], arrays
