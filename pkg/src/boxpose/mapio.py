"""Flat-binary tensor files with JSON manifests.

Used for output-map dumps and convGRU weight files. The ``.bin`` holds
raw little-endian row-major arrays back to back; the ``.json`` manifest
records name, shape, dtype, and byte offset per tensor plus optional
metadata.
"""

import json
import os

import numpy as np


def save_tensors(prefix, tensors, meta=None):
    """Write ``{name: array}`` to ``prefix.bin`` + ``prefix.json``."""
    entries = []
    offset = 0
    with open(prefix + ".bin", "wb") as fb:
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name])
            raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
            fb.write(raw)
            entries.append(
                {
                    "name": name,
                    "shape": list(arr.shape),
                    "dtype": str(arr.dtype),
                    "offset": offset,
                    "nbytes": len(raw),
                }
            )
            offset += len(raw)
    manifest = {"layout": "row-major", "byteorder": "little", "tensors": entries}
    if meta is not None:
        manifest["meta"] = meta
    with open(prefix + ".json", "w") as fj:
        json.dump(manifest, fj, indent=1, sort_keys=True)


def load_tensors(prefix):
    """Read back ``(tensors, meta)`` written by :func:`save_tensors`."""
    with open(prefix + ".json") as fj:
        manifest = json.load(fj)
    raw = np.fromfile(prefix + ".bin", dtype=np.uint8)
    tensors = {}
    for entry in manifest["tensors"]:
        dt = np.dtype(entry["dtype"]).newbyteorder("<")
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(
            raw.tobytes(), dtype=dt, count=count, offset=entry["offset"]
        ).reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(np.dtype(entry["dtype"]))
    return tensors, manifest.get("meta")


def exists(prefix):
    return os.path.exists(prefix + ".bin") and os.path.exists(prefix + ".json")
