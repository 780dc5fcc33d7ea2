"""Minimal ZQH1 container writer.

Written independently of the inference engine so the engine's loader can
act as a byte-level conformance oracle in tests.  Layout: 4-byte magic
"ZQH1", little-endian u32 manifest length, UTF-8 JSON manifest, then the
payload with 64-byte-aligned tensor offsets, little-endian row-major.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

MAGIC = b"ZQH1"
ALIGN = 64

_DTYPE_NAMES = {
    np.dtype(np.float32): "f32",
    np.dtype(np.int8): "i8",
    np.dtype(np.uint8): "u8",
    np.dtype(np.int32): "i32",
}


def write_container(path: str, config: dict | None, tensors: dict[str, np.ndarray]) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _DTYPE_NAMES:
            raise ValueError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        pad = (-offset) % ALIGN
        offset += pad
        blobs.append((pad, raw))
        entries.append({
            "name": name,
            "dtype": _DTYPE_NAMES[arr.dtype],
            "shape": [int(s) for s in arr.shape],
            "offset": offset,
            "nbytes": len(raw),
        })
        offset += len(raw)

    manifest = json.dumps({"config": config, "tensors": entries},
                          sort_keys=True, separators=(",", ":")).encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)),
                               prefix=".zqhx-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(len(manifest).to_bytes(4, "little"))
            f.write(manifest)
            for pad, raw in blobs:
                f.write(b"\x00" * pad)
                f.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
