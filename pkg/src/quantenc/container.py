"""ZQH1 binary tensor container.

Byte layout::

    bytes 0..3    magic "ZQH1"
    bytes 4..7    little-endian u32 manifest length L
    bytes 8..8+L  UTF-8 JSON manifest
    payload       tensor bytes, offsets relative to payload start

Manifest::

    {"config": {...} | null,
     "tensors": [{"name": str, "dtype": "f32"|"i8"|"u8"|"i32",
                  "shape": [...], "offset": u64, "nbytes": u64}, ...]}

Tensors are stored little-endian row-major and every offset is 64-byte
aligned.  Writing is atomic (temp file + rename) and deterministic: the
same config and tensors always produce identical bytes.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .errors import (
    BadMagicError,
    ManifestError,
    TruncatedPayloadError,
    UnknownDtypeError,
)

MAGIC = b"ZQH1"
ALIGN = 64

_DTYPES = {
    "f32": np.dtype("<f4"),
    "i8": np.dtype("i1"),
    "u8": np.dtype("u1"),
    "i32": np.dtype("<i4"),
}
_DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.int8): "i8",
                np.dtype(np.uint8): "u8", np.dtype(np.int32): "i32"}


def _dtype_name(arr: np.ndarray) -> str:
    try:
        return _DTYPE_NAMES[arr.dtype]
    except KeyError:
        raise UnknownDtypeError(f"unsupported tensor dtype {arr.dtype}") from None


def write_container(path: str, config: dict | None, tensors: dict[str, np.ndarray]) -> None:
    """Serialize config + named tensors to ``path`` atomically."""
    entries = []
    blobs = []
    offset = 0
    for name in tensors:
        arr = np.ascontiguousarray(tensors[name])
        dtype = _dtype_name(arr)
        raw = arr.astype(_DTYPES[dtype], copy=False).tobytes()
        pad = (-offset) % ALIGN
        offset += pad
        blobs.append((pad, raw))
        entries.append({
            "name": name,
            "dtype": dtype,
            "shape": [int(s) for s in arr.shape],
            "offset": offset,
            "nbytes": len(raw),
        })
        offset += len(raw)

    manifest = json.dumps({"config": config, "tensors": entries},
                          sort_keys=True, separators=(",", ":")).encode("utf-8")

    dirname = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=dirname, prefix=".zqh-")
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


def read_container(path: str) -> tuple[dict | None, dict[str, np.ndarray]]:
    """Parse a container file; returns (config, name -> tensor)."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 8 or data[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a ZQH1 container")
    mlen = int.from_bytes(data[4:8], "little")
    if 8 + mlen > len(data):
        raise TruncatedPayloadError(f"{path}: manifest extends past end of file")
    try:
        manifest = json.loads(data[8:8 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{path}: unreadable manifest: {exc}") from exc
    if not isinstance(manifest, dict) or "tensors" not in manifest:
        raise ManifestError(f"{path}: manifest missing 'tensors'")

    payload = data[8 + mlen:]
    tensors: dict[str, np.ndarray] = {}
    for ent in manifest["tensors"]:
        try:
            name, dtype = ent["name"], ent["dtype"]
            shape = tuple(int(s) for s in ent["shape"])
            offset, nbytes = int(ent["offset"]), int(ent["nbytes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"{path}: malformed tensor entry {ent!r}") from exc
        if dtype not in _DTYPES:
            raise UnknownDtypeError(f"{path}: tensor {name} has unknown dtype {dtype!r}")
        np_dtype = _DTYPES[dtype]
        expected = int(np.prod(shape, dtype=np.int64)) * np_dtype.itemsize
        if expected != nbytes:
            raise ManifestError(
                f"{path}: tensor {name} shape {shape} needs {expected} bytes, manifest says {nbytes}"
            )
        if offset + nbytes > len(payload):
            raise TruncatedPayloadError(f"{path}: tensor {name} extends past end of payload")
        arr = np.frombuffer(payload, dtype=np_dtype, count=int(np.prod(shape, dtype=np.int64)),
                            offset=offset).reshape(shape)
        tensors[name] = arr.copy()  # own the memory, file buffer is released
    return manifest.get("config"), tensors


def write_batches(path: str, ids: np.ndarray, mask: np.ndarray,
                  labels: np.ndarray | None = None) -> None:
    """Write a calibration/eval batch-data file (ids, mask, optional labels)."""
    ids = np.asarray(ids, dtype=np.int32)
    mask = np.asarray(mask, dtype=np.int32)
    if ids.shape != mask.shape or ids.ndim != 2:
        raise ManifestError(f"ids {ids.shape} and mask {mask.shape} must be equal rank-2")
    tensors = {"ids": ids, "mask": mask}
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int32)
        if labels.shape != (ids.shape[0],):
            raise ManifestError(f"labels {labels.shape} must be ({ids.shape[0]},)")
        tensors["labels"] = labels
    write_container(path, None, tensors)


def read_batches(path: str) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Read a batch-data file; returns (ids, mask, labels-or-None)."""
    _, tensors = read_container(path)
    for req in ("ids", "mask"):
        if req not in tensors:
            raise ManifestError(f"{path}: batch data missing tensor {req!r}")
    ids, mask = tensors["ids"], tensors["mask"]
    if ids.shape != mask.shape or ids.ndim != 2:
        raise ManifestError(f"{path}: ids {ids.shape} / mask {mask.shape} malformed")
    return ids, mask, tensors.get("labels")
