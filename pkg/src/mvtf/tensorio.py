"""Binary serialization for tensors and model checkpoints.

Single-tensor files carry the magic ``MVTF``, a u16 version, a dtype byte
(0 = little-endian float32, 1 = float64), a rank byte, ``rank`` u32
little-endian extents, then the row-major payload.

A checkpoint is one container file: a u64 offset to a text index, the
tensor blobs back to back, then the index itself (one ``name offset`` line
per tensor, plus a ``#meta`` line holding model hyper-parameters as JSON).
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"MVTF"
VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_FOR_KIND = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def tensor_bytes(array: np.ndarray) -> bytes:
    """Serialize one array in the tensor file format."""
    array = np.asarray(array)
    if array.dtype not in _CODE_FOR_KIND:
        array = array.astype(np.float64)
    code = _CODE_FOR_KIND[array.dtype]
    if array.ndim > 255:
        raise FormatError(f"rank {array.ndim} exceeds the format limit")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HBB", VERSION, code, array.ndim))
    buf.write(struct.pack(f"<{array.ndim}I", *array.shape))
    buf.write(np.ascontiguousarray(array, dtype=_DTYPE_CODES[code]).tobytes())
    return buf.getvalue()


def save_tensor(path, array: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_bytes(array))


def read_tensor_from(fh) -> np.ndarray:
    """Parse one tensor record from a binary stream."""
    head = fh.read(8)
    if len(head) < 8 or head[:4] != MAGIC:
        raise FormatError("bad magic bytes: not a tensor file")
    version, code, rank = struct.unpack("<HBB", head[4:8])
    if version != VERSION:
        raise FormatError(f"unsupported tensor format version {version}")
    if code not in _DTYPE_CODES:
        raise FormatError(f"unknown dtype code {code}")
    ext = fh.read(4 * rank)
    if len(ext) < 4 * rank:
        raise FormatError("truncated tensor header")
    shape = struct.unpack(f"<{rank}I", ext) if rank else ()
    dtype = _DTYPE_CODES[code]
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    payload = fh.read(count * dtype.itemsize)
    if len(payload) < count * dtype.itemsize:
        raise FormatError("truncated tensor payload")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor_from(fh)


# -- checkpoint container ------------------------------------------------------


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    """Write named tensors plus a JSON meta record into one container file."""
    blobs: list[tuple[str, bytes]] = []
    for name, arr in tensors.items():
        if any(ch.isspace() for ch in name):
            raise FormatError(f"tensor name {name!r} may not contain whitespace")
        blobs.append((name, tensor_bytes(arr)))

    offset = 8  # the index-offset header itself
    index_lines = []
    for name, blob in blobs:
        index_lines.append(f"{name} {offset}")
        offset += len(blob)
    index_lines.append("#meta " + json.dumps(meta, sort_keys=True))
    index = ("\n".join(index_lines) + "\n").encode("utf-8")

    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", offset))
        for _, blob in blobs:
            fh.write(blob)
        fh.write(index)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read back a container written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) < 8:
            raise FormatError("truncated checkpoint header")
        index_offset = struct.unpack("<Q", head)[0]
        fh.seek(index_offset)
        index_text = fh.read().decode("utf-8", errors="replace")

        meta: dict = {}
        offsets: dict[str, int] = {}
        for line in index_text.splitlines():
            if not line.strip():
                continue
            if line.startswith("#meta "):
                meta = json.loads(line[len("#meta "):])
                continue
            try:
                name, pos = line.rsplit(" ", 1)
                offsets[name] = int(pos)
            except ValueError:
                raise FormatError(f"malformed checkpoint index line: {line!r}")

        tensors: dict[str, np.ndarray] = {}
        for name, pos in offsets.items():
            fh.seek(pos)
            tensors[name] = read_tensor_from(fh)
    return tensors, meta
