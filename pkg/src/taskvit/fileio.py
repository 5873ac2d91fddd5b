"""On-disk formats: tensor files, atomic writes, JSON / JSONL helpers.

Tensor file layout (used for images, masks, embeddings, and checkpoints):
magic ``OTMT``, u32 version, u32 rank, then ``rank`` u64 dims, then the
row-major little-endian float64 payload. Round-trips are bit exact.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import DataError

TENSOR_MAGIC = b"OTMT"
TENSOR_VERSION = 1

_HEADER = struct.Struct("<4sII")


def tensor_bytes(array: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(array, dtype=np.float64)
    header = _HEADER.pack(TENSOR_MAGIC, TENSOR_VERSION, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    return header + dims + arr.astype("<f8", copy=False).tobytes(order="C")


def tensor_from_bytes(raw: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(raw) < _HEADER.size:
        raise DataError(f"{source}: truncated tensor file")
    magic, version, rank = _HEADER.unpack_from(raw)
    if magic != TENSOR_MAGIC:
        raise DataError(f"{source}: bad magic {magic!r}, expected {TENSOR_MAGIC!r}")
    if version != TENSOR_VERSION:
        raise DataError(f"{source}: unsupported tensor format version {version}")
    offset = _HEADER.size
    if len(raw) < offset + 8 * rank:
        raise DataError(f"{source}: truncated dimension header")
    shape = struct.unpack_from(f"<{rank}Q", raw, offset) if rank else ()
    offset += 8 * rank
    count = int(np.prod(shape)) if rank else 1
    payload = raw[offset:]
    if len(payload) != 8 * count:
        raise DataError(
            f"{source}: payload holds {len(payload) // 8} values, shape {shape} needs {count}"
        )
    return np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)


def save_tensor(path: str | Path, array: np.ndarray) -> None:
    atomic_write_bytes(path, tensor_bytes(array))


def load_tensor(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read tensor file {path}: {exc}") from exc
    return tensor_from_bytes(raw, source=str(path))


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: str | Path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path: str | Path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from exc


def write_jsonl(path: str | Path, records) -> None:
    lines = "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in records)
    atomic_write_text(path, lines)


def read_jsonl(path: str | Path) -> list:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno} is not valid JSON: {exc}") from exc
    return out
