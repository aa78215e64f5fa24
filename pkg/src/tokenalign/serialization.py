"""Binary named-tensor container.

Layout (all integers little-endian u32, floats little-endian f64)::

    b"DALI" | version | { name_len | utf-8 name | rows | cols | rows*cols f64 }*

Entries run to end of file and keep insertion order.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"DALI"
FORMAT_VERSION = 1

_U32 = struct.Struct("<I")


def encode_tensors(tensors: dict[str, np.ndarray], version: int = FORMAT_VERSION) -> bytes:
    parts = [MAGIC, _U32.pack(version)]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise FormatError(f"tensor '{name}' must be at most 2-D, got shape {arr.shape}")
        raw = name.encode("utf-8")
        parts += [_U32.pack(len(raw)), raw, _U32.pack(arr.shape[0]), _U32.pack(arr.shape[1]),
                  np.ascontiguousarray(arr).astype("<f8").tobytes()]
    return b"".join(parts)


def decode_tensors(blob: bytes) -> tuple[int, dict[str, np.ndarray]]:
    if blob[:4] != MAGIC:
        raise FormatError("bad magic; not a DALI tensor file")
    if len(blob) < 8:
        raise FormatError("truncated header")
    (version,) = _U32.unpack_from(blob, 4)
    pos = 8
    out: dict[str, np.ndarray] = {}
    try:
        while pos < len(blob):
            (nlen,) = _U32.unpack_from(blob, pos)
            pos += 4
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            rows, cols = struct.unpack_from("<II", blob, pos)
            pos += 8
            nbytes = rows * cols * 8
            if pos + nbytes > len(blob):
                raise FormatError(f"tensor '{name}' truncated")
            out[name] = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols).astype(np.float64)
            pos += nbytes
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError(f"corrupt tensor table: {exc}") from exc
    return version, out


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode_tensors(tensors))


def load_tensors(path) -> dict[str, np.ndarray]:
    version, tensors = decode_tensors(Path(path).read_bytes())
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    return tensors
