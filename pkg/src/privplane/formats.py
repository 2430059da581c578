"""Little-endian binary containers for latent matrices and projection records.

Latent matrix (``.pppl``)::

    b"PPPL" | version u32 | rows u64 | cols u64 | rows*cols float64 (row-major)

Projection record table (``.pppr``)::

    b"PPPR" | version u32 | count u64 | count * (i u32, j u32, sample u64, w0 f64, w1 f64, ratio f64)
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import BadMagic, TruncatedFile

VERSION = 1
_LATENT_HEADER = struct.Struct("<4sIQQ")
_RECORD_HEADER = struct.Struct("<4sIQ")

RECORD_DTYPE = np.dtype(
    [("i", "<u4"), ("j", "<u4"), ("sample", "<u8"), ("w", "<f8", (2,)), ("ratio", "<f8")]
)


def latent_bytes(matrix: np.ndarray) -> bytes:
    m = np.ascontiguousarray(matrix, dtype="<f8")
    if m.ndim != 2:
        raise ValueError(f"latent matrix must be 2-d, got shape {m.shape}")
    return _LATENT_HEADER.pack(b"PPPL", VERSION, m.shape[0], m.shape[1]) + m.tobytes()


def parse_latent(buf: bytes) -> np.ndarray:
    if len(buf) < _LATENT_HEADER.size:
        raise TruncatedFile("latent file shorter than its header")
    magic, version, rows, cols = _LATENT_HEADER.unpack_from(buf)
    if magic != b"PPPL":
        raise BadMagic(f"expected b'PPPL', found {magic!r}")
    if version != VERSION:
        raise BadMagic(f"unsupported latent file version {version}")
    body = buf[_LATENT_HEADER.size:]
    if len(body) != rows * cols * 8:
        raise TruncatedFile(f"latent body has {len(body)} bytes, header promises {rows * cols * 8}")
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(np.float64)


def write_latent(path, matrix: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(latent_bytes(matrix))


def read_latent(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_latent(fh.read())


def records_bytes(table: np.ndarray) -> bytes:
    table = np.ascontiguousarray(table, dtype=RECORD_DTYPE)
    return _RECORD_HEADER.pack(b"PPPR", VERSION, len(table)) + table.tobytes()


def parse_records(buf: bytes) -> np.ndarray:
    if len(buf) < _RECORD_HEADER.size:
        raise TruncatedFile("record file shorter than its header")
    magic, version, count = _RECORD_HEADER.unpack_from(buf)
    if magic != b"PPPR":
        raise BadMagic(f"expected b'PPPR', found {magic!r}")
    if version != VERSION:
        raise BadMagic(f"unsupported record file version {version}")
    body = buf[_RECORD_HEADER.size:]
    if len(body) != count * RECORD_DTYPE.itemsize:
        raise TruncatedFile(f"record body has {len(body)} bytes, expected {count * RECORD_DTYPE.itemsize}")
    return np.frombuffer(body, dtype=RECORD_DTYPE).copy()


def write_records(path, table: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(records_bytes(table))


def read_records(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_records(fh.read())


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return str(path)
