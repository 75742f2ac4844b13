"""``MFV1`` binary matrix files with an optional JSON sidecar.

Layout: 4-byte magic ``MFV1``, uint32 LE rows, uint32 LE cols, then
rows*cols float32 LE values in row-major order. The sidecar lives next to the
file as ``<file>.json``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MFV1"
_HEADER = struct.Struct("<4sII")


class MatrixFormatError(ValueError):
    pass


class MagicMismatchError(MatrixFormatError):
    pass


class TruncatedPayloadError(MatrixFormatError):
    pass


def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def encode_matrix(matrix: np.ndarray) -> bytes:
    m = np.asarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    return _HEADER.pack(MAGIC, m.shape[0], m.shape[1]) + np.ascontiguousarray(m).tobytes()


def decode_matrix(buf: bytes, name: str = "<buffer>") -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise TruncatedPayloadError(f"{name}: {len(buf)} bytes is shorter than the header")
    magic, rows, cols = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise MagicMismatchError(f"{name}: bad magic {magic!r}, expected {MAGIC!r}")
    need = rows * cols * 4
    have = len(buf) - _HEADER.size
    if have < need:
        raise TruncatedPayloadError(f"{name}: header says {rows}x{cols} ({need} bytes), payload has {have}")
    if have > need:
        raise MatrixFormatError(f"{name}: {have - need} trailing bytes after payload")
    return np.frombuffer(buf, dtype="<f4", count=rows * cols, offset=_HEADER.size).reshape(rows, cols).copy()


def write_matrix(path, matrix: np.ndarray, sidecar: dict | None = None) -> None:
    path = Path(path)
    path.write_bytes(encode_matrix(matrix))
    if sidecar is not None:
        sidecar_path(path).write_text(json.dumps(sidecar, sort_keys=True, indent=1) + "\n")


def read_matrix(path) -> np.ndarray:
    return decode_matrix(Path(path).read_bytes(), str(path))


def read_sidecar(path) -> dict:
    sp = sidecar_path(path)
    if not sp.exists():
        raise MatrixFormatError(f"{path}: missing sidecar {sp.name}")
    return json.loads(sp.read_text())
