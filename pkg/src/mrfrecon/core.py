"""Shared geometry type and the ``.mrfa`` binary array container.

Container layout (all integers little-endian)::

    b"MRFA" | u32 version (=1) | u32 header_len | header (UTF-8 JSON) | payload

The header is ``{"dtype": "c128"|"f64"|"i64", "shape": [...], "meta": {...}}``
and the payload holds the raw values in row-major order.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from typing import Any

import numpy as np

MAGIC = b"MRFA"
VERSION = 1

_DTYPES = {
    "c128": np.dtype("<c16"),
    "f64": np.dtype("<f8"),
    "i64": np.dtype("<i8"),
}


class ContainerError(Exception):
    """Base class for container read/write failures."""


class BadMagicError(ContainerError):
    pass


class UnsupportedVersionError(ContainerError):
    pass


class TruncatedPayloadError(ContainerError):
    pass


class NonFiniteError(ContainerError, ValueError):
    pass


@dataclass(frozen=True)
class Geometry:
    """Problem dimensions.

    ``S`` defaults to full sampling (``N``) and ``r`` to ``max(k, min(50, L))``.
    """

    nx: int
    ny: int
    L: int = 1
    k: int = 1
    r: int | None = None
    S: int | None = None
    C: int = 1

    def __post_init__(self):
        if self.r is None:
            object.__setattr__(self, "r", max(self.k, min(50, self.L)))
        if self.S is None:
            object.__setattr__(self, "S", self.nx * self.ny)
        for name in ("nx", "ny", "L", "k", "r", "S", "C"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if not self.k <= self.r <= self.L:
            raise ValueError(f"need k <= r <= L, got k={self.k} r={self.r} L={self.L}")

    @property
    def N(self) -> int:
        return self.nx * self.ny

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)


def _dtype_tag(arr: np.ndarray) -> str:
    if np.iscomplexobj(arr):
        return "c128"
    if arr.dtype.kind in "biu":
        return "i64"
    if arr.dtype.kind == "f":
        return "f64"
    raise TypeError(f"unsupported dtype {arr.dtype}")


def encode_array(arr, meta: dict[str, Any] | None = None) -> bytes:
    """Serialize ``arr`` and ``meta`` to container bytes."""
    arr = np.asarray(arr)
    tag = _dtype_tag(arr)
    data = np.ascontiguousarray(arr, dtype=_DTYPES[tag])
    if tag != "i64" and not np.all(np.isfinite(data)):
        raise NonFiniteError("array contains NaN or Inf")
    header = json.dumps(
        {"dtype": tag, "shape": [int(s) for s in data.shape], "meta": meta or {}},
        sort_keys=True,
        separators=(",", ":"),
        allow_nan=False,
    ).encode("utf-8")
    return MAGIC + struct.pack("<II", VERSION, len(header)) + header + data.tobytes()


def decode_array(buf: bytes) -> tuple[np.ndarray, dict[str, Any]]:
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}")
    version, header_len = struct.unpack("<II", buf[4:12])
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported container version {version}")
    if len(buf) < 12 + header_len:
        raise TruncatedPayloadError("header truncated")
    header = json.loads(buf[12 : 12 + header_len].decode("utf-8"))
    dtype = _DTYPES[header["dtype"]]
    shape = tuple(header["shape"])
    expected = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
    payload = buf[12 + header_len :]
    if len(payload) != expected:
        raise TruncatedPayloadError(
            f"payload has {len(payload)} bytes, shape {list(shape)} needs {expected}"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    return arr, header.get("meta", {})


def write_array(path, arr, meta: dict[str, Any] | None = None) -> None:
    """Write ``arr`` to ``path`` in the container format.

    Raises
    ------
    NonFiniteError
        If a float or complex array holds NaN/Inf.
    FileNotFoundError
        If the parent directory does not exist.
    """
    buf = encode_array(arr, meta)
    with open(os.fspath(path), "wb") as fh:
        fh.write(buf)


def read_array(path) -> tuple[np.ndarray, dict[str, Any]]:
    with open(os.fspath(path), "rb") as fh:
        return decode_array(fh.read())


def payload_nbytes(tag: str, shape) -> int:
    return _DTYPES[tag].itemsize * int(np.prod(shape, dtype=np.int64))
