"""Minimal binary volume format (``.segv``).

Layout, all integers little-endian::

    offset  size        field
    0       4           magic b"SEGV"
    4       1           format version (1)
    5       1           dtype code: 0 = uint32 labels, 1 = float32 values
    6       1           number of dimensions n (1..8)
    7       8 * n       extents as int64, slowest axis first
    7+8n    prod * 4    payload, row-major (C order)
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"SEGV"
VERSION = 1
DTYPES = {0: np.dtype("<u4"), 1: np.dtype("<f4")}
CODES = {"u": 0, "f": 1}


class VolumeFormatError(ValueError):
    pass


def encode_volume(volume):
    arr = np.asarray(volume)
    if arr.dtype.kind in "ui":
        if arr.size and (arr.min() < 0 or arr.max() > np.iinfo(np.uint32).max):
            raise ValueError("label values do not fit in uint32")
        code = 0
    elif arr.dtype.kind == "f":
        code = 1
    elif arr.dtype.kind == "b":
        code = 0
    else:
        raise ValueError(f"unsupported dtype {arr.dtype}")
    if not 1 <= arr.ndim <= 8:
        raise ValueError(f"unsupported dimensionality {arr.ndim}")
    header = MAGIC + struct.pack("<BBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}q", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()
    return header + payload


def decode_volume(data):
    if len(data) < 7 or data[:4] != MAGIC:
        raise VolumeFormatError("bad magic: not a SEGV volume")
    version, code, ndim = struct.unpack_from("<BBB", data, 4)
    if version != VERSION:
        raise VolumeFormatError(f"unsupported format version {version}")
    if code not in DTYPES:
        raise VolumeFormatError(f"unknown dtype code {code}")
    if not 1 <= ndim <= 8:
        raise VolumeFormatError(f"bad dimension count {ndim}")
    off = 7 + 8 * ndim
    if len(data) < off:
        raise VolumeFormatError("truncated header")
    shape = struct.unpack_from(f"<{ndim}q", data, 7)
    if any(s < 0 for s in shape):
        raise VolumeFormatError("negative extent")
    dtype = DTYPES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(data) - off != expected:
        raise VolumeFormatError(f"payload is {len(data) - off} bytes, expected {expected}")
    arr = np.frombuffer(data, dtype=dtype, offset=off).reshape(shape)
    return arr.astype(dtype.newbyteorder("="))


def write_volume(volume, path):
    with open(path, "wb") as fh:
        fh.write(encode_volume(volume))


def read_volume(path):
    with open(path, "rb") as fh:
        return decode_volume(fh.read())
