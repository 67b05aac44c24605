"""Flat parameter-vector serialization.

Format: 4-byte magic, uint32 version, uint64 dimension (both little-endian),
followed by the parameters as little-endian float64. Policies use magic
``SOTP``, critics ``SOTC``.
"""

from __future__ import annotations

import struct

import numpy as np

POLICY_MAGIC = b"SOTP"
CRITIC_MAGIC = b"SOTC"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<IQ")


def dump_params(path, theta: np.ndarray, magic: bytes) -> None:
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    flat = np.ascontiguousarray(np.asarray(theta, dtype=np.float64).ravel())
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(_HEADER.pack(FORMAT_VERSION, flat.size))
        fh.write(flat.astype("<f8").tobytes())


def load_params(path, magic: bytes) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != magic:
        raise ValueError(f"bad magic {blob[:4]!r}, expected {magic!r}")
    version, dim = _HEADER.unpack(blob[4 : 4 + _HEADER.size])
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {version}")
    data = np.frombuffer(blob[4 + _HEADER.size :], dtype="<f8")
    if data.size != dim:
        raise ValueError(f"header says {dim} parameters, payload has {data.size}")
    return data.astype(np.float64)
