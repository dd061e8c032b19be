"""Reader for the TNSR weight files shared with the evaluation engine.

Layout: magic "TNSR" | version u8 = 1 | ndim u8 in {2, 3} | ndim x u32 LE
dims | float32 LE row-major payload.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"TNSR"
VERSION = 1


class TnsrError(ValueError):
    pass


def read_tnsr(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise TnsrError(f"bad magic {data[:4]!r}")
    version, ndim = struct.unpack_from("<BB", data, 4)
    if version != VERSION:
        raise TnsrError(f"unsupported version {version}")
    if ndim not in (2, 3):
        raise TnsrError(f"ndim must be 2 or 3, got {ndim}")
    dims = struct.unpack_from(f"<{ndim}I", data, 6)
    offset = 6 + 4 * ndim
    count = int(np.prod(dims))
    if any(d == 0 for d in dims) or len(data) != offset + 4 * count:
        raise TnsrError(f"payload does not match dims {dims}")
    arr = np.frombuffer(data, dtype="<f4", offset=offset).reshape(dims).astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise TnsrError("weights contain non-finite values")
    return arr
