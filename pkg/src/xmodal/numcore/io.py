"""MXT1 binary tensor container.

Layout: magic `MXT1`, little-endian u32 dtype code (0 = float32), u32 rank,
rank u64 extents, then the row-major payload. Used for dataset clips, flow
fields, and checkpoint parameter blocks.
"""

import struct

import numpy as np

from ..errors import FormatError

_MAGIC = b"MXT1"
_DTYPE_CODES = {0: np.dtype("<f4")}


def save_mxt(path, array) -> None:
    """Write one float32 array. Integer/float input is cast to float32."""
    arr = np.asarray(array, dtype="<f4")  # asarray keeps rank 0; ascontiguousarray would not
    if not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", 0, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes())


def load_mxt(path) -> np.ndarray:
    """Read one array, validating magic, dtype code, and payload length."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 12:
        raise FormatError(f"{path}: truncated header")
    code, rank = struct.unpack_from("<II", blob, 4)
    if code not in _DTYPE_CODES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    if rank > 8:
        raise FormatError(f"{path}: implausible rank {rank}")
    if len(blob) < 12 + 8 * rank:
        raise FormatError(f"{path}: truncated extents")
    shape = struct.unpack_from(f"<{rank}Q", blob, 12)
    dtype = _DTYPE_CODES[code]
    count = 1
    for s in shape:
        count *= s
    payload = blob[12 + 8 * rank :]
    if len(payload) != count * dtype.itemsize:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, extents {shape} need {count * dtype.itemsize}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
