"""Binary tensor files ("TNSR").

Layout: the 4 magic bytes ``TNSR``, a little-endian u32 rank, ``rank``
little-endian u64 dimensions, then the row-major float32 little-endian
payload.
"""

import struct

import numpy as np

from .errors import DataError

MAGIC = b"TNSR"


def encode_tensor(array):
    a = np.asarray(array, dtype="<f4")
    header = MAGIC + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return header + a.tobytes(order="C")


def decode_tensor(buf):
    buf = bytes(buf)
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise DataError("not a TNSR buffer (bad magic)")
    (rank,) = struct.unpack_from("<I", buf, 4)
    off = 8 + 8 * rank
    if len(buf) < off:
        raise DataError("truncated TNSR header")
    shape = struct.unpack_from(f"<{rank}Q", buf, 8)
    count = int(np.prod(shape, dtype=np.int64))
    if len(buf) != off + 4 * count:
        raise DataError(
            f"TNSR payload has {len(buf) - off} bytes, expected {4 * count} for shape {shape}"
        )
    return np.frombuffer(buf, dtype="<f4", count=count, offset=off).reshape(shape).copy()


def write_tensor(path, array):
    with open(path, "wb") as fh:
        fh.write(encode_tensor(array))


def read_tensor(path):
    """Read a TNSR file as a float32 array."""
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())
