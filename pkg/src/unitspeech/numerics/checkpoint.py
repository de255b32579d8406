"""Little-endian binary tensor checkpoints.

Layout (all integers little-endian)::

    magic     8 bytes   b"USPCKPT\\0"
    version   u32       currently 1
    n_meta    u32       byte length of the metadata block
    n_tensor  u32       number of directory entries
    metadata  n_meta bytes of UTF-8 JSON (free-form, may be "{}")
    directory n_tensor entries, in insertion order:
        name_len u16, name (UTF-8), dtype u8 (0=float64, 1=int64),
        ndim u8, shape u64 * ndim, offset u64, nbytes u64
    data      raw array bytes; ``offset`` is relative to the start of the file

Round trips are bit exact.
"""

import json
import struct

import numpy as np

MAGIC = b"USPCKPT\0"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8")}
_CODES = {np.dtype("float64"): 0, np.dtype("int64"): 1}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors, metadata=None):
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    arrays = []
    for name, arr in tensors.items():
        a = np.asarray(arr)
        if a.dtype not in _CODES:
            a = a.astype(np.float64) if a.dtype.kind == "f" else a.astype(np.int64)
        arrays.append((name.encode("utf-8"), a))

    header = MAGIC + struct.pack("<III", VERSION, len(meta), len(arrays))
    dir_size = sum(2 + len(n) + 1 + 1 + 8 * a.ndim + 16 for n, a in arrays)
    offset = len(header) + len(meta) + dir_size
    entries = []
    for name, a in arrays:
        nbytes = a.size * 8
        entries.append(struct.pack("<H", len(name)) + name
                       + struct.pack("<BB", _CODES[a.dtype], a.ndim)
                       + struct.pack(f"<{a.ndim}Q", *a.shape)
                       + struct.pack("<QQ", offset, nbytes))
        offset += nbytes
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(meta)
        for e in entries:
            fh.write(e)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype=_DTYPES[_CODES[a.dtype]]).tobytes())


def load_checkpoint(path):
    """Return ``(tensors, metadata)`` with tensors in file order."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:8]!r}")
    version, n_meta, n_tensor = struct.unpack_from("<III", buf, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos = 20
    metadata = json.loads(buf[pos:pos + n_meta].decode("utf-8"))
    pos += n_meta
    tensors = {}
    for _ in range(n_tensor):
        (name_len,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + name_len].decode("utf-8")
        pos += name_len
        code, ndim = struct.unpack_from("<BB", buf, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        offset, nbytes = struct.unpack_from("<QQ", buf, pos)
        pos += 16
        if code not in _DTYPES:
            raise CheckpointError(f"{path}: tensor {name!r} has unknown dtype code {code}")
        arr = np.frombuffer(buf, dtype=_DTYPES[code], count=nbytes // 8, offset=offset)
        tensors[name] = arr.reshape(shape).astype(_DTYPES[code].newbyteorder("="), copy=True)
    return tensors, metadata
