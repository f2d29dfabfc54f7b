"""Binary checkpoint format.

Layout (little-endian)::

    magic   8 bytes  b"LDCKPT\\x00\\x01"
    version u32
    meta    u32 length + utf-8 ``key=value`` lines
    count   u32
    entries name(u16 len + utf-8), ndim u8, shape u64*ndim, float64 row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"LDCKPT\x00\x01"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(state: dict[str, np.ndarray], meta: dict[str, str] | None = None) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    meta_text = "".join(f"{k}={v}\n" for k, v in (meta or {}).items()).encode()
    parts.append(struct.pack("<I", len(meta_text)))
    parts.append(meta_text)
    parts.append(struct.pack("<I", len(state)))
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint at byte {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(buf: bytes) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (mlen,) = r.unpack("<I")
    meta = {}
    for line in r.take(mlen).decode().splitlines():
        key, _, val = line.partition("=")
        meta[key] = val
    (count,) = r.unpack("<I")
    state = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        n = int(np.prod(shape)) if ndim else 1
        state[name] = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(buf):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return state, meta


def save(path, state: dict[str, np.ndarray], meta: dict[str, str] | None = None) -> None:
    Path(path).write_bytes(dumps(state, meta))


def load(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    return loads(Path(path).read_bytes())
