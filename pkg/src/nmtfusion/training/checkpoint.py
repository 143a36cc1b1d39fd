"""Binary checkpoint format.

Layout (little-endian)::

    b"NMTCKPT1"
    u32 entry count
    per entry: u32 name length, name (UTF-8), u8 dtype length, dtype (ASCII
               numpy dtype string, e.g. "<f8"), u32 ndim, u64 dims[ndim],
               u64 payload length, row-major payload
    u64 metadata length, metadata (UTF-8 JSON: {"arch": ..., "meta": ...})
"""

import json
import os
import struct
import tempfile
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"NMTCKPT1"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: OrderedDict
    arch: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.params = OrderedDict((k, np.asarray(v)) for k, v in self.params.items())


def checkpoint_bytes(ckpt):
    parts = [MAGIC, struct.pack("<I", len(ckpt.params))]
    for name, arr in ckpt.params.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        name_b = name.encode("utf-8")
        dtype_b = arr.dtype.str.encode("ascii")
        payload = arr.tobytes(order="C")
        parts.append(struct.pack("<I", len(name_b)) + name_b)
        parts.append(struct.pack("<B", len(dtype_b)) + dtype_b)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(struct.pack("<Q", len(payload)) + payload)
    meta = json.dumps({"arch": ckpt.arch, "meta": ckpt.meta}, sort_keys=True, ensure_ascii=False).encode("utf-8")
    parts.append(struct.pack("<Q", len(meta)) + meta)
    return b"".join(parts)


def save_checkpoint(ckpt, path):
    """Write atomically: temp file in the target directory, then rename."""
    data = checkpoint_bytes(ckpt)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read(buf, pos, n):
    if pos + n > len(buf):
        raise CheckpointError("truncated checkpoint")
    return buf[pos : pos + n], pos + n


def parse_checkpoint(buf):
    head, pos = _read(buf, 0, len(MAGIC))
    if head != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (count,), pos = struct.unpack("<I", _read(buf, pos, 4)[0]), pos + 4
    params = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack("<I", _read(buf, pos, 4)[0])
        pos += 4
        name, pos = _read(buf, pos, nlen)
        (dlen,) = struct.unpack("<B", _read(buf, pos, 1)[0])
        pos += 1
        dtype, pos = _read(buf, pos, dlen)
        (ndim,) = struct.unpack("<I", _read(buf, pos, 4)[0])
        pos += 4
        shape = struct.unpack(f"<{ndim}Q", _read(buf, pos, 8 * ndim)[0])
        pos += 8 * ndim
        (plen,) = struct.unpack("<Q", _read(buf, pos, 8)[0])
        pos += 8
        payload, pos = _read(buf, pos, plen)
        arr = np.frombuffer(payload, dtype=np.dtype(dtype.decode("ascii"))).reshape(shape).copy()
        params[name.decode("utf-8")] = arr
    (mlen,) = struct.unpack("<Q", _read(buf, pos, 8)[0])
    pos += 8
    meta_b, pos = _read(buf, pos, mlen)
    meta = json.loads(meta_b.decode("utf-8"))
    return Checkpoint(params, meta.get("arch", {}), meta.get("meta", {}))


def load_checkpoint(path):
    with open(path, "rb") as f:
        return parse_checkpoint(f.read())


def average_checkpoints(ckpts):
    """Elementwise mean of parameters; metadata records the source epochs."""
    ckpts = list(ckpts)
    if not ckpts:
        raise CheckpointError("nothing to average")
    names = list(ckpts[0].params)
    for c in ckpts[1:]:
        if list(c.params) != names:
            raise CheckpointError("checkpoints have different parameter names")
        for n in names:
            if c.params[n].shape != ckpts[0].params[n].shape:
                raise CheckpointError(f"shape mismatch for {n}")
    k = len(ckpts)
    avg = OrderedDict()
    for n in names:
        # offset from the first checkpoint: equal inputs average exactly
        base = np.asarray(ckpts[0].params[n], dtype=np.float64)
        delta = np.zeros_like(base)
        for c in ckpts[1:]:
            delta = delta + (c.params[n] - base)
        avg[n] = base + delta / k
    meta = dict(ckpts[-1].meta)
    meta["averaged_epochs"] = [c.meta.get("epoch") for c in ckpts]
    return Checkpoint(avg, dict(ckpts[-1].arch), meta)
