"""Binary model weights format, bit-exact round trip.

Layout (all integers little-endian):
  magic       8 bytes  "RDOQNN1\\0"
  version     u32      (1)
  arch        u32 length + utf-8 bytes ("fcnn" | "arm")
  n, qp       u32, u32
  k           u32, then k class values as i8
  rate model  u32 length + utf-8 bytes
  sq offset   f64
  hidden      u32 count + u32 widths
  stats       mean then std, each (2, n, n) f64
  tensors     u32 count; per tensor u32 name length + name,
              u32 ndim + u32 dims, data as f32
Weight tensors come first in sorted name order, then batch-norm state
tensors prefixed "state/".
"""

from __future__ import annotations

import struct

import numpy as np

from .models import ClassSet, ModelParams, StandardizationStats

MAGIC = b"RDOQNN1\x00"
VERSION = 1


class ModelFormatError(ValueError):
    pass


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    data = np.ascontiguousarray(arr, dtype="<f4")
    head = _pack_str(name) + struct.pack("<I", data.ndim)
    head += struct.pack(f"<{data.ndim}I", *data.shape)
    return head + data.tobytes()


def write_model(path, model: ModelParams) -> None:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    out += _pack_str(model.arch)
    out += struct.pack("<II", model.n, model.qp)
    out += struct.pack("<I", model.class_set.k)
    out += struct.pack(f"<{model.class_set.k}b", *model.class_set.values)
    out += _pack_str(model.rate_model)
    out += struct.pack("<d", model.sq_offset)
    out += struct.pack("<I", len(model.hidden))
    out += struct.pack(f"<{len(model.hidden)}I", *model.hidden)
    out += np.ascontiguousarray(model.stats.mean, dtype="<f8").tobytes()
    out += np.ascontiguousarray(model.stats.std, dtype="<f8").tobytes()
    names = sorted(model.params) + [f"state/{k}" for k in sorted(model.state)]
    out += struct.pack("<I", len(names))
    for name in names:
        arr = (model.state[name[6:]] if name.startswith("state/")
               else model.params[name])
        out += _pack_tensor(name, arr)
    with open(path, "wb") as fh:
        fh.write(bytes(out))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise ModelFormatError("truncated model file")
        chunk = self.data[self.pos:self.pos + count]
        self.pos += count
        return chunk

    def unpack(self, fmt: str):
        vals = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return vals[0] if len(vals) == 1 else vals

    def string(self) -> str:
        return self.take(self.unpack("<I")).decode("utf-8")


def read_model(path) -> ModelParams:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(8) != MAGIC:
        raise ModelFormatError("bad magic; not a model weights file")
    version = r.unpack("<I")
    if version != VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    arch = r.string()
    n, qp = r.unpack("<II")
    k = r.unpack("<I")
    values = r.unpack(f"<{k}b")
    class_set = ClassSet(values=tuple(values) if k > 1 else (values,))
    rate_model = r.string()
    sq_offset = r.unpack("<d")
    nh = r.unpack("<I")
    hidden = r.unpack(f"<{nh}I")
    hidden = tuple(hidden) if nh > 1 else (hidden,)
    mean = np.frombuffer(r.take(2 * n * n * 8), dtype="<f8").reshape(2, n, n)
    std = np.frombuffer(r.take(2 * n * n * 8), dtype="<f8").reshape(2, n, n)
    stats = StandardizationStats(mean=mean.copy(), std=std.copy())
    params, state = {}, {}
    for _ in range(r.unpack("<I")):
        name = r.string()
        ndim = r.unpack("<I")
        shape = r.unpack(f"<{ndim}I")
        shape = tuple(shape) if ndim > 1 else (shape,)
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.take(count * 4), dtype="<f4").reshape(shape).copy()
        if name.startswith("state/"):
            state[name[6:]] = arr
        else:
            params[name] = arr
    if r.pos != len(r.data):
        raise ModelFormatError("trailing bytes in model file")
    return ModelParams(arch=arch, n=n, qp=qp, class_set=class_set,
                       hidden=hidden, params=params, state=state,
                       stats=stats, rate_model=rate_model,
                       sq_offset=sq_offset)
