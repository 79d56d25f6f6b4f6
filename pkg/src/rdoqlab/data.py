"""Frame ingestion, block extraction, labeling pipeline, dataset files.

Sources are binary portable graymaps (P5) or headerless planar 4:2:0
raw video whose geometry is supplied by flags; only the luma plane is
used. Blocks come from a fixed non-overlapping grid (edge tiles that do
not fit are discarded) with seeded uniform subsampling, so a dataset
build is reproducible byte for byte.

Dataset file layout (little-endian):
  magic   8 bytes "RDOQDS1\\0"
  u32 version (1), u32 N, u32 QP, u32 k, k class values as i8,
  f64 SQ offset, u32 rate-model name length + utf-8 bytes,
  u64 record count
  records: x as N^2 f32, q_sq as N^2 i16, q_ref as N^2 i16
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codec import (QuantParams, dc_predict, dct_forward, make_quant_params,
                    NIR_OFFSET)
from .nn.models import ClassSet, StandardizationStats
from .rate import RATE_MODEL_NAME
from .search import SearchConfig, batch_rd_cost, make_label

DATASET_MAGIC = b"RDOQDS1\x00"
DATASET_VERSION = 1
STATS_MAGIC = b"RDOQST1\x00"


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class FrameSource:
    """One input file: a P5 graymap or headerless planar 4:2:0 video."""

    path: str
    fmt: str = "pgm"            # "pgm" | "yuv"
    width: int = 0              # required for yuv
    height: int = 0
    bitdepth: int = 8
    interleave: int = 1

    def __post_init__(self):
        if self.fmt not in ("pgm", "yuv"):
            raise ValueError(f"unknown source format {self.fmt!r}")
        if self.fmt == "yuv" and (self.width <= 0 or self.height <= 0):
            raise ValueError("yuv sources need explicit width/height")
        if self.bitdepth not in (8, 10):
            raise ValueError(f"bitdepth must be 8 or 10, got {self.bitdepth}")
        if self.interleave < 1:
            raise ValueError("interleave must be >= 1")


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Binary P5 graymap -> (plane, bitdepth). 16-bit PGM is big-endian."""
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise DataFormatError(f"{path}: not a binary P5 graymap")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if maxval <= 0 or maxval >= 65536:
        raise DataFormatError(f"{path}: bad maxval {maxval}")
    bitdepth = maxval.bit_length()
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height
    raw = data[pos:pos + count * dtype.itemsize]
    if len(raw) != count * dtype.itemsize:
        raise DataFormatError(f"{path}: truncated pixel data")
    plane = np.frombuffer(raw, dtype=dtype).reshape(height, width)
    return plane.astype(np.uint16), bitdepth


def write_pgm(path, plane: np.ndarray, bitdepth: int = 8) -> None:
    plane = np.asarray(plane)
    maxval = (1 << bitdepth) - 1
    header = f"P5\n{plane.shape[1]} {plane.shape[0]}\n{maxval}\n".encode()
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    Path(path).write_bytes(header + plane.astype(dtype).tobytes())


def ingest(source: FrameSource):
    """Yield luma planes (uint16 arrays) from a source, honoring the
    frame interleave for video."""
    if source.fmt == "pgm":
        plane, bitdepth = read_pgm(source.path)
        if bitdepth != source.bitdepth:
            raise DataFormatError(
                f"{source.path}: file bitdepth {bitdepth} != declared "
                f"{source.bitdepth}")
        yield plane
        return
    bytes_per = 2 if source.bitdepth > 8 else 1
    w, h = source.width, source.height
    luma_bytes = w * h * bytes_per
    frame_bytes = luma_bytes * 3 // 2
    size = Path(source.path).stat().st_size
    if size == 0 or size % frame_bytes:
        raise DataFormatError(
            f"{source.path}: size {size} not a whole number of "
            f"{w}x{h} 4:2:0 frames")
    nframes = size // frame_bytes
    dtype = np.dtype("<u2") if bytes_per == 2 else np.dtype("u1")
    with open(source.path, "rb") as fh:
        for i in range(0, nframes, source.interleave):
            fh.seek(i * frame_bytes)
            raw = fh.read(luma_bytes)
            yield np.frombuffer(raw, dtype=dtype).reshape(h, w).astype(np.uint16)


def extract_blocks(plane: np.ndarray, n: int, seed: int = 0,
                   max_count: int | None = None):
    """Non-overlapping n x n grid tiles, seeded uniform subsample.

    Returns a list of (row, col) positions in deterministic raster
    order; edge tiles that do not fit the grid are discarded.
    """
    h, w = plane.shape
    if n > h or n > w:
        raise ValueError(f"block size {n} larger than {h}x{w} plane")
    positions = [(r, c) for r in range(0, h - n + 1, n)
                 for c in range(0, w - n + 1, n)]
    if max_count is not None and max_count < len(positions):
        rng = np.random.default_rng(seed)
        chosen = rng.choice(len(positions), size=max_count, replace=False)
        positions = [positions[i] for i in sorted(chosen)]
    return positions


@dataclass(frozen=True)
class DatasetHeader:
    n: int
    qp: int
    class_set: ClassSet
    sq_offset: float
    rate_model: str
    count: int


def write_dataset(path, header: DatasetHeader, x: np.ndarray,
                  q_sq: np.ndarray, q_ref: np.ndarray) -> None:
    n = header.n
    count = x.shape[0]
    if count != header.count:
        raise ValueError("header count does not match records")
    out = bytearray()
    out += DATASET_MAGIC
    out += struct.pack("<IIII", DATASET_VERSION, n, header.qp,
                       header.class_set.k)
    out += struct.pack(f"<{header.class_set.k}b", *header.class_set.values)
    out += struct.pack("<d", header.sq_offset)
    name = header.rate_model.encode("utf-8")
    out += struct.pack("<I", len(name)) + name
    out += struct.pack("<Q", count)
    xf = np.ascontiguousarray(x.reshape(count, n * n), dtype="<f4")
    qs = np.ascontiguousarray(q_sq.reshape(count, n * n), dtype="<i2")
    qr = np.ascontiguousarray(q_ref.reshape(count, n * n), dtype="<i2")
    rec = np.empty(count * n * n * 8, dtype=np.uint8)
    stride = n * n
    recs = rec.reshape(count, stride * 8)
    recs[:, :stride * 4] = xf.view(np.uint8).reshape(count, stride * 4)
    recs[:, stride * 4:stride * 6] = qs.view(np.uint8).reshape(count, stride * 2)
    recs[:, stride * 6:] = qr.view(np.uint8).reshape(count, stride * 2)
    with open(path, "wb") as fh:
        fh.write(bytes(out))
        fh.write(rec.tobytes())


def read_dataset(path):
    """-> (DatasetHeader, x (S,n,n) f32, q_sq (S,n,n) i16, q_ref)."""
    data = Path(path).read_bytes()
    if data[:8] != DATASET_MAGIC:
        raise DataFormatError(f"{path}: bad magic; not a dataset file")
    version, n, qp, k = struct.unpack_from("<IIII", data, 8)
    if version != DATASET_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    pos = 24
    values = struct.unpack_from(f"<{k}b", data, pos)
    pos += k
    (sq_offset,) = struct.unpack_from("<d", data, pos)
    pos += 8
    (name_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    rate_model = data[pos:pos + name_len].decode("utf-8")
    pos += name_len
    (count,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    stride = n * n
    expected = pos + count * stride * 8
    if len(data) != expected:
        raise DataFormatError(
            f"{path}: file length {len(data)} != expected {expected}")
    recs = np.frombuffer(data[pos:], dtype=np.uint8).reshape(count, stride * 8)
    x = recs[:, :stride * 4].copy().view("<f4").reshape(count, n, n)
    q_sq = recs[:, stride * 4:stride * 6].copy().view("<i2").reshape(count, n, n)
    q_ref = recs[:, stride * 6:].copy().view("<i2").reshape(count, n, n)
    header = DatasetHeader(n=n, qp=qp, class_set=ClassSet(tuple(values)),
                           sq_offset=sq_offset, rate_model=rate_model,
                           count=count)
    return header, x, q_sq, q_ref


def write_stats(path, n: int, qp: int, stats: StandardizationStats) -> None:
    out = bytearray()
    out += STATS_MAGIC
    out += struct.pack("<III", 1, n, qp)
    out += np.ascontiguousarray(stats.mean, dtype="<f8").tobytes()
    out += np.ascontiguousarray(stats.std, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(out))


def read_stats(path) -> tuple[int, int, StandardizationStats]:
    data = Path(path).read_bytes()
    if data[:8] != STATS_MAGIC:
        raise DataFormatError(f"{path}: bad magic; not a stats file")
    version, n, qp = struct.unpack_from("<III", data, 8)
    if version != 1:
        raise DataFormatError(f"{path}: unsupported stats version {version}")
    pos = 20
    cnt = 2 * n * n
    mean = np.frombuffer(data, dtype="<f8", count=cnt, offset=pos)
    std = np.frombuffer(data, dtype="<f8", count=cnt, offset=pos + cnt * 8)
    return n, qp, StandardizationStats(mean=mean.reshape(2, n, n).copy(),
                                       std=std.reshape(2, n, n).copy())


def label_source_blocks(source: FrameSource, n: int, params: QuantParams,
                        cfg: SearchConfig, seed: int = 0,
                        max_per_plane: int | None = None):
    """Run the labeling pipeline over one source; returns parallel lists
    of x, q_sq, q_ref arrays in deterministic (plane, position) order."""
    xs, qsqs, qrefs = [], [], []
    for pi, plane in enumerate(ingest(source)):
        positions = extract_blocks(plane, n, seed=seed + 7919 * pi,
                                   max_count=max_per_plane)
        for row, col in positions:
            pred = dc_predict(plane, row, col, n, bitdepth=source.bitdepth)
            residual = plane[row:row + n, col:col + n].astype(np.float64) - pred
            x = dct_forward(residual) / params.step
            q_sq, q_ref = make_label(x, params, cfg)
            xs.append(x.astype(np.float32))
            qsqs.append(q_sq.astype(np.int16))
            qrefs.append(q_ref.astype(np.int16))
    return xs, qsqs, qrefs


@dataclass
class BuildSummary:
    train_count: int
    val_count: int
    skipped: int
    class_histogram: dict[int, int]
    mean_j_sq: float
    mean_j_ref: float

    @property
    def rd_improvement_pct(self) -> float:
        if self.mean_j_sq == 0:
            return 0.0
        return 100.0 * (self.mean_j_ref - self.mean_j_sq) / self.mean_j_sq


def build_dataset(train_sources, val_sources, n: int, qp: int,
                  cfg: SearchConfig = SearchConfig(),
                  class_set: ClassSet = ClassSet(),
                  sq_offset: float = NIR_OFFSET,
                  alpha: float | None = None,
                  seed: int = 0,
                  max_per_plane: int | None = None,
                  train_path=None, val_path=None, stats_path=None):
    """Label blocks from the sources and write train/validation files.

    The split is by source file; a source may not appear in both lists.
    Records whose adjustment falls outside the class set are skipped and
    counted. Standardization statistics come from the training split
    only.
    """
    if not train_sources or not val_sources:
        raise ValueError("both train and validation splits need sources")
    tpaths = {s.path for s in train_sources}
    vpaths = {s.path for s in val_sources}
    if tpaths & vpaths:
        raise ValueError(f"sources in both splits: {sorted(tpaths & vpaths)}")
    kwargs = {} if alpha is None else {"alpha": alpha}
    params = make_quant_params(qp, offset=sq_offset, **kwargs)

    skipped = 0
    hist: dict[int, int] = {v: 0 for v in class_set.values}
    splits = {}
    for name, sources in (("train", train_sources), ("val", val_sources)):
        xs, qsqs, qrefs = [], [], []
        for si, src in enumerate(sources):
            sx, sq, sr = label_source_blocks(
                src, n, params, cfg, seed=seed + 104729 * si,
                max_per_plane=max_per_plane)
            xs += sx
            qsqs += sq
            qrefs += sr
        if not xs:
            raise ValueError(f"{name} split produced no blocks")
        x = np.stack(xs)
        q_sq = np.stack(qsqs)
        q_ref = np.stack(qrefs)
        deltas = np.abs(q_ref.astype(np.int64)) - np.abs(q_sq.astype(np.int64))
        valid = np.isin(deltas, class_set.values).all(axis=(1, 2))
        skipped += int((~valid).sum())
        x, q_sq, q_ref = x[valid], q_sq[valid], q_ref[valid]
        for v, c in zip(*np.unique(deltas[valid], return_counts=True)):
            hist[int(v)] += int(c)
        splits[name] = (x, q_sq, q_ref)

    tx, tq, tr = splits["train"]
    stats = StandardizationStats.compute(
        np.abs(tx).astype(np.float64), np.abs(tq).astype(np.float64))

    for name, path in (("train", train_path), ("val", val_path)):
        if path is None:
            continue
        x, q_sq, q_ref = splits[name]
        header = DatasetHeader(n=n, qp=qp, class_set=class_set,
                               sq_offset=sq_offset,
                               rate_model=RATE_MODEL_NAME, count=x.shape[0])
        write_dataset(path, header, x, q_sq, q_ref)
    if stats_path is not None:
        write_stats(stats_path, n, qp, stats)

    allx = np.concatenate([splits["train"][0], splits["val"][0]]).astype(np.float64)
    allsq = np.concatenate([splits["train"][1], splits["val"][1]])
    allref = np.concatenate([splits["train"][2], splits["val"][2]])
    j_sq = float(np.mean(batch_rd_cost(allx, allsq, params)))
    j_ref = float(np.mean(batch_rd_cost(allx, allref, params)))
    summary = BuildSummary(train_count=splits["train"][0].shape[0],
                           val_count=splits["val"][0].shape[0],
                           skipped=skipped, class_histogram=hist,
                           mean_j_sq=j_sq, mean_j_ref=j_ref)
    return splits, stats, summary
