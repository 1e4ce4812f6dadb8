"""Checkpoints, metrics CSV and sample-grid export.

Checkpoint layout (all integers little-endian)::

    b"AMBG" | u32 version | 32-byte config digest | u64 iteration | u64 rng counter
    u32 record count
    per record: u16 name length | name (utf-8) | u8 ndim | u32 dims[ndim] | f64 values
    u32 crc32 of every preceding byte
"""
from __future__ import annotations

import csv
import math
import os
import struct
import tempfile
import zlib
from dataclasses import astuple
from pathlib import Path

import numpy as np

from .metrics import CSV_COLUMNS, MetricsRecord
from .nets import MlpParams
from .training import AdamState, TrainerState

MAGIC = b"AMBG"
VERSION = 1


class CheckpointError(ValueError):
    pass


class DigestMismatch(CheckpointError):
    pass


def _records(state: TrainerState) -> list[tuple[str, np.ndarray]]:
    out = []
    for prefix, params, opt in (("G", state.generator, state.g_opt),
                                ("D", state.discriminator, state.d_opt)):
        names = params.names(prefix)
        out += list(zip(names, params.arrays()))
        out += [(f"{n}.adam_m", a) for n, a in zip(names, opt.m)]
        out += [(f"{n}.adam_v", a) for n, a in zip(names, opt.v)]
        out.append((f"{prefix}.adam_t", np.array(float(opt.t))))
    return out


def encode_checkpoint(state: TrainerState, digest: bytes) -> bytes:
    if len(digest) != 32:
        raise CheckpointError("config digest must be 32 bytes")
    parts = [MAGIC, struct.pack("<I", VERSION), digest,
             struct.pack("<QQ", state.iteration, state.iteration)]
    records = _records(state)
    parts.append(struct.pack("<I", len(records)))
    for name, arr in records:
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_checkpoint(blob: bytes) -> tuple[TrainerState, bytes]:
    if len(blob) < 4 + 4 + 32 + 16 + 4 + 4 or blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic or truncated header)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"checkpoint format version {version}, expected {VERSION}")
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) != crc:
        raise CheckpointError("checkpoint is truncated or corrupt (checksum mismatch)")
    digest = blob[8:40]
    iteration, _rng_counter = struct.unpack_from("<QQ", blob, 40)
    (count,) = struct.unpack_from("<I", blob, 56)
    pos = 60
    tensors: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            name = blob[pos + 2:pos + 2 + nlen].decode()
            pos += 2 + nlen
            (ndim,) = struct.unpack_from("<B", blob, pos)
            dims = struct.unpack_from(f"<{ndim}I", blob, pos + 1)
            pos += 1 + 4 * ndim
            size = 8 * math.prod(dims)
            if pos + size > len(blob) - 4:
                raise CheckpointError(f"record {name!r} runs past the end of the file")
            tensors[name] = np.frombuffer(blob, dtype="<f8", count=math.prod(dims),
                                          offset=pos).reshape(dims).astype(np.float64)
            pos += size
    except struct.error as exc:
        raise CheckpointError(f"malformed checkpoint record: {exc}") from None
    if pos != len(blob) - 4:
        raise CheckpointError("trailing bytes after checkpoint records")

    def net(prefix):
        names = sorted({n.split(".")[1] for n in tensors if n.startswith(prefix + ".W")},
                       key=lambda s: int(s[1:]))
        keys = [k for i in range(len(names)) for k in (f"{prefix}.W{i}", f"{prefix}.b{i}")]
        try:
            params = MlpParams.from_arrays([tensors[k] for k in keys])
            opt = AdamState([tensors[f"{k}.adam_m"] for k in keys],
                            [tensors[f"{k}.adam_v"] for k in keys],
                            int(tensors[f"{prefix}.adam_t"]))
        except KeyError as exc:
            raise CheckpointError(f"checkpoint lacks record {exc}") from None
        return params, opt

    g, g_opt = net("G")
    d, d_opt = net("D")
    return TrainerState(g, d, g_opt, d_opt, iteration), digest


def save_checkpoint(state: TrainerState, path: str | Path, digest: bytes) -> None:
    """Write atomically: a temporary file in the same directory, then rename."""
    path = Path(path)
    blob = encode_checkpoint(state, digest)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | Path, expected_digest: bytes | None = None) -> tuple[TrainerState, bytes]:
    """Return (state, digest); raise :class:`DigestMismatch` if ``expected_digest`` differs."""
    blob = Path(path).read_bytes()
    state, digest = decode_checkpoint(blob)
    if expected_digest is not None and digest != expected_digest:
        raise DigestMismatch(f"{path}: checkpoint was written under a different configuration")
    return state, digest


def to_bytes(samples: np.ndarray) -> np.ndarray:
    """Map [-1, 1] to [0, 255] with clipping."""
    return np.clip(np.rint((np.asarray(samples) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def export_grid(samples: np.ndarray, rows: int, cols: int, path: str | Path,
                image_shape: tuple[int, ...] | None = None) -> None:
    """Tile ``rows * cols`` samples row-major into a binary PGM.

    2-D point data (sample size 2 with no 2-D ``image_shape``) is written as a
    CSV scatter file instead. 1-D vectors become 1-pixel-high tiles.
    """
    samples = np.asarray(samples, dtype=np.float64)
    count = rows * cols
    if rows < 1 or cols < 1 or len(samples) < count:
        raise ValueError(f"need {count} samples for a {rows}x{cols} grid, got {len(samples)}")
    if image_shape is None:
        image_shape = samples.shape[1:]
    image_shape = tuple(image_shape)
    samples = samples[:count].reshape((count,) + image_shape)
    if image_shape == (2,):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "y"])
            for x, y in samples:
                writer.writerow([format(x, ".9g"), format(y, ".9g")])
        return
    if len(image_shape) == 1:
        samples = samples[:, None, :]
    h, w = samples.shape[1:]
    tiles = to_bytes(samples).reshape(rows, cols, h, w)
    grid = tiles.transpose(0, 2, 1, 3).reshape(rows * h, cols * w)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols * w} {rows * h}\n255\n".encode("ascii"))
        fh.write(grid.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, dims, maxval, payload = raw.split(b"\n", 3)
    if magic != b"P5" or maxval != b"255":
        raise ValueError(f"{path}: not an 8-bit binary PGM")
    w, h = map(int, dims.split())
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w)


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".9g")
    return str(value)


def append_metrics(record: MetricsRecord, csv_path: str | Path) -> None:
    """Append one row, writing the header first if the file is new or empty."""
    csv_path = Path(csv_path)
    fresh = not csv_path.exists() or csv_path.stat().st_size == 0
    with open(csv_path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(CSV_COLUMNS)
        writer.writerow([_fmt(v) for v in astuple(record)])


def format_metrics_row(record: MetricsRecord) -> str:
    return ",".join(_fmt(v) for v in astuple(record))


def parse_metrics_row(row: list[str]) -> MetricsRecord:
    it, variant, *floats = row
    return MetricsRecord(int(it), variant, *map(float, floats))


def read_metrics(csv_path: str | Path) -> list[MetricsRecord]:
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"{csv_path}: unexpected header {header}")
        return [parse_metrics_row(row) for row in reader]
