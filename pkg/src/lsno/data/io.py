"""LSNO dataset files and raw-array ingestion.

LSNO layout (all integers little-endian)::

    magic      4 bytes  b"LSNO"
    version    u16      1
    dims       4 x u32  count, spatial nodes, time nodes, channels
    generator  u32 byte length + UTF-8 text
    seed       u64
    params     u32 count + that many f64
    payload    count*S*T*M f64, row-major (count, S, T, M)
    crc32      u32 over the payload bytes
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from ..config import parse_kv
from ..errors import FormatError, IngestionError
from ..grid import SpaceTimeGrid
from .dataset import Dataset

MAGIC = b"LSNO"
VERSION = 1


class _Reader:
    def __init__(self, blob: bytes, what: str):
        self.blob = blob
        self.pos = 0
        self.what = what

    def take(self, n: int, field: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"{self.what}: truncated while reading {field}")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, field: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt), field))

    def text(self, field: str) -> str:
        (n,) = self.unpack("I", f"{field} length")
        try:
            return self.take(n, field).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{self.what}: {field} is not valid UTF-8") from None

    def f64(self, count: int, field: str) -> np.ndarray:
        return np.frombuffer(self.take(8 * count, field), dtype="<f8").astype(np.float64)

    def header(self, magic: bytes, version: int):
        if self.take(len(magic), "magic") != magic:
            raise FormatError(f"{self.what}: bad magic (expected {magic.decode()})")
        (v,) = self.unpack("H", "version")
        if v != version:
            raise FormatError(f"{self.what}: unsupported version {v}")

    def finish(self):
        if self.pos != len(self.blob):
            raise FormatError(f"{self.what}: {len(self.blob) - self.pos} trailing bytes")


def text_block(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def dataset_bytes(ds: Dataset) -> bytes:
    g = ds.grid
    payload = ds.trajectories.astype("<f8", copy=False).tobytes()
    parts = [
        MAGIC,
        struct.pack("<H", VERSION),
        struct.pack("<4I", len(ds), g.n_space, g.n_time, g.channels),
        text_block(ds.generator),
        struct.pack("<Q", ds.seed),
        struct.pack("<I", len(ds.params)),
        np.asarray(ds.params, dtype="<f8").tobytes(),
        payload,
        struct.pack("<I", zlib.crc32(payload)),
    ]
    return b"".join(parts)


def dataset_from_bytes(blob: bytes, what: str = "dataset") -> Dataset:
    r = _Reader(blob, what)
    r.header(MAGIC, VERSION)
    count, s, t, m = r.unpack("4I", "dims")
    if min(s, t, m) < 1 or t < 2:
        raise FormatError(f"{what}: invalid dims {(count, s, t, m)}")
    generator = r.text("generator")
    (seed,) = r.unpack("Q", "seed")
    (n_params,) = r.unpack("I", "params count")
    params = tuple(r.f64(n_params, "params"))
    raw = r.take(8 * count * s * t * m, "payload")
    (crc,) = r.unpack("I", "crc32")
    r.finish()
    if zlib.crc32(raw) != crc:
        raise FormatError(f"{what}: payload checksum mismatch")
    traj = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(count, s, t, m)
    return Dataset(traj, SpaceTimeGrid(s, t, m), generator, seed, params)


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_bytes(dataset_bytes(ds))


def load_dataset(path) -> Dataset:
    return dataset_from_bytes(Path(path).read_bytes(), str(path))


# raw-array ingestion

AXES = "NSTM"
DTYPES = {"f64": "f8", "f32": "f4", "float64": "f8", "float32": "f4"}


def parse_descriptor(text: str) -> dict:
    """Descriptor keys: ``shape`` (comma separated), ``order`` (permutation of
    N, S, T, M naming the file's axes), ``dtype`` (f32/f64), ``endianness``
    (little/big), optional ``generator`` and ``header_bytes``."""
    kv = parse_kv(text)
    try:
        shape = tuple(int(v) for v in kv["shape"].split(","))
        order = kv.get("order", AXES).upper()
        dtype = DTYPES[kv.get("dtype", "f64").lower()]
        endian = {"little": "<", "big": ">"}[kv.get("endianness", "little").lower()]
        header = int(kv.get("header_bytes", "0"))
    except KeyError as exc:
        raise IngestionError(f"descriptor: missing or invalid {exc.args[0]!r}") from None
    except ValueError as exc:
        raise IngestionError(f"descriptor: {exc}") from None
    if sorted(order) != sorted(AXES) or len(shape) != 4:
        raise IngestionError(f"descriptor: order must permute {AXES} and shape list 4 sizes")
    if min(shape) < 1:
        raise IngestionError("descriptor: sizes must be positive")
    return {"shape": shape, "order": order, "dtype": endian + dtype, "header_bytes": header,
            "generator": kv.get("generator", "external")}


def import_external(path, descriptor: str | dict) -> Dataset:
    desc = parse_descriptor(descriptor) if isinstance(descriptor, str) else descriptor
    blob = Path(path).read_bytes()[desc["header_bytes"] :]
    dtype = np.dtype(desc["dtype"])
    expected = int(np.prod(desc["shape"])) * dtype.itemsize
    if len(blob) != expected:
        raise IngestionError(f"{path}: {len(blob)} bytes, descriptor shape {desc['shape']} needs {expected}")
    arr = np.frombuffer(blob, dtype=dtype).reshape(desc["shape"])
    arr = np.transpose(arr, [desc["order"].index(a) for a in AXES]).astype(np.float64)
    _, s, t, m = arr.shape
    if t < 2:
        raise IngestionError("need at least two time nodes")
    if not np.all(np.isfinite(arr)):
        raise IngestionError(f"{path}: non-finite values")
    return Dataset(arr, SpaceTimeGrid(s, t, m), desc["generator"])


def export_raw(ds: Dataset, path, order: str = AXES, dtype: str = "f64", endianness: str = "little") -> str:
    """Write the payload as a bare array; returns the matching descriptor text."""
    order = order.upper()
    arr = np.transpose(ds.trajectories, [AXES.index(a) for a in order])
    code = {"little": "<", "big": ">"}[endianness] + DTYPES[dtype]
    Path(path).write_bytes(np.ascontiguousarray(arr).astype(code).tobytes())
    shape = ",".join(str(n) for n in arr.shape)
    return f"shape={shape}\norder={order}\ndtype={dtype}\nendianness={endianness}\n"
