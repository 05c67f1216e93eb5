"""LSCK checkpoint files.

Layout (little-endian)::

    magic    b"LSCK", version u16
    config   u32 length + UTF-8 key=value text
    grid     3 x u32 (spatial nodes, time nodes, channels)
    step     u64 optimizer step count
    blocks   u32 count, then per block: name (u32 length + UTF-8),
             u32 ndim, ndim x u32 dims, f64 row-major data
    crc32    u32 over every preceding byte

Parameter blocks are named after the parameters; Adam moments are stored as
``adam.m.<name>`` and ``adam.v.<name>``.  Fixed-mode models add the blocks
``net.centers`` and ``net.eps`` (the norm follows from the grid and config).
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .config import format_kv, from_kv, parse_kv, to_kv
from .data.io import _Reader, text_block
from .epsnet import EpsNet
from .errors import FormatError
from .grid import SpaceTimeGrid
from .model import LerayOperator, ModelConfig
from .quadrature import grid_norm

MAGIC = b"LSCK"
VERSION = 1


def _block(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype="<f8")
    return (text_block(name) + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
            + arr.tobytes())


def checkpoint_bytes(model: LerayOperator) -> bytes:
    g = model.grid
    store = model.store
    blocks = []
    for name in sorted(store.params):
        blocks.append(_block(name, store[name].data))
    for name in sorted(store.params):
        blocks.append(_block(f"adam.m.{name}", store.m[name]))
        blocks.append(_block(f"adam.v.{name}", store.v[name]))
    if model.net is not None:
        blocks.append(_block("net.centers", model.net.centers))
        blocks.append(_block("net.eps", np.array([model.net.eps])))
    body = b"".join([
        MAGIC,
        struct.pack("<H", VERSION),
        text_block(format_kv(to_kv(model.config))),
        struct.pack("<3I", g.n_space, g.n_time, g.channels),
        struct.pack("<Q", store.step),
        struct.pack("<I", len(blocks)),
        *blocks,
    ])
    return body + struct.pack("<I", zlib.crc32(body))


def checkpoint_from_bytes(blob: bytes, what: str = "checkpoint") -> LerayOperator:
    if len(blob) < 4:
        raise FormatError(f"{what}: truncated")
    (crc,) = struct.unpack("<I", blob[-4:])
    r = _Reader(blob[:-4], what)
    r.header(MAGIC, VERSION)
    config = from_kv(ModelConfig, parse_kv(r.text("config")))
    grid = SpaceTimeGrid(*r.unpack("3I", "grid"))
    (step,) = r.unpack("Q", "step")
    (count,) = r.unpack("I", "block count")
    blocks = {}
    for _ in range(count):
        name = r.text("block name")
        (ndim,) = r.unpack("I", f"{name} rank")
        dims = r.unpack(f"{ndim}I", f"{name} dims")
        blocks[name] = r.f64(int(np.prod(dims)), name).reshape(dims)
    r.finish()
    if zlib.crc32(blob[:-4]) != crc:
        raise FormatError(f"{what}: checksum mismatch")
    net = None
    if "net.centers" in blocks:
        net = EpsNet(blocks.pop("net.centers"), float(blocks.pop("net.eps")[0]),
                     grid_norm(grid, config.norm_p), grid.axes)
    params = {k: v for k, v in blocks.items() if not k.startswith("adam.")}
    model = LerayOperator(config, grid, params, net, step)
    for k in params:
        model.store.m[k] = blocks[f"adam.m.{k}"].copy()
        model.store.v[k] = blocks[f"adam.v.{k}"].copy()
    return model


def save_checkpoint(model: LerayOperator, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def load_checkpoint(path) -> LerayOperator:
    return checkpoint_from_bytes(Path(path).read_bytes(), str(path))
