"""Model container format (.bgm).

Layout, all little-endian:

    magic   "BGANv1\\0" (7 bytes)
    u32     format version (currently 1)
    u32     tensor count
    per tensor: u8 type tag, u8 rank, u32 dims[rank], f32 data[prod(dims)]
    u32     optimizer tensor count
    per tensor: same encoding (tags mark first/second moment, G or D)
    u64     optimizer step count for G, then u64 for D
    u32     JSON length, then the config/architecture echo (UTF-8 JSON)

Tags: 1 generator parameter, 2 discriminator parameter, 3 generator running
statistic; 0xF0/0xF1 first/second moment (G), 0xF2/0xF3 same for D. Tensor
order within a section follows the architecture descriptor. Readers reject
unknown magic or version and truncated payloads.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .model import AdamState, GanConfig, GanModel

MAGIC = b"BGANv1\x00"
VERSION = 1

TAG_G = 1
TAG_D = 2
TAG_STAT = 3
TAG_OPT_MG = 0xF0
TAG_OPT_VG = 0xF1
TAG_OPT_MD = 0xF2
TAG_OPT_VD = 0xF3


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError(
                f"{self.path}: truncated model file "
                f"(needed {self.pos + n} bytes, have {len(self.data)})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def _write_tensor(buf: bytearray, tag: int, arr: np.ndarray) -> None:
    buf += struct.pack("<BB", tag, arr.ndim)
    for d in arr.shape:
        buf += struct.pack("<I", d)
    buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()


def _read_tensor(r: _Reader) -> Tuple[int, np.ndarray]:
    tag = r.u8()
    rank = r.u8()
    dims = tuple(r.u32() for _ in range(rank))
    count = int(np.prod(dims)) if dims else 1
    raw = r.take(4 * count)
    return tag, np.frombuffer(raw, dtype="<f4").reshape(dims).copy()


def save_model(model: GanModel, path) -> None:
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    tensors = (
        [(TAG_G, n, a) for n, a in model.g_params.items()]
        + [(TAG_D, n, a) for n, a in model.d_params.items()]
        + [(TAG_STAT, n, a) for n, a in model.g_stats.items()]
    )
    buf += struct.pack("<I", len(tensors))
    order = []
    for tag, name, arr in tensors:
        order.append(name)
        _write_tensor(buf, tag, arr)
    opt_tensors = []
    if model.opt_g is not None:
        for n, a in model.opt_g.m.items():
            opt_tensors.append((TAG_OPT_MG, n, a))
        for n, a in model.opt_g.v.items():
            opt_tensors.append((TAG_OPT_VG, n, a))
    if model.opt_d is not None:
        for n, a in model.opt_d.m.items():
            opt_tensors.append((TAG_OPT_MD, n, a))
        for n, a in model.opt_d.v.items():
            opt_tensors.append((TAG_OPT_VD, n, a))
    buf += struct.pack("<I", len(opt_tensors))
    opt_order = []
    for tag, name, arr in opt_tensors:
        opt_order.append(name)
        _write_tensor(buf, tag, arr)
    buf += struct.pack("<Q", model.opt_g.t if model.opt_g else 0)
    buf += struct.pack("<Q", model.opt_d.t if model.opt_d else 0)
    echo = {
        "config": model.cfg.to_dict(),
        "tensor_order": order,
        "opt_tensor_order": opt_order,
        "architecture": model.architecture(),
    }
    blob = json.dumps(echo, sort_keys=True).encode("utf-8")
    buf += struct.pack("<I", len(blob))
    buf += blob
    Path(path).write_bytes(bytes(buf))


def load_model(path) -> GanModel:
    data = Path(path).read_bytes()
    r = _Reader(data, path)
    magic = r.take(len(MAGIC))
    if magic != MAGIC:
        raise ValueError(f"{path}: not a model file (bad magic {magic!r})")
    version = r.u32()
    if version != VERSION:
        raise ValueError(f"{path}: unsupported model format version {version}")
    n_tensors = r.u32()
    raw = [_read_tensor(r) for _ in range(n_tensors)]
    n_opt = r.u32()
    raw_opt = [_read_tensor(r) for _ in range(n_opt)]
    t_g = r.u64()
    t_d = r.u64()
    blob_len = r.u32()
    echo = json.loads(r.take(blob_len).decode("utf-8"))
    cfg = GanConfig.from_dict(echo["config"])
    order = echo["tensor_order"]
    if len(order) != n_tensors:
        raise ValueError(f"{path}: tensor count mismatch "
                         f"({n_tensors} stored vs {len(order)} declared)")
    dt = cfg.np_dtype
    g: Dict[str, np.ndarray] = {}
    d: Dict[str, np.ndarray] = {}
    stats: Dict[str, np.ndarray] = {}
    for name, (tag, arr) in zip(order, raw):
        arr = arr.astype(dt)
        if tag == TAG_G:
            g[name] = arr
        elif tag == TAG_D:
            d[name] = arr
        elif tag == TAG_STAT:
            stats[name] = arr
        else:
            raise ValueError(f"{path}: unknown tensor tag {tag}")
    opt_g: Optional[AdamState] = None
    opt_d: Optional[AdamState] = None
    if raw_opt:
        mg, vg, md, vd = {}, {}, {}, {}
        for name, (tag, arr) in zip(echo["opt_tensor_order"], raw_opt):
            arr = arr.astype(dt)
            {TAG_OPT_MG: mg, TAG_OPT_VG: vg,
             TAG_OPT_MD: md, TAG_OPT_VD: vd}[tag][name] = arr
        if mg:
            opt_g = AdamState(m=mg, v=vg, t=t_g)
        if md:
            opt_d = AdamState(m=md, v=vd, t=t_d)
    model = GanModel(cfg=cfg, g_params=g, d_params=d, g_stats=stats,
                     opt_g=opt_g, opt_d=opt_d)
    expected = {e["name"]: tuple(e["shape"]) for e in echo["architecture"]}
    for name, arr in list(g.items()) + list(d.items()) + list(stats.items()):
        if expected.get(name) != arr.shape:
            raise ValueError(
                f"{path}: tensor {name} has shape {arr.shape}, "
                f"descriptor says {expected.get(name)}")
    return model
