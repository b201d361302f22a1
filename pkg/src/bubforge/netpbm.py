"""Binary PGM (P5) and PBM (P4) read/write, the only image codecs shipped.

PGM is 8-bit with maxval 255; intensity v maps to v/255. PBM packs eight
pixels per byte, most significant bit first, 1 meaning a set (dark) pixel.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .imgproc import BitMask, Raster

_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def _read_tokens(data: bytes, count: int):
    pos = 0
    out = []
    for _ in range(count):
        m = _TOKEN.match(data, pos)
        if not m:
            raise ValueError("truncated netpbm header")
        out.append(m.group(1))
        pos = m.end()
    return out, pos


def write_pgm(img: Raster, path) -> None:
    data = np.clip(np.rint(img.data * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def read_pgm(path) -> Raster:
    raw = Path(path).read_bytes()
    toks, pos = _read_tokens(raw, 4)
    if toks[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = int(toks[1]), int(toks[2]), int(toks[3])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}, expected 255")
    body = raw[pos + 1:pos + 1 + w * h]
    if len(body) < w * h:
        raise ValueError(f"{path}: expected {w * h} pixel bytes, found {len(body)}")
    data = np.frombuffer(body, dtype=np.uint8).reshape(h, w)
    return Raster(data.astype(np.float64) / 255.0)


def write_pbm(mask: BitMask, path) -> None:
    header = f"P4\n{mask.width} {mask.height}\n".encode("ascii")
    packed = np.packbits(mask.data.astype(np.uint8), axis=1)
    Path(path).write_bytes(header + packed.tobytes())


def read_pbm(path) -> BitMask:
    raw = Path(path).read_bytes()
    toks, pos = _read_tokens(raw, 3)
    if toks[0] != b"P4":
        raise ValueError(f"{path}: not a binary PBM (P4) file")
    w, h = int(toks[1]), int(toks[2])
    row_bytes = (w + 7) // 8
    body = raw[pos + 1:pos + 1 + row_bytes * h]
    if len(body) < row_bytes * h:
        raise ValueError(f"{path}: expected {row_bytes * h} row bytes, found {len(body)}")
    rows = np.frombuffer(body, dtype=np.uint8).reshape(h, row_bytes)
    bits = np.unpackbits(rows, axis=1)[:, :w]
    return BitMask(bits.astype(bool))
