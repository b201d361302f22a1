"""Pre-generated bubble database: build, persist, and query by features.

Records hold a normalized patch, its mask, and the features measured on the
patch itself (never the conditioning input). Nearest-neighbor search runs on
a 4-d k-d tree over [E, phi normalized, psi, m]; the angle is period-pi, so
a query probes both the target and its wrapped image and keeps the better
hit. Tree results are exact: they must equal a linear scan under the
weighted metric, ties resolving to the lowest record index.

Container format "BUBDB1", little-endian:

    magic "BUBDB1\\0\\0" (8 bytes), u32 version, u32 count,
    u16 patch side, u8 channels, u8 flags (bit 0: training corpus),
    then per record: 4*f32 features [E, phi, psi, m],
    patch bytes (u8 = intensity*255, row-major, channels interleaved last),
    mask bytes (u8, 0 or 1).

The record stride is fixed, so the file is seekable.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .features import FeatureVector, angle_distance, feature_distance, interpolate
from .imgproc import BitMask, Raster, connected_components
from .patchpipe import TrainingRecord, derive_mask
from .gan.evaluate import sample_conditioning
from .gan.model import GanModel

MAGIC = b"BUBDB1\x00\x00"
VERSION = 1
FLAG_TRAINING_CORPUS = 0x01

_HALF_PI = math.pi / 2.0


@dataclass
class BubbleRecord:
    patch: Raster
    mask: BitMask
    features: FeatureVector


def _feature_matrix(records: Sequence) -> np.ndarray:
    return np.stack([r.features.as_array() for r in records]) if records else np.zeros((0, 4))


class KdTree:
    """Static 4-d k-d tree over raw [E, phi, psi, m] rows.

    Node distances replicate the weighted metric's arithmetic exactly, so
    the argmin matches a linear scan bit for bit (ties to the lowest
    index). The phi axis is period-pi; a splitting plane on that axis gives
    no valid lower bound under wrap-around, so phi levels never prune.
    """

    PHI_AXIS = 1

    def __init__(self, points: np.ndarray):
        self.pts = np.asarray(points, dtype=np.float64)
        n = len(self.pts)
        self.left = np.full(n, -1, dtype=np.int64)
        self.right = np.full(n, -1, dtype=np.int64)
        self.axis = np.zeros(n, dtype=np.int64)
        self.root = self._build(np.arange(n), 0) if n else -1

    def _build(self, idx: np.ndarray, depth: int) -> int:
        if idx.size == 0:
            return -1
        ax = depth % 4
        order = idx[np.argsort(self.pts[idx, ax], kind="stable")]
        mid = idx.size // 2
        node = int(order[mid])
        self.axis[node] = ax
        self.left[node] = self._build(order[:mid], depth + 1)
        self.right[node] = self._build(order[mid + 1:], depth + 1)
        return node

    def _node_dist_sq(self, node: int, q: np.ndarray, w: np.ndarray) -> float:
        p = self.pts[node]
        dphi = abs(q[1] - p[1])
        dphi = min(dphi, math.pi - dphi) / _HALF_PI
        return (w[0] * (q[0] - p[0]) ** 2 + w[1] * dphi * dphi
                + w[2] * (q[2] - p[2]) ** 2 + w[3] * (q[3] - p[3]) ** 2)

    def _search(self, node: int, q: np.ndarray, w: np.ndarray, best: list) -> None:
        if node < 0:
            return
        d2 = self._node_dist_sq(node, q, w)
        if d2 < best[0] or (d2 == best[0] and node < best[1]):
            best[0] = d2
            best[1] = node
        ax = int(self.axis[node])
        delta = q[ax] - self.pts[node, ax]
        near, far = (self.right[node], self.left[node]) if delta > 0 else (
            self.left[node], self.right[node])
        self._search(int(near), q, w, best)
        plane = 0.0 if ax == self.PHI_AXIS else w[ax] * delta * delta
        if plane <= best[0]:
            self._search(int(far), q, w, best)

    def nearest(self, q: np.ndarray, w: np.ndarray) -> int:
        best = [math.inf, len(self.pts)]
        self._search(int(self.root), q, w, best)
        return int(best[1])


@dataclass
class BubbleDb:
    records: List[BubbleRecord]
    channels: int = 1
    training_corpus: bool = False
    seed: int = 0
    tree: Optional[KdTree] = field(default=None, repr=False)

    def __post_init__(self):
        if self.tree is None and self.records:
            self.tree = KdTree(_feature_matrix(self.records))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def side(self) -> int:
        return self.records[0].patch.data.shape[0] if self.records else 0

    def feature_matrix(self) -> np.ndarray:
        return _feature_matrix(self.records)


def build(
    model: GanModel,
    n: int,
    pool: Sequence[FeatureVector],
    seed: int = 0,
    batch: int = 128,
) -> BubbleDb:
    """Generate n database records from the trained model.

    Conditioning vectors are pairwise pool interpolations; the stored
    features are re-extracted from each generated patch. Patches whose
    derived mask is not a single clean component are regenerated, up to 10n
    attempts in total.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not pool:
        raise ValueError("conditioning pool is empty")
    cfg = model.cfg
    rng = np.random.default_rng(seed)
    records: List[BubbleRecord] = []
    attempts = 0
    cap = 10 * n
    while len(records) < n:
        todo = min(batch, n - len(records))
        if attempts >= cap:
            raise RuntimeError(
                "generator yields unusable patches: "
                f"{len(records)}/{n} accepted after {attempts} attempts")
        todo = min(todo, cap - attempts)
        conds = np.empty((todo, 4), dtype=np.float64)
        for s in range(todo):
            conds[s] = sample_conditioning(pool, rng).as_array()
        z = rng.standard_normal((todo, cfg.nz))
        imgs = model.generate(z, conds)
        attempts += todo
        for s in range(todo):
            img2d = imgs[s].mean(axis=2) if cfg.channels > 1 else imgs[s, :, :, 0]
            raster = Raster(np.clip(np.asarray(img2d, dtype=np.float64), 0.0, 1.0))
            try:
                mask = derive_mask(raster)
            except ValueError:
                continue
            if connected_components(mask, 8).count != 1:
                continue
            try:
                from .features import extract_features
                feats = extract_features(raster, mask)
            except ValueError:
                continue
            records.append(BubbleRecord(patch=raster, mask=mask, features=feats))
            if len(records) == n:
                break
    return BubbleDb(records=records, channels=cfg.channels, seed=seed)


def from_training_records(records: Sequence[TrainingRecord], seed: int = 0) -> BubbleDb:
    """Wrap a training corpus in the database container (corpus flag set)."""
    recs = [BubbleRecord(patch=r.patch, mask=r.mask, features=r.features) for r in records]
    return BubbleDb(records=recs, training_corpus=True, seed=seed)


def query_nearest(db: BubbleDb, target: FeatureVector,
                  weights=(1.0, 1.0, 1.0, 1.0)) -> int:
    """Index of the record closest to `target`; exact, lowest index on ties."""
    if not db.records:
        raise ValueError("empty database")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (4,) or (w < 0).any():
        raise ValueError("weights must be 4 non-negative reals")
    q = target.as_array().astype(np.float64)
    assert db.tree is not None
    return db.tree.nearest(q, w)


def query_nearest_scan(db: BubbleDb, target: FeatureVector,
                       weights=(1.0, 1.0, 1.0, 1.0)) -> int:
    """Reference linear scan; the tree must always agree with this."""
    if not db.records:
        raise ValueError("empty database")
    best_d = math.inf
    best_i = -1
    for i, r in enumerate(db.records):
        d = feature_distance(target, r.features, weights)
        if d < best_d:
            best_d = d
            best_i = i
    return best_i


def correlation_matrix(db: BubbleDb) -> Tuple[np.ndarray, np.ndarray]:
    """Pearson correlations of [E, phi, psi, m] across records.

    Returns (4x4 matrix, degenerate-component flags). Entries involving a
    zero-variance component are reported as 0 and flagged; the diagonal is
    exactly 1.
    """
    if len(db.records) < 3:
        raise ValueError("need at least 3 records")
    kmat = db.feature_matrix()
    std = kmat.std(axis=0)
    degenerate = std < 1e-12
    out = np.zeros((4, 4), dtype=np.float64)
    centered = kmat - kmat.mean(axis=0)
    for i in range(4):
        out[i, i] = 1.0
        for j in range(i + 1, 4):
            if degenerate[i] or degenerate[j]:
                continue
            c = float((centered[:, i] * centered[:, j]).mean() / (std[i] * std[j]))
            out[i, j] = out[j, i] = c
    return out, degenerate


def save(db: BubbleDb, path) -> None:
    side = db.side
    flags = FLAG_TRAINING_CORPUS if db.training_corpus else 0
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<IIHBB", VERSION, len(db.records), side, db.channels, flags)
    for r in db.records:
        buf += r.features.as_array().astype("<f4").tobytes()
        patch8 = np.clip(np.rint(r.patch.data * 255.0), 0, 255).astype(np.uint8)
        if db.channels > 1:  # replicate the plane; format stores interleaved
            patch8 = np.repeat(patch8[:, :, None], db.channels, axis=2)
        buf += patch8.tobytes()
        buf += r.mask.data.astype(np.uint8).tobytes()
    Path(path).write_bytes(bytes(buf))


def load(path) -> BubbleDb:
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a bubble database (bad magic)")
    head_end = len(MAGIC) + struct.calcsize("<IIHBB")
    if len(data) < head_end:
        raise ValueError(f"{path}: truncated header")
    version, count, side, channels, flags = struct.unpack(
        "<IIHBB", data[len(MAGIC):head_end])
    if version != VERSION:
        raise ValueError(f"{path}: unsupported database version {version}")
    stride = 16 + side * side * channels + side * side
    expected = head_end + count * stride
    if len(data) != expected:
        raise ValueError(
            f"{path}: expected {expected} bytes for {count} records, found {len(data)}")
    records: List[BubbleRecord] = []
    pos = head_end
    for _ in range(count):
        feats = np.frombuffer(data, dtype="<f4", count=4, offset=pos)
        pos += 16
        patch = np.frombuffer(data, dtype=np.uint8, count=side * side * channels,
                              offset=pos)
        pos += side * side * channels
        mask = np.frombuffer(data, dtype=np.uint8, count=side * side, offset=pos)
        pos += side * side
        if channels > 1:
            plane = patch.reshape(side, side, channels)[:, :, 0]
        else:
            plane = patch.reshape(side, side)
        records.append(BubbleRecord(
            patch=Raster(plane.astype(np.float64) / 255.0),
            mask=BitMask(mask.reshape(side, side).astype(bool)),
            features=FeatureVector(float(feats[0]), float(feats[1]),
                                   float(feats[2]), float(feats[3])),
        ))
    return BubbleDb(records=records, channels=channels,
                    training_corpus=bool(flags & FLAG_TRAINING_CORPUS),
                    seed=0)
