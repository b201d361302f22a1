"""Scene assembly: from a physical flow description to labeled images.

A flow spec fixes the imaging geometry (image size, resolution, channel
wall positions), the bubble population (count or areal density, size and
aspect laws, lateral profile) and rendering levels. Sampling produces a
bubble list; each bubble queries the database for a patch matching its
target features; placement enforces the wall rules (lateral overflow shifts
inside, vertical overflow is cropped at painting); compositing takes the
per-pixel minimum, which makes painting order irrelevant. Ground truth and
a per-bubble density map are exported alongside the image.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import netpbm
from .bubdb import BubbleDb, query_nearest
from .features import FeatureVector, extract_features, fit_ellipse, interpolate
from .imgproc import BitMask, Raster, central_moments, largest_component, resize_bilinear

PROFILES = ("uniform", "center", "double", "side")


@dataclass
class FlowSpec:
    width_px: int
    height_px: int
    resolution_px_per_mm: float
    channel_left_mm: float
    channel_right_mm: float
    count: Optional[int] = None            # exact bubble count ...
    density_per_mm2: Optional[float] = None  # ... or Poisson areal density
    median_diameter_mm: float = 2.0
    log_sigma: float = 0.25
    aspect_range: Tuple[float, float] = (0.55, 0.95)
    profile: str = "uniform"
    peak_sigma_frac: float = 0.12          # lateral Gaussian width / channel width
    wall_offset_frac: float = 0.15         # peak distance from wall / channel width
    background: float = 0.88
    noise_sigma: float = 0.01
    density_kernel_sigma: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.resolution_px_per_mm <= 0:
            raise ValueError("resolution must be positive")
        if self.profile not in PROFILES:
            raise ValueError(f"profile must be one of {PROFILES}")
        if (self.count is None) == (self.density_per_mm2 is None):
            raise ValueError("specify exactly one of count / density_per_mm2")
        if self.count is not None and self.count < 0:
            raise ValueError("count must be >= 0")
        left = self.channel_left_mm * self.resolution_px_per_mm
        right = self.channel_right_mm * self.resolution_px_per_mm
        if not (0.0 <= left < right <= self.width_px):
            raise ValueError("channel walls must map inside the image")

    @property
    def wall_left_px(self) -> float:
        return self.channel_left_mm * self.resolution_px_per_mm

    @property
    def wall_right_px(self) -> float:
        return self.channel_right_mm * self.resolution_px_per_mm

    def to_dict(self) -> dict:
        d = asdict(self)
        d["aspect_range"] = list(self.aspect_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FlowSpec":
        d = dict(d)
        if "aspect_range" in d:
            d["aspect_range"] = tuple(d["aspect_range"])
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class BubbleInstance:
    center: Tuple[float, float]  # (x, y) px
    z: float
    a: float                      # semi-major, px
    b: float                      # semi-minor, px
    target: FeatureVector
    record_index: int
    scale: float
    clipped: bool = False


@dataclass
class BubbleLabel:
    id: int
    x: float
    y: float
    z: float
    a: float
    b: float
    phi: float
    E: float
    psi: float
    m: float
    area_px2: float
    bbox: Tuple[int, int, int, int]  # x0, y0, x1, y1 (exclusive)
    clipped: bool


@dataclass
class LabelSet:
    labels: List[BubbleLabel]
    spec: FlowSpec
    seed: int
    achieved_count: int


def _sample_lateral(spec: FlowSpec, rng: np.random.Generator) -> float:
    """One lateral position from the requested profile (rejection sampling)."""
    x0, x1 = spec.wall_left_px, spec.wall_right_px
    width = x1 - x0
    if spec.profile == "uniform":
        return float(rng.uniform(x0, x1))
    sigma = spec.peak_sigma_frac * width
    if spec.profile == "center":
        centers = (x0 + 0.5 * width,)
    elif spec.profile == "side":
        centers = (x0 + spec.wall_offset_frac * width,)
    else:  # double
        centers = (x0 + spec.wall_offset_frac * width,
                   x1 - spec.wall_offset_frac * width)
    while True:
        mu = centers[int(rng.integers(0, len(centers)))]
        x = float(rng.normal(mu, sigma))
        if x0 <= x <= x1:
            return x


def lateral_profile_pdf(spec: FlowSpec, x: np.ndarray) -> np.ndarray:
    """Normalized lateral density on a grid (the sampling oracle)."""
    x0, x1 = spec.wall_left_px, spec.wall_right_px
    width = x1 - x0
    if spec.profile == "uniform":
        pdf = np.ones_like(x)
    else:
        sigma = spec.peak_sigma_frac * width
        if spec.profile == "center":
            centers = [x0 + 0.5 * width]
        elif spec.profile == "side":
            centers = [x0 + spec.wall_offset_frac * width]
        else:
            centers = [x0 + spec.wall_offset_frac * width,
                       x1 - spec.wall_offset_frac * width]
        pdf = np.zeros_like(x)
        for mu in centers:
            pdf = pdf + np.exp(-0.5 * ((x - mu) / sigma) ** 2)
    pdf = np.where((x >= x0) & (x <= x1), pdf, 0.0)
    total = np.trapezoid(pdf, x)
    return pdf / total


def sample_bubble_list(spec: FlowSpec, db: BubbleDb,
                       rng: Optional[np.random.Generator] = None) -> List[BubbleInstance]:
    """Draw the bubble population and pair each bubble with a database record."""
    rng = rng or np.random.default_rng(spec.seed)
    if spec.count is not None:
        n = spec.count
    else:
        area_mm2 = ((spec.wall_right_px - spec.wall_left_px)
                    / spec.resolution_px_per_mm) * (spec.height_px / spec.resolution_px_per_mm)
        n = int(rng.poisson(spec.density_per_mm2 * area_mm2))
    channel_w = spec.wall_right_px - spec.wall_left_px
    kmat = db.feature_matrix()
    out: List[BubbleInstance] = []
    for i in range(n):
        x = _sample_lateral(spec, rng)
        y = float(rng.uniform(0, spec.height_px))
        z = float(rng.uniform(0.0, 1.0))
        d_px = spec.median_diameter_mm * math.exp(
            spec.log_sigma * rng.standard_normal()) * spec.resolution_px_per_mm
        d_px = float(np.clip(d_px, 4.0, 0.9 * channel_w))
        e = float(rng.uniform(*spec.aspect_range))
        a = d_px / (2.0 * math.sqrt(e))
        b = 0.5 * d_px * math.sqrt(e)
        phi = float(rng.uniform(-math.pi / 2.0, math.pi / 2.0))
        if phi == -math.pi / 2.0:
            phi = math.pi / 2.0
        ii = int(rng.integers(0, len(kmat)))
        jj = int(rng.integers(0, len(kmat)))
        beta = float(rng.uniform(0.0, 1.0))
        blend = interpolate(db.records[ii].features, db.records[jj].features, beta)
        target = FeatureVector(E=e, phi=phi, psi=blend.psi, m=blend.m)
        rec = query_nearest(db, target)
        rec_fit = fit_ellipse(central_moments(db.records[rec].mask))
        scale = a / rec_fit.a
        out.append(BubbleInstance(center=(x, y), z=z, a=a, b=b, target=target,
                                  record_index=rec, scale=scale))
    return out


@dataclass
class _ScaledPatch:
    image: np.ndarray          # (side, side) float
    fg: np.ndarray             # participating foreground pixels
    mask: np.ndarray           # scaled record mask
    feats: Optional[FeatureVector]


_FG_MARGIN = 0.05


def _scaled_patch(db: BubbleDb, inst: BubbleInstance) -> _ScaledPatch:
    rec = db.records[inst.record_index]
    side = max(8, int(round(rec.patch.data.shape[0] * inst.scale)))
    img = resize_bilinear(rec.patch, side, side).data
    mask_r = resize_bilinear(Raster(rec.mask.data.astype(np.float64)), side, side)
    mask = mask_r.data >= 0.5
    border = np.concatenate([img[0, :], img[-1, :], img[1:-1, 0], img[1:-1, -1]])
    bg = float(np.median(border))
    fg = img < bg - _FG_MARGIN
    feats: Optional[FeatureVector] = None
    try:
        feats = extract_features(Raster(img), largest_component(BitMask(mask)))
    except ValueError:
        feats = rec.features
    return _ScaledPatch(image=img, fg=fg, mask=mask, feats=feats)


def place_with_boundary(inst: BubbleInstance, spec: FlowSpec,
                        extent: Optional[Tuple[float, float, float, float]] = None,
                        ) -> BubbleInstance:
    """Apply the wall rules.

    Lateral overflow shifts the bubble the minimal amount back inside the
    walls; vertical overflow past the image edges keeps the position and
    flags the bubble for cropping; a corner case shifts first, then crops.
    `extent` is (left, right, top, bottom) reach from the center; when
    omitted it falls back to the rotated-ellipse bound.
    """
    if extent is None:
        ca, sa = math.cos(inst.target.phi), math.sin(inst.target.phi)
        rx = math.hypot(inst.a * ca, inst.b * sa)
        ry = math.hypot(inst.a * sa, inst.b * ca)
        extent = (rx, rx, ry, ry)
    ext_l, ext_r, ext_t, ext_b = extent
    x, y = inst.center
    shift = 0.0
    if x - ext_l < spec.wall_left_px:
        shift = spec.wall_left_px - (x - ext_l)
    elif x + ext_r > spec.wall_right_px:
        shift = spec.wall_right_px - (x + ext_r)
    x += shift
    clipped = (y - ext_t < 0.0) or (y + ext_b > spec.height_px)
    return BubbleInstance(center=(x, y), z=inst.z, a=inst.a, b=inst.b,
                          target=inst.target, record_index=inst.record_index,
                          scale=inst.scale, clipped=clipped)


def paint(canvas: np.ndarray, patch: _ScaledPatch, inst: BubbleInstance) -> None:
    """Min-composite the participating pixels; outside-image pixels drop."""
    side = patch.image.shape[0]
    h, w = canvas.shape
    x0 = int(round(inst.center[0] - side / 2.0))
    y0 = int(round(inst.center[1] - side / 2.0))
    sx0, sx1 = max(0, -x0), min(side, w - x0)
    sy0, sy1 = max(0, -y0), min(side, h - y0)
    if sx0 >= sx1 or sy0 >= sy1:
        return
    sub = canvas[y0 + sy0:y0 + sy1, x0 + sx0:x0 + sx1]
    pimg = patch.image[sy0:sy1, sx0:sx1]
    pfg = patch.fg[sy0:sy1, sx0:sx1]
    np.minimum(sub, np.where(pfg, pimg, 1.0), out=sub)


def _fg_extent(patch: _ScaledPatch) -> Tuple[float, float, float, float]:
    """Participating-pixel reach around the patch center, in pixels."""
    ys, xs = np.nonzero(patch.fg)
    side = patch.image.shape[0]
    c = side / 2.0
    if xs.size == 0:
        return (0.0, 0.0, 0.0, 0.0)
    return (c - xs.min(), xs.max() + 1 - c, c - ys.min(), ys.max() + 1 - c)


def synthesize(spec: FlowSpec, db: BubbleDb) -> Tuple[Raster, LabelSet, np.ndarray]:
    """Build one labeled scene; returns (image, labels, density map)."""
    if not db.records:
        raise ValueError("empty database")
    rng = np.random.default_rng(spec.seed)
    instances = sample_bubble_list(spec, db, rng)
    canvas = np.clip(
        spec.background + rng.normal(0.0, spec.noise_sigma, (spec.height_px, spec.width_px))
        if spec.noise_sigma > 0 else np.full((spec.height_px, spec.width_px), spec.background),
        0.0, 1.0)
    placed: List[Tuple[BubbleInstance, _ScaledPatch]] = []
    for inst in instances:
        patch = _scaled_patch(db, inst)
        adjusted = place_with_boundary(inst, spec, extent=_fg_extent(patch))
        placed.append((adjusted, patch))
    # ascending depth; the min rule makes pixels order-independent anyway
    order = sorted(range(len(placed)), key=lambda i: (placed[i][0].z, i))
    for idx in order:
        inst, patch = placed[idx]
        paint(canvas, patch, inst)
    labels: List[BubbleLabel] = []
    for i, (inst, patch) in enumerate(placed):
        feats = patch.feats
        side = patch.image.shape[0]
        x0 = int(round(inst.center[0] - side / 2.0))
        y0 = int(round(inst.center[1] - side / 2.0))
        area = float(patch.mask.sum())
        labels.append(BubbleLabel(
            id=i, x=inst.center[0], y=inst.center[1], z=inst.z,
            a=inst.a, b=inst.b,
            phi=feats.phi, E=feats.E, psi=feats.psi, m=feats.m,
            area_px2=area,
            bbox=(x0, y0, x0 + side, y0 + side),
            clipped=inst.clipped))
    label_set = LabelSet(labels=labels, spec=spec, seed=spec.seed,
                         achieved_count=len(labels))
    dmap = density_map(label_set, spec)
    return Raster(canvas), label_set, dmap


def density_map(labels: LabelSet, spec: FlowSpec) -> np.ndarray:
    """Sum of per-bubble Gaussian kernels, each renormalized to unit mass
    inside the image, so the map integrates exactly to the bubble count."""
    h, w = spec.height_px, spec.width_px
    out = np.zeros((h, w), dtype=np.float64)
    sigma = spec.density_kernel_sigma
    ys = np.arange(h, dtype=np.float64) + 0.5
    xs = np.arange(w, dtype=np.float64) + 0.5
    for lab in labels.labels:
        gx = np.exp(-0.5 * ((xs - lab.x) / sigma) ** 2)
        gy = np.exp(-0.5 * ((ys - lab.y) / sigma) ** 2)
        kern = gy[:, None] * gx[None, :]
        total = kern.sum()
        if total > 0:
            out += kern / total
    return out


CSV_COLUMNS = ["id", "x_px", "y_px", "z", "a_px", "b_px", "phi_rad", "E",
               "circularity", "edge_ratio", "area_px2", "clipped"]


def export(image: Raster, labels: LabelSet, dmap: np.ndarray, out_dir) -> Dict[str, str]:
    """Write image.pgm, labels.csv, density.pgm and meta.json into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    netpbm.write_pgm(image, out / "image.pgm")
    peak = float(dmap.max())
    density_scale = 255.0 / peak if peak > 0 else 1.0
    netpbm.write_pgm(Raster(np.clip(dmap * density_scale / 255.0, 0.0, 1.0)),
                     out / "density.pgm")
    with open(out / "labels.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(CSV_COLUMNS)
        for lab in labels.labels:
            wr.writerow([
                lab.id,
                f"{lab.x:.6g}", f"{lab.y:.6g}", f"{lab.z:.6g}",
                f"{lab.a:.6g}", f"{lab.b:.6g}", f"{lab.phi:.6g}",
                f"{lab.E:.6g}", f"{lab.psi:.6g}", f"{lab.m:.6g}",
                f"{lab.area_px2:.6g}", int(lab.clipped),
            ])
    meta = {
        "spec": labels.spec.to_dict(),
        "seed": labels.seed,
        "achieved_count": labels.achieved_count,
        "density_scale": density_scale,
    }
    with open(out / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return {
        "image": str(out / "image.pgm"),
        "labels": str(out / "labels.csv"),
        "density": str(out / "density.pgm"),
        "meta": str(out / "meta.json"),
    }


def read_labels_csv(path) -> List[BubbleLabel]:
    out: List[BubbleLabel] = []
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if rd.fieldnames != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {rd.fieldnames}")
        for row in rd:
            out.append(BubbleLabel(
                id=int(row["id"]), x=float(row["x_px"]), y=float(row["y_px"]),
                z=float(row["z"]), a=float(row["a_px"]), b=float(row["b_px"]),
                phi=float(row["phi_rad"]), E=float(row["E"]),
                psi=float(row["circularity"]), m=float(row["edge_ratio"]),
                area_px2=float(row["area_px2"]), bbox=(0, 0, 0, 0),
                clipped=bool(int(row["clipped"]))))
    return out
