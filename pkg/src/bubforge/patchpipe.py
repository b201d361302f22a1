"""Patch segmentation, single-vs-cluster classification, and normalization.

A flow image is binarized and split into per-component patches. Three
independent counters (watershed basins, skeleton endpoints, adaptive dark
cores) each predict the bubble count; the modal value decides. Patches voted
single survive automated quality filters and are normalized into fixed-size
training records with freshly extracted features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .features import FeatureVector, extract_features
from .imgproc import (
    BitMask,
    Raster,
    component_areas,
    connected_components,
    distance_transform,
    fill_holes,
    largest_component,
    remove_small_components,
    resize_bilinear,
    skeletonize,
    threshold_adaptive,
    threshold_otsu,
    watershed_count,
)


@dataclass
class PatchConfig:
    """Calibration knobs for segmentation and counting."""

    a_min: int = 30                 # px^2, minimum bubble area
    pad: int = 4                    # px of context kept around each component
    segment_offset: float = 0.05    # darkness margin for scene binarization
    watershed_h_frac: float = 0.03  # maxima suppression depth, fraction of peak
    watershed_h_abs: float = 0.5    # px, suppression floor against digital ripple
    prune_frac: float = 0.2         # spur prune length, fraction of sqrt(area)
    core_offset: float = 0.2        # darkness margin isolating the edge band
    core_min: int = 8               # px^2, minimum area of an enclosed core
    min_solidity: float = 0.85
    max_area_frac: float = 0.5      # of the patch, for the quality filter
    norm_margin_frac: float = 0.1   # square-crop margin around the bbox
    border_target: float = 0.9      # normalized background intensity


@dataclass
class Patch:
    image: Raster
    mask: BitMask
    origin: Tuple[int, int]  # (x, y) of the crop in the source image

    def __post_init__(self):
        if self.image.data.shape != self.mask.data.shape:
            raise ValueError("patch image and mask dimensions differ")
        if not self.mask.data.any():
            raise ValueError("patch mask is empty")


@dataclass
class PatchVerdict:
    n1: int
    n2: int
    n3: int
    n: Optional[int]  # modal count; None marks an unresolved cluster vote
    single: bool      # modal 1 and quality filters passed

    @property
    def is_cluster(self) -> bool:
        return self.n is None or self.n > 1


@dataclass
class TrainingRecord:
    patch: Raster
    mask: BitMask
    features: FeatureVector


def _odd(v: int) -> int:
    return v if v % 2 == 1 else v + 1


def segment_patches(img: Raster, cfg: Optional[PatchConfig] = None) -> List[Patch]:
    """Split a flow image into per-component patches.

    Binarization subtracts the local background (clamped-window mean), holes
    are filled so rims and interiors fuse, and components below the area
    floor are dropped. Components are emitted in raster-scan order.
    """
    cfg = cfg or PatchConfig()
    h, w = img.data.shape
    if h == 0 or w == 0:
        raise ValueError("empty image")
    window = _odd(int(np.clip(min(h, w) // 4, 15, 151)))
    if window > 2 * min(h, w):
        window = _odd(max(3, 2 * min(h, w) - 1))
    dark = threshold_adaptive(img, window, cfg.segment_offset)
    filled = fill_holes(dark)
    filled = remove_small_components(filled, cfg.a_min)
    labels = connected_components(filled, 8)
    patches: List[Patch] = []
    for lab in range(1, labels.count + 1):
        comp = labels.data == lab
        ys, xs = np.nonzero(comp)
        y0 = max(0, int(ys.min()) - cfg.pad)
        y1 = min(h, int(ys.max()) + 1 + cfg.pad)
        x0 = max(0, int(xs.min()) - cfg.pad)
        x1 = min(w, int(xs.max()) + 1 + cfg.pad)
        patches.append(
            Patch(
                image=Raster(img.data[y0:y1, x0:x1].copy()),
                mask=BitMask(comp[y0:y1, x0:x1]),
                origin=(x0, y0),
            )
        )
    return patches


def _ring8(region: np.ndarray) -> np.ndarray:
    ring = np.zeros_like(region)
    ring[:-1, :] |= region[1:, :]
    ring[1:, :] |= region[:-1, :]
    ring[:, :-1] |= region[:, 1:]
    ring[:, 1:] |= region[:, :-1]
    ring[:-1, :-1] |= region[1:, 1:]
    ring[1:, 1:] |= region[:-1, :-1]
    ring[:-1, 1:] |= region[1:, :-1]
    ring[1:, :-1] |= region[:-1, 1:]
    return ring & ~region


def _merge_small_basins(labels: np.ndarray, n: int, a_min: int) -> int:
    """Fold basins smaller than a_min into their largest neighbor basin."""
    if n <= 1:
        return n
    lab = labels.copy()
    frozen: set = set()  # under-floor basins with no neighbor to join
    while True:
        areas = np.bincount(lab.ravel())
        small = [k for k in range(1, areas.size)
                 if 0 < areas[k] < a_min and k not in frozen]
        if not small:
            break
        k = min(small, key=lambda q: areas[q])
        region = lab == k
        neighbors = np.unique(lab[_ring8(region) & (lab > 0)])
        neighbors = neighbors[neighbors != k]
        if neighbors.size == 0:
            frozen.add(k)
            continue
        target = max(neighbors, key=lambda q: areas[q])
        lab[region] = target
    return int(np.unique(lab[lab > 0]).size)


def count_watershed(p: Patch, cfg: Optional[PatchConfig] = None) -> int:
    """Basin count of the mask's distance field after maxima suppression."""
    cfg = cfg or PatchConfig()
    dist = distance_transform(p.mask)
    peak = float(dist.max())
    if peak <= 0.0:
        return 1
    h = max(cfg.watershed_h_frac * peak, cfg.watershed_h_abs)
    n, labels = watershed_count(dist, p.mask, h)
    return max(1, _merge_small_basins(labels.data, n, cfg.a_min))


def _neighbor_count(sk: np.ndarray) -> np.ndarray:
    padded = np.zeros((sk.shape[0] + 2, sk.shape[1] + 2), dtype=np.int32)
    padded[1:-1, 1:-1] = sk
    acc = np.zeros_like(sk, dtype=np.int32)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            acc += padded[1 + dy:sk.shape[0] + 1 + dy, 1 + dx:sk.shape[1] + 1 + dx]
    return acc


def count_skeleton(p: Patch, cfg: Optional[PatchConfig] = None) -> int:
    """Half the skeleton endpoint count after spur pruning, floored at one.

    An isolated skeleton pixel is a segment whose two endpoints collapsed,
    so it contributes two endpoint-equivalents (which still maps a lone
    point to a count of one).
    """
    cfg = cfg or PatchConfig()
    sk = skeletonize(p.mask).data.astype(np.int32)
    area = float(p.mask.count())
    prune = int(round(cfg.prune_frac * math.sqrt(area)))
    for _ in range(prune):
        if not sk.any():
            break
        endpoints = (sk == 1) & (_neighbor_count(sk) == 1)
        if not endpoints.any():
            break
        sk[endpoints] = 0
    nn = _neighbor_count(sk)
    e = int(((sk == 1) & (nn == 1)).sum()) + 2 * int(((sk == 1) & (nn == 0)).sum())
    return max(1, math.ceil(e / 2))


def count_adaptive(p: Patch, cfg: Optional[PatchConfig] = None) -> int:
    """Bubble count from dark edge structure under a local threshold.

    The threshold keeps only decisively dark pixels (edge bands). Each
    sufficiently large dark component encloses the bright cores of the
    bubbles it bounds; overlapping bubbles keep their own edge arcs, so
    their cores stay separate even when the dark regions merge. When no
    enclosed core is found (solid-dark bubbles), dark components themselves
    are counted, with a floor of one.
    """
    cfg = cfg or PatchConfig()
    h, w = p.image.data.shape
    window = _odd(max(3, math.ceil(min(h, w) / 2)))
    if window > 2 * min(h, w):
        window = _odd(max(3, 2 * min(h, w) - 1))
    dark = threshold_adaptive(p.image, window, cfg.core_offset)
    labels = connected_components(dark, 8)
    areas = component_areas(labels)
    ncores = 0
    ndark = 0
    for lab in range(1, labels.count + 1):
        if areas[lab] < cfg.a_min:
            continue
        ndark += 1
        comp = BitMask(labels.data == lab)
        cores = fill_holes(comp).data & ~dark.data
        core_labels = connected_components(BitMask(cores), 8)
        core_areas = component_areas(core_labels)
        ncores += int((core_areas[1:] >= cfg.core_min).sum())
    if ncores > 0:
        return ncores
    return max(1, ndark)


def _convex_hull_area(ys: np.ndarray, xs: np.ndarray) -> float:
    """Shoelace area of the convex hull of pixel centers (monotone chain)."""
    pts = np.unique(np.stack([xs, ys], axis=1), axis=0)
    if len(pts) < 3:
        return float(len(pts))
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def half(points):
        out = []
        for px, py in points:
            while len(out) >= 2:
                ox, oy = out[-2]
                ax, ay = out[-1]
                if (ax - ox) * (py - oy) - (ay - oy) * (px - ox) <= 0:
                    out.pop()
                else:
                    break
            out.append((px, py))
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    hull = lower[:-1] + upper[:-1]
    area = 0.0
    for i in range(len(hull)):
        x1, y1 = hull[i]
        x2, y2 = hull[(i + 1) % len(hull)]
        area += x1 * y2 - x2 * y1
    return abs(area) / 2.0


def solidity(mask: BitMask) -> float:
    """Mask area over its convex hull area (1 for convex shapes)."""
    ys, xs = np.nonzero(mask.data)
    hull = _convex_hull_area(ys, xs)
    if hull <= 0:
        return 1.0
    return min(1.0, float(ys.size) / hull)


def classify(p: Patch, cfg: Optional[PatchConfig] = None) -> PatchVerdict:
    """Modal vote of the three counters, conservative on full disagreement."""
    cfg = cfg or PatchConfig()
    n1 = count_watershed(p, cfg)
    n2 = count_skeleton(p, cfg)
    n3 = count_adaptive(p, cfg)
    if n1 == n2 or n1 == n3:
        n: Optional[int] = n1
    elif n2 == n3:
        n = n2
    else:
        n = None  # all three disagree: treat as cluster rather than guess
    single = False
    if n == 1:
        area = p.mask.count()
        patch_area = p.mask.data.size
        single = bool(
            cfg.a_min <= area <= cfg.max_area_frac * patch_area
            and solidity(p.mask) >= cfg.min_solidity
        )
    return PatchVerdict(n1=n1, n2=n2, n3=n3, n=n, single=single)


def derive_mask(img: Raster, min_speck: Optional[int] = None) -> BitMask:
    """Binarize a patch into its dark foreground: threshold, despeckle, fill.

    Raises when the patch has no usable intensity split. The result may have
    several components; callers enforce their own component policy.
    """
    t, degenerate = threshold_otsu(img)
    if degenerate:
        raise ValueError("no foreground: flat intensity")
    dark = BitMask(img.data < t)
    if min_speck is None:
        min_speck = max(4, int(0.002 * img.data.size))
    dark = remove_small_components(dark, min_speck)
    if not dark.data.any():
        raise ValueError("no foreground above speck floor")
    return fill_holes(dark)


def _border_median(data: np.ndarray) -> float:
    border = np.concatenate([data[0, :], data[-1, :], data[1:-1, 0], data[1:-1, -1]])
    return float(np.median(border))


def _dilate1(m: np.ndarray) -> np.ndarray:
    out = m.copy()
    out[:-1, :] |= m[1:, :]
    out[1:, :] |= m[:-1, :]
    out[:, :-1] |= m[:, 1:]
    out[:, 1:] |= m[:, :-1]
    return out


def normalize_patch(p: Patch, side: int = 64, cfg: Optional[PatchConfig] = None) -> TrainingRecord:
    """Normalize a single-bubble patch into a side x side training record.

    Square crop around the mask centroid preserves the aspect ratio; foreign
    fragments are painted over with the border background; intensities are
    rescaled so the background median lands on the target level; the mask and
    the features are recomputed on the final patch.
    """
    cfg = cfg or PatchConfig()
    main = largest_component(p.mask)
    ys, xs = np.nonzero(main.data)
    bw = int(xs.max() - xs.min()) + 1
    bh = int(ys.max() - ys.min()) + 1
    side0 = max(bw, bh)
    margin = int(round(cfg.norm_margin_frac * side0))
    crop_side = side0 + 2 * margin
    cx = int(round(float(xs.mean())))
    cy = int(round(float(ys.mean())))
    x0 = cx - crop_side // 2
    y0 = cy - crop_side // 2
    bg = _border_median(p.image.data)
    crop = np.full((crop_side, crop_side), bg, dtype=np.float64)
    mcrop = np.zeros((crop_side, crop_side), dtype=bool)
    src_h, src_w = p.image.data.shape
    sy0, sy1 = max(0, y0), min(src_h, y0 + crop_side)
    sx0, sx1 = max(0, x0), min(src_w, x0 + crop_side)
    if sy0 < sy1 and sx0 < sx1:
        crop[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = p.image.data[sy0:sy1, sx0:sx1]
        mcrop[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = main.data[sy0:sy1, sx0:sx1]
    # paint over foreign dark fragments with the background level
    dark = fill_holes(BitMask(crop < bg - 0.05)).data
    labels = connected_components(BitMask(dark), 8)
    for lab in range(1, labels.count + 1):
        comp = labels.data == lab
        if not (comp & mcrop).any():
            crop[_dilate1(comp)] = bg
    resized = resize_bilinear(Raster(np.clip(crop, 0.0, 1.0)), side, side)
    scale = cfg.border_target / max(bg, 1e-3)
    patch = Raster(np.clip(resized.data * scale, 0.0, 1.0))
    mask = largest_component(derive_mask(patch))
    if not mask.data.any():
        raise ValueError("normalization lost the bubble")
    return TrainingRecord(patch=patch, mask=mask, features=extract_features(patch, mask))


def build_training_set(
    images: Sequence[Raster],
    cfg: Optional[PatchConfig] = None,
    side: int = 64,
) -> List[TrainingRecord]:
    """Segment, classify and normalize every input image, in stable order."""
    cfg = cfg or PatchConfig()
    records: List[TrainingRecord] = []
    for img in images:
        for patch in segment_patches(img, cfg):
            verdict = classify(patch, cfg)
            if not verdict.single:
                continue
            try:
                records.append(normalize_patch(patch, side=side, cfg=cfg))
            except ValueError:
                continue
    return records
