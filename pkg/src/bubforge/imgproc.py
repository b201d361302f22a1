"""Raster primitives: thresholding, labeling, distances, watershed, thinning,
resizing, boundary tracing and moments.

All operations are pure functions of their inputs. Heavy per-pixel loops are
delegated to the kernel backend (compiled extension or numpy fallback).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np

from . import _kernels


@dataclass
class Raster:
    """Grayscale image, row-major float64 intensities in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError("raster data must be 2-D")
        if a.size and (a.min() < 0.0 or a.max() > 1.0):
            raise ValueError("raster intensities must lie in [0, 1]")
        self.data = a

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass
class BitMask:
    """Boolean pixel mask with the same layout as its paired Raster."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=bool)
        if a.ndim != 2:
            raise ValueError("mask data must be 2-D")
        self.data = a

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def count(self) -> int:
        return int(self.data.sum())


@dataclass
class LabelMap:
    """Non-negative integer region labels, 0 meaning background."""

    data: np.ndarray
    count: int

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass
class Moments:
    """Area, centroid and per-pixel-normalized second central moments."""

    area: int
    cx: float
    cy: float
    mu20: float
    mu02: float
    mu11: float


class OtsuResult(NamedTuple):
    threshold: float
    degenerate: bool


_OTSU_BINS = 256


def threshold_otsu(img: Raster, region: Optional[BitMask] = None) -> OtsuResult:
    """Intensity threshold maximizing between-class variance.

    Returns the constant value with ``degenerate=True`` when the region has
    no intensity spread. The threshold is reported between histogram bins so
    that both ``<`` and ``<=`` tests split the classes identically.
    """
    if region is not None:
        if region.data.shape != img.data.shape:
            raise ValueError("region shape does not match image")
        vals = img.data[region.data]
    else:
        vals = img.data.ravel()
    if vals.size == 0:
        raise ValueError("empty region")
    vmin = float(vals.min())
    vmax = float(vals.max())
    if vmin == vmax:
        return OtsuResult(vmin, True)
    bins = np.clip((vals * (_OTSU_BINS - 1)).round().astype(np.int64), 0, _OTSU_BINS - 1)
    hist = np.bincount(bins, minlength=_OTSU_BINS).astype(np.float64)
    total = hist.sum()
    omega = np.cumsum(hist)
    mu = np.cumsum(hist * np.arange(_OTSU_BINS))
    mu_t = mu[-1]
    w0 = omega[:-1]
    w1 = total - w0
    valid = (w0 > 0) & (w1 > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        m0 = mu[:-1] / w0
        m1 = (mu_t - mu[:-1]) / w1
        sigma_b = w0 * w1 * (m0 - m1) ** 2
    sigma_b[~valid] = -1.0
    k = int(np.argmax(sigma_b))
    return OtsuResult((k + 0.5) / (_OTSU_BINS - 1), False)


def threshold_adaptive(img: Raster, window: int, offset: float) -> BitMask:
    """Mark pixels darker than their clamped-window local mean minus offset."""
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and >= 3")
    h, w = img.data.shape
    if window > 2 * min(w, h):
        raise ValueError("window larger than 2x the smaller image side")
    half = window // 2
    ii = np.zeros((h + 1, w + 1), dtype=np.float64)
    np.cumsum(np.cumsum(img.data, axis=0), axis=1, out=ii[1:, 1:])
    ys = np.arange(h)
    xs = np.arange(w)
    y1 = np.maximum(ys - half, 0)
    y2 = np.minimum(ys + half + 1, h)
    x1 = np.maximum(xs - half, 0)
    x2 = np.minimum(xs + half + 1, w)
    s = (ii[np.ix_(y2, x2)] - ii[np.ix_(y1, x2)] - ii[np.ix_(y2, x1)] + ii[np.ix_(y1, x1)])
    area = (y2 - y1)[:, None] * (x2 - x1)[None, :]
    mean = s / area
    return BitMask(img.data < mean - offset)


def connected_components(mask: BitMask, connectivity: int = 8) -> LabelMap:
    """Label connected regions 1..n; deterministic raster-scan ordering."""
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    labels, n = _kernels.label_components(mask.data, connectivity)
    return LabelMap(labels, n)


def component_areas(labels: LabelMap) -> np.ndarray:
    """Pixel count per label, index 0 being background."""
    return np.bincount(labels.data.ravel(), minlength=labels.count + 1)


def distance_transform(mask: BitMask) -> np.ndarray:
    """Exact Euclidean distance from each set pixel to the nearest unset one.

    A mask with no unset pixel has no finite answer; such pixels get the
    diagonal-exceeding sentinel ``width + height``.
    """
    d2 = _kernels.edt_sq(mask.data)
    out = np.sqrt(d2)
    sentinel = float(mask.width + mask.height)
    out[d2 >= _kernels.pure.EDT_FAR * 0.5] = sentinel
    return out


def watershed_count(dist: np.ndarray, mask: BitMask, h: float) -> Tuple[int, LabelMap]:
    """Count catchment basins of the inverted distance field inside the mask.

    Maxima shallower than ``h`` are merged (suppression by grayscale
    reconstruction) before marker extraction; flooding then assigns every
    mask pixel to a basin.
    """
    if dist.shape != mask.data.shape:
        raise ValueError("distance field and mask shapes differ")
    if h < 0:
        raise ValueError("h must be >= 0")
    if not mask.data.any():
        return 0, LabelMap(np.zeros(mask.data.shape, dtype=np.int32), 0)
    d = np.where(mask.data, dist, 0.0)
    hmax = _kernels.reconstruct(d - h, d)
    eps = 1e-6
    regen = _kernels.reconstruct(hmax - eps, hmax)
    peaks = ((hmax - regen) > eps * 0.5) & mask.data
    if not peaks.any():
        # flat positive plateau: mask itself is one basin per component
        peaks = mask.data
    markers, n = _kernels.label_components(peaks, 8)
    labels = _kernels.watershed_flood(d, mask.data, markers)
    return n, LabelMap(labels, n)


def skeletonize(mask: BitMask) -> BitMask:
    """1-px-wide topology-preserving skeleton (two-subiteration thinning).

    The raw two-subiteration rule erases small round blobs outright (every
    pixel of a 2x2 block is simultaneously deletable), which would change
    the component count; any component that vanishes is restored as a
    single pixel at its interior-distance maximum.
    """
    sk = _kernels.thin(mask.data)
    labels, n = _kernels.label_components(mask.data, 8)
    if n:
        survived = set(np.unique(labels[sk]).tolist())
        missing = [lab for lab in range(1, n + 1) if lab not in survived]
        if missing:
            d = _kernels.edt_sq(mask.data)
            for lab in missing:
                vals = np.where(labels == lab, d, -1.0)
                sk.flat[int(np.argmax(vals))] = True
    return BitMask(sk)


def resize_bilinear(img: Raster, new_w: int, new_h: int) -> Raster:
    """Bilinear resample with half-pixel-center alignment.

    With this alignment an exact 2x downscale equals plain 2x2 averaging,
    and an identity resize is bit-identical.
    """
    if new_w < 1 or new_h < 1:
        raise ValueError("target size must be >= 1")
    src = img.data
    h, w = src.shape
    if (new_w, new_h) == (w, h):
        return Raster(src.copy())
    sx = (np.arange(new_w) + 0.5) * (w / new_w) - 0.5
    sy = (np.arange(new_h) + 0.5) * (h / new_h) - 0.5
    x0 = np.clip(np.floor(sx).astype(np.int64), 0, w - 1)
    y0 = np.clip(np.floor(sy).astype(np.int64), 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = np.clip(sx - x0, 0.0, 1.0)
    fy = np.clip(sy - y0, 0.0, 1.0)
    top = src[np.ix_(y0, x0)] * (1 - fx) + src[np.ix_(y0, x1)] * fx
    bot = src[np.ix_(y1, x0)] * (1 - fx) + src[np.ix_(y1, x1)] * fx
    out = top * (1 - fy[:, None]) + bot * fy[:, None]
    np.clip(out, src.min(), src.max(), out=out)
    return Raster(out)


_SQRT2 = float(np.sqrt(2.0))
# clockwise Moore neighborhood starting east
_MOORE = ((0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1))


def contour_perimeter(mask: BitMask) -> float:
    """Length of the outer boundary chain traced through pixel centers.

    Axial steps weigh 1, diagonal steps sqrt(2). Requires exactly one
    8-connected component; an isolated pixel has no steps and yields 0.
    """
    labels = connected_components(mask, 8)
    if labels.count != 1:
        raise ValueError(f"mask must have exactly one component, found {labels.count}")
    m = mask.data
    ys, xs = np.nonzero(m)
    start = (int(ys[0]), int(xs[0]))
    h, w = m.shape

    def is_set(p):
        return 0 <= p[0] < h and 0 <= p[1] < w and m[p[0], p[1]]

    back = (start[0], start[1] - 1)  # west of the raster-scan first pixel is unset
    cur = start
    length = 0.0
    first_move = None
    steps = 0
    limit = 4 * int(m.sum()) + 8
    while True:
        di = _MOORE.index((back[0] - cur[0], back[1] - cur[1]))
        nxt = None
        for k in range(1, 9):
            d = _MOORE[(di + k) % 8]
            cand = (cur[0] + d[0], cur[1] + d[1])
            if is_set(cand):
                nxt = cand
                prev = _MOORE[(di + k - 1) % 8]
                back = (cur[0] + prev[0], cur[1] + prev[1])
                break
        if nxt is None:
            return 0.0  # isolated pixel
        step = _SQRT2 if (nxt[0] != cur[0] and nxt[1] != cur[1]) else 1.0
        if first_move is None:
            first_move = nxt
        elif cur == start and nxt == first_move:
            break
        length += step
        cur = nxt
        steps += 1
        if steps > limit:
            raise RuntimeError("boundary trace did not close")
    return length


_PIXEL_VAR = 1.0 / 12.0


def central_moments(mask: BitMask) -> Moments:
    """Area, centroid and normalized second central moments of set pixels.

    Each pixel contributes at its center plus a 1/12 per-axis variance term,
    so even a single pixel has nonzero extent.
    """
    ys, xs = np.nonzero(mask.data)
    n = ys.size
    if n == 0:
        raise ValueError("empty mask")
    x = xs.astype(np.float64)
    y = ys.astype(np.float64)
    cx = float(x.mean())
    cy = float(y.mean())
    dx = x - cx
    dy = y - cy
    mu20 = float((dx * dx).mean()) + _PIXEL_VAR
    mu02 = float((dy * dy).mean()) + _PIXEL_VAR
    mu11 = float((dx * dy).mean())
    return Moments(area=n, cx=cx, cy=cy, mu20=mu20, mu02=mu02, mu11=mu11)


def fill_holes(mask: BitMask) -> BitMask:
    """Set every unset region not connected to the image border (4-conn)."""
    m = mask.data
    h, w = m.shape
    inv = ~m
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = inv
    padded[0, :] = padded[-1, :] = True
    padded[:, 0] = padded[:, -1] = True
    labels, _ = _kernels.label_components(padded, 4)
    outside_label = labels[0, 0]
    holes = inv & (labels[1:-1, 1:-1] != outside_label)
    return BitMask(m | holes)


def largest_component(mask: BitMask, connectivity: int = 8) -> BitMask:
    """Keep only the largest connected region (ties: lowest label)."""
    labels = connected_components(mask, connectivity)
    if labels.count == 0:
        return BitMask(np.zeros_like(mask.data))
    areas = component_areas(labels)
    best = int(np.argmax(areas[1:])) + 1
    return BitMask(labels.data == best)


def remove_small_components(mask: BitMask, min_area: int, connectivity: int = 8) -> BitMask:
    """Drop connected regions smaller than ``min_area`` pixels."""
    labels = connected_components(mask, connectivity)
    if labels.count == 0:
        return BitMask(mask.data.copy())
    areas = component_areas(labels)
    keep = areas >= min_area
    keep[0] = False
    return BitMask(keep[labels.data])
