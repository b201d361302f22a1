"""Parametric concentric-ellipse bubble renderer.

Draws a backlit-looking bubble as a dark edge band around a brighter
interior on a bright background. The outer boundary is an ellipse modulated
by low-order radial harmonics; the interior is the outer shape scaled by
s = sqrt(1 - m) about the center, which makes the edge-band area fraction
equal m exactly in the continuum. Doubles as the conventional baseline for
visual comparison and as the generator of a fully labeled training corpus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .imgproc import BitMask, Raster


@dataclass
class CcaParams:
    a: float
    b: float
    phi: float = 0.0
    m: float = 0.3
    wobble: Sequence[Tuple[float, float]] = ()  # (amplitude, phase) for harmonics 2..5
    i_bg: float = 0.88
    i_edge: float = 0.15
    i_in: float = 0.65
    noise_sigma: float = 0.02

    def __post_init__(self):
        if not (self.a >= self.b > 0):
            raise ValueError("require a >= b > 0")
        if not (0.0 <= self.m < 1.0):
            raise ValueError("m must lie in [0, 1)")
        if len(self.wobble) > 4:
            raise ValueError("wobble covers harmonics 2..5 only")
        for amp, _ in self.wobble:
            if not (0.0 <= amp <= 0.15):
                raise ValueError("wobble amplitude must lie in [0, 0.15]")
        if not (self.i_edge < self.i_in < self.i_bg):
            raise ValueError("require i_edge < i_in < i_bg")

    def max_extent(self) -> float:
        return max(self.a, self.b) * (1.0 + sum(amp for amp, _ in self.wobble))


def render(
    params: CcaParams,
    size: int,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[Raster, BitMask]:
    """Render one bubble centered on a size x size canvas.

    The 1-px boundary is anti-aliased by radial area coverage; the mask is
    the outer region (coverage >= 1/2). Noise is drawn from `rng` when given.
    """
    if 2.0 * params.max_extent() > 0.95 * size:
        raise ValueError("bubble exceeds canvas")
    c = size / 2.0
    ys, xs = np.mgrid[0:size, 0:size]
    dx = xs + 0.5 - c
    dy = ys + 0.5 - c
    rho = np.hypot(dx, dy)
    theta = np.arctan2(dy, dx)
    tp = theta - params.phi
    a, b = params.a, params.b
    r_ell = (a * b) / np.sqrt((b * np.cos(tp)) ** 2 + (a * np.sin(tp)) ** 2)
    mod = np.ones_like(r_ell)
    for n, (amp, phase) in enumerate(params.wobble, start=2):
        mod += amp * np.cos(n * theta + phase)
    r_out = r_ell * mod
    s = math.sqrt(1.0 - params.m)
    r_in = s * r_out
    outer_cov = np.clip(0.5 + (r_out - rho), 0.0, 1.0)
    inner_cov = np.clip(0.5 + (r_in - rho), 0.0, 1.0)
    img = (
        params.i_bg * (1.0 - outer_cov)
        + params.i_edge * (outer_cov - inner_cov)
        + params.i_in * inner_cov
    )
    if params.noise_sigma > 0 and rng is not None:
        img = img + rng.normal(0.0, params.noise_sigma, img.shape)
    np.clip(img, 0.0, 1.0, out=img)
    mask = rho <= r_out
    return Raster(img), BitMask(mask)


@dataclass
class CorpusRanges:
    """Uniform sampling ranges for the synthetic training corpus.

    Wobble amplitude caps are per harmonic (2..5), weighted toward the
    third: a three-lobed distortion changes circularity visibly at small
    patch sizes while leaving the fitted-ellipse aspect ratio nearly
    untouched, which keeps the two features separately controllable.
    """

    e_range: Tuple[float, float] = (0.4, 1.0)
    m_range: Tuple[float, float] = (0.05, 0.9)
    diameter_range: Tuple[float, float] = (32.0, 56.0)  # equivalent diameter, px
    wobble_amp_max: Tuple[float, float, float, float] = (0.03, 0.12, 0.06, 0.03)
    noise_sigma: float = 0.02


def sample_params(rng: np.random.Generator, ranges: CorpusRanges) -> CcaParams:
    e = rng.uniform(*ranges.e_range)
    phi = rng.uniform(-math.pi / 2.0, math.pi / 2.0)
    m = rng.uniform(*ranges.m_range)
    d = rng.uniform(*ranges.diameter_range)
    a = d / (2.0 * math.sqrt(e))
    b = 0.5 * d * math.sqrt(e)
    caps = ranges.wobble_amp_max
    if np.isscalar(caps):
        caps = (caps,) * 4
    wobble = [(rng.uniform(0.0, cap), rng.uniform(0.0, 2.0 * math.pi))
              for cap in caps]
    return CcaParams(a=a, b=b, phi=phi, m=m, wobble=wobble, noise_sigma=ranges.noise_sigma)


def make_corpus(
    n: int,
    seed: int,
    ranges: Optional[CorpusRanges] = None,
    patch_side: int = 64,
) -> List["TrainingRecord"]:
    """Render n single-bubble records with features recomputed by extraction.

    Parameters are sampled uniformly from the configured ranges; the stored
    features come from running the extractor on the normalized patch, never
    from the render parameters. Deterministic per seed.
    """
    from .patchpipe import Patch, TrainingRecord, normalize_patch

    if n < 1:
        raise ValueError("n must be >= 1")
    ranges = ranges or CorpusRanges()
    rng = np.random.default_rng(seed)
    records: List[TrainingRecord] = []
    while len(records) < n:
        params = sample_params(rng, ranges)
        canvas = int(math.ceil(2.0 * params.max_extent() / 0.9)) + 2
        img, mask = render(params, canvas, rng)
        patch = Patch(image=img, mask=mask, origin=(0, 0))
        try:
            records.append(normalize_patch(patch, side=patch_side))
        except ValueError:
            continue  # extraction failed; draw a fresh parameter set
    return records
