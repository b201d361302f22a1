"""Conditioning fidelity evaluation.

For one feature component at a time: sweep a set of target values, generate
a batch of bubbles per value (conditioning vectors are interpolations of
pool vectors with the swept component overridden), extract the features of
every generated patch, and compare the per-value measured means against the
requested values. The summary error is the root-mean-square of the
per-value deviations normalized by the component's pool range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from ..features import FeatureVector, extract_features, interpolate, wrap_half_pi
from ..imgproc import Raster, largest_component
from ..patchpipe import derive_mask
from .model import GanModel

COMPONENTS = ("E", "phi", "psi", "m")


@dataclass
class SweepPoint:
    target: float
    measured_mean: float  # nan when too few usable samples
    n_ok: int
    n_samples: int


@dataclass
class ConditioningReport:
    component: str
    points: List[SweepPoint]
    pool_range: float
    rmse_normalized: float


def component_index(component: str) -> int:
    if component not in COMPONENTS:
        raise ValueError(f"component must be one of {COMPONENTS}")
    return COMPONENTS.index(component)


def patch_features(img2d: np.ndarray) -> FeatureVector:
    """Extract features from a bare generated patch (mask derived on the fly)."""
    raster = Raster(np.clip(img2d, 0.0, 1.0))
    mask = largest_component(derive_mask(raster))
    if not mask.data.any():
        raise ValueError("no usable mask")
    return extract_features(raster, mask)


def _pool_matrix(pool: Sequence[FeatureVector]) -> np.ndarray:
    return np.stack([k.as_array() for k in pool])


def sample_conditioning(
    pool: Sequence[FeatureVector], rng: np.random.Generator
) -> FeatureVector:
    """One conditioning vector: random-pair interpolation with uniform blend."""
    i = int(rng.integers(0, len(pool)))
    j = int(rng.integers(0, len(pool)))
    beta = float(rng.uniform(0.0, 1.0))
    return interpolate(pool[i], pool[j], beta)


def _circular_mean_half_pi(phis: np.ndarray) -> float:
    s = np.sin(2.0 * phis).mean()
    c = np.cos(2.0 * phis).mean()
    return wrap_half_pi(0.5 * math.atan2(s, c))


def evaluate_conditioning(
    model: GanModel,
    component: str,
    sweep: Sequence[float],
    samples: int,
    pool: Sequence[FeatureVector],
    seed: int = 0,
) -> ConditioningReport:
    """Measure how well generated bubbles track a swept feature component."""
    ci = component_index(component)
    kmat = _pool_matrix(pool)
    lo = float(kmat[:, ci].min())
    hi = float(kmat[:, ci].max())
    rng_range = hi - lo
    for v in sweep:
        if not (lo <= v <= hi):
            raise ValueError(
                f"off-manifold request: {component}={v} outside pool range [{lo}, {hi}]")
    if rng_range <= 0:
        raise ValueError(f"pool has no spread in component {component}")
    rng = np.random.default_rng(seed)
    cfg = model.cfg
    min_ok = max(1, samples // 10)
    points: List[SweepPoint] = []
    sq_sum = 0.0
    for v in sweep:
        conds = np.empty((samples, 4), dtype=np.float64)
        for s in range(samples):
            k = sample_conditioning(pool, rng).as_array()
            k[ci] = v
            conds[s] = k
        z = rng.standard_normal((samples, cfg.nz))
        imgs = model.generate(z, conds)
        values = []
        for s in range(samples):
            img2d = imgs[s].mean(axis=2) if cfg.channels > 1 else imgs[s, :, :, 0]
            try:
                feats = patch_features(np.asarray(img2d, dtype=np.float64))
            except ValueError:
                continue
            values.append(feats.as_array()[ci])
        n_ok = len(values)
        if n_ok >= min_ok:
            arr = np.asarray(values)
            if component == "phi":
                mean = _circular_mean_half_pi(arr)
                err = _angle_abs_err(v, mean)
            else:
                mean = float(arr.mean())
                err = abs(v - mean)
        else:
            mean = float("nan")
            err = rng_range  # maximal penalty when generation is unusable
        points.append(SweepPoint(target=float(v), measured_mean=mean,
                                 n_ok=n_ok, n_samples=samples))
        sq_sum += (err / rng_range) ** 2
    rmse = math.sqrt(sq_sum / len(sweep))
    return ConditioningReport(component=component, points=points,
                              pool_range=rng_range, rmse_normalized=rmse)


def _angle_abs_err(a: float, b: float) -> float:
    d = abs(a - b)
    return min(d, math.pi - d)


def default_sweep(pool: Sequence[FeatureVector], component: str, n_points: int = 10,
                  trim: float = 0.05) -> List[float]:
    """Evenly spaced targets spanning the pool's occupied range, lightly
    trimmed away from the extremes."""
    ci = component_index(component)
    vals = _pool_matrix(pool)[:, ci]
    lo, hi = float(vals.min()), float(vals.max())
    span = hi - lo
    return list(np.linspace(lo + trim * span, hi - trim * span, n_points))
