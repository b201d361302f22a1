"""Parametric renderer tests."""

import math

import numpy as np
import pytest

from bubforge.ccarender import CcaParams, CorpusRanges, make_corpus, render
from bubforge.features import extract_features
from bubforge.imgproc import connected_components


def test_render_m_zero_uniform_interior():
    img, mask = render(CcaParams(a=20, b=20, m=0.0, noise_sigma=0), 56)
    inner = np.hypot(*np.mgrid[0:56, 0:56][::-1] + 0.5 - 28.0) <= 17
    vals = img.data[inner]
    assert vals.std() < 1e-9
    assert vals[0] == pytest.approx(0.65)


def test_render_m_pixel_count_identity():
    # continuum identity: edge-band area fraction equals the target exactly
    img, mask = render(CcaParams(a=28, b=28, m=0.19, noise_sigma=0), 72)
    k = extract_features(img, mask)
    assert k.m == pytest.approx(0.19, abs=0.05)


def test_render_disk_symmetry():
    img, mask = render(CcaParams(a=22, b=22, m=0.3, noise_sigma=0), 60)
    k = extract_features(img, mask)
    assert k.E == pytest.approx(1.0, abs=0.02)
    assert k.psi >= 0.95


def test_render_fit_validation():
    with pytest.raises(ValueError, match="exceeds canvas"):
        render(CcaParams(a=30, b=30, m=0.0), 60)


def test_render_intensity_ordering_validation():
    with pytest.raises(ValueError):
        CcaParams(a=10, b=10, i_edge=0.7, i_in=0.6, i_bg=0.9)


def test_corpus_deterministic():
    a = make_corpus(5, seed=42, patch_side=32)
    b = make_corpus(5, seed=42, patch_side=32)
    for ra, rb in zip(a, b):
        assert np.array_equal(ra.patch.data, rb.patch.data)
        assert ra.features.as_array().tolist() == rb.features.as_array().tolist()


def test_corpus_records_are_normalized_singles():
    records = make_corpus(12, seed=3, patch_side=64)
    assert len(records) == 12
    for r in records:
        assert r.patch.data.shape == (64, 64)
        assert connected_components(r.mask, 8).count == 1
        k = extract_features(r.patch, r.mask)
        assert k.as_array() == pytest.approx(r.features.as_array())


def test_corpus_round_trip_tolerances():
    ranges = CorpusRanges(e_range=(0.62, 0.62), m_range=(0.4, 0.4),
                          diameter_range=(44.0, 44.0), wobble_amp_max=0.0,
                          noise_sigma=0.0)
    rec = make_corpus(1, seed=0, ranges=ranges, patch_side=64)[0]
    assert rec.features.E == pytest.approx(0.62, abs=0.04)
    assert rec.features.m == pytest.approx(0.4, abs=0.05)


def test_corpus_marginals_cover_ranges():
    ranges = CorpusRanges()
    records = make_corpus(1000, seed=9, ranges=ranges, patch_side=32)
    k = np.stack([r.features.as_array() for r in records])
    e_lo, e_hi = ranges.e_range
    m_lo, m_hi = ranges.m_range
    assert k[:, 0].min() <= e_lo + 0.1 * (e_hi - e_lo)
    assert k[:, 0].max() >= e_hi - 0.1 * (e_hi - e_lo)
    assert k[:, 3].min() <= m_lo + 0.1 * (m_hi - m_lo)
    assert k[:, 3].max() >= m_hi - 0.1 * (m_hi - m_lo)
    phi_span = math.pi
    assert k[:, 1].min() <= -math.pi / 2 + 0.1 * phi_span
    assert k[:, 1].max() >= math.pi / 2 - 0.1 * phi_span
