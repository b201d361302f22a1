"""PGM/PBM codec tests."""

import numpy as np
import pytest

from bubforge.imgproc import BitMask, Raster
from bubforge.netpbm import read_pbm, read_pgm, write_pbm, write_pgm


def test_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    img = Raster(rng.integers(0, 256, (13, 17)).astype(np.float64) / 255.0)
    path = tmp_path / "img.pgm"
    write_pgm(img, path)
    back = read_pgm(path)
    assert np.array_equal(back.data, img.data)


def test_pgm_header_with_comment(tmp_path):
    path = tmp_path / "c.pgm"
    body = bytes(range(6))
    path.write_bytes(b"P5\n# a comment\n3 2\n255\n" + body)
    img = read_pgm(path)
    assert img.width == 3 and img.height == 2
    assert img.data[1, 2] == pytest.approx(5 / 255)


def test_pgm_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P2\n2 2\n255\n1 2 3 4\n")
    with pytest.raises(ValueError, match="P5"):
        read_pgm(path)


def test_pgm_rejects_truncation(tmp_path):
    path = tmp_path / "short.pgm"
    path.write_bytes(b"P5\n4 4\n255\n" + bytes(7))
    with pytest.raises(ValueError, match="expected 16"):
        read_pgm(path)


def test_pgm_rejects_16bit(tmp_path):
    path = tmp_path / "deep.pgm"
    path.write_bytes(b"P5\n1 1\n65535\n\0\1")
    with pytest.raises(ValueError, match="maxval"):
        read_pgm(path)


def test_pbm_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    for w in (8, 13, 1):
        mask = BitMask(rng.random((5, w)) < 0.5)
        path = tmp_path / f"m{w}.pbm"
        write_pbm(mask, path)
        back = read_pbm(path)
        assert np.array_equal(back.data, mask.data)


def test_pbm_rejects_truncation(tmp_path):
    path = tmp_path / "short.pbm"
    path.write_bytes(b"P4\n16 4\n" + bytes(3))
    with pytest.raises(ValueError, match="expected 8"):
        read_pbm(path)
