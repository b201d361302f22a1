"""CLI behavior: subcommands, exit codes, reproducibility."""

import json

import numpy as np
import pytest

from bubforge import bubdb
from bubforge.cli import main
from bubforge.netpbm import write_pgm


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    rc = main(["corpus", "--n", "48", "--size", "32", "--seed", "4",
               "--out", str(d / "corpus.bdb")])
    assert rc == 0
    rc = main(["train", "--corpus", str(d / "corpus.bdb"), "--epochs", "1",
               "--seed", "0", "--out", str(d / "model.bgm"),
               "--config", str(_write_cfg(d))])
    assert rc == 0
    return d


def _write_cfg(d):
    p = d / "train.json"
    p.write_text(json.dumps({
        "side": 32, "batch_size": 16, "base_channels": 16, "nz": 16,
        "ne": 16, "nd": 16, "epochs": 1, "batchnorm": True,
    }))
    return p


def _write_flow(d, **kw):
    flow = {
        "width_px": 200, "height_px": 160, "resolution_px_per_mm": 8.0,
        "channel_left_mm": 0.0, "channel_right_mm": 25.0, "count": 6,
        "median_diameter_mm": 2.0, "log_sigma": 0.2, "profile": "uniform",
        "seed": 3,
    }
    flow.update(kw)
    p = d / "flow.json"
    p.write_text(json.dumps(flow))
    return p


def test_corpus_output_valid(workdir):
    db = bubdb.load(workdir / "corpus.bdb")
    assert len(db) == 48
    assert db.training_corpus


def test_unknown_subcommand_exit_1():
    assert main(["frobnicate"]) == 1


def test_gradcheck_passes(capsys):
    rc = main(["gradcheck", "--seed", "1"])
    out = json.loads(capsys.readouterr().out)
    assert rc == 0
    assert out["pass"] is True
    assert out["max_relative_error"] < 1e-4


def test_synth_deterministic(workdir, capsys):
    flow = _write_flow(workdir)
    for sub in ("a", "b"):
        rc = main(["synth", "--flow", str(flow), "--db", str(workdir / "corpus.bdb"),
                   "--count", "2", "--seed", "7", "--out", str(workdir / sub)])
        assert rc == 0
    capsys.readouterr()
    for scene in ("scene_000", "scene_001"):
        for name in ("image.pgm", "labels.csv", "density.pgm", "meta.json"):
            a = (workdir / "a" / scene / name).read_bytes()
            b = (workdir / "b" / scene / name).read_bytes()
            assert a == b, f"{scene}/{name} differs between runs"


def test_synth_threads_match_sequential(workdir, capsys):
    flow = _write_flow(workdir)
    rc = main(["--threads", "2", "synth", "--flow", str(flow),
               "--db", str(workdir / "corpus.bdb"),
               "--count", "2", "--seed", "7", "--out", str(workdir / "par")])
    capsys.readouterr()
    assert rc == 0
    for scene in ("scene_000", "scene_001"):
        a = (workdir / "a" / scene / "image.pgm").read_bytes()
        b = (workdir / "par" / scene / "image.pgm").read_bytes()
        assert a == b


def test_features_subcommand(workdir, capsys, tmp_path):
    from bubforge.ccarender import CcaParams, render
    img, _ = render(CcaParams(a=14, b=10, phi=0.5, m=0.3, noise_sigma=0), 40)
    path = tmp_path / "bub.pgm"
    write_pgm(img, path)
    rc = main(["features", "--image", str(path)])
    out = json.loads(capsys.readouterr().out)
    assert rc == 0
    assert set(out) == {"E", "phi", "psi", "m"}
    assert out["E"] == pytest.approx(10 / 14, abs=0.05)


def test_eval_reports_sweep(workdir, capsys):
    rc = main(["eval", "--model", str(workdir / "model.bgm"),
               "--pool", str(workdir / "corpus.bdb"),
               "--sweep", "m", "--points", "4", "--samples", "8", "--json"])
    out = json.loads(capsys.readouterr().out)
    assert rc == 0
    rep = out["report"]["m"]
    assert len(rep["points"]) == 4
    assert rep["rmse_normalized"] >= 0.0


def test_missing_file_exit_1(workdir, capsys):
    rc = main(["train", "--corpus", str(workdir / "nope.bdb"),
               "--out", str(workdir / "x.bgm")])
    capsys.readouterr()
    assert rc == 1


def test_invalid_flow_exit_1(workdir, capsys, tmp_path):
    bad = tmp_path / "bad_flow.json"
    bad.write_text(json.dumps({"width_px": 100, "height_px": 100,
                               "resolution_px_per_mm": 1.0,
                               "channel_left_mm": 0.0, "channel_right_mm": 500.0,
                               "count": 1}))
    rc = main(["synth", "--flow", str(bad), "--db", str(workdir / "corpus.bdb"),
               "--out", str(tmp_path / "o")])
    capsys.readouterr()
    assert rc == 1
