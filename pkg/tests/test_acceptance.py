"""Acceptance gates.

One test per criterion; each prints a single PASS/FAIL line (run with -s to
watch them live). The desk-scale model trains once per session and is shared
by the conditioning, interpolation, database and assembly criteria.
"""

import json
import math
import time

import numpy as np
import pytest

from bubforge import bubdb
from bubforge.assembler import (
    FlowSpec,
    _scaled_patch,
    export,
    paint,
    place_with_boundary,
    read_labels_csv,
    sample_bubble_list,
    synthesize,
)
from bubforge.ccarender import CcaParams, CorpusRanges, make_corpus, render
from bubforge.features import angle_distance, extract_features, interpolate
from bubforge.gan import (
    GanConfig,
    GanModel,
    discriminator_loss,
    evaluate_conditioning,
    grad_check,
    load_model,
    save_model,
    train,
    zero_sum_generator_loss,
)
from bubforge.gan.evaluate import default_sweep, patch_features
from bubforge.imgproc import BitMask, Raster
from bubforge.patchpipe import Patch, classify

# Desk-scale training setup: 2000 renders at side 32, within the 30-epoch
# cap. Corpus ranges keep aspect and circularity only weakly coupled so
# every component's conditioning is measurable.
DESK_RANGES = CorpusRanges(e_range=(0.55, 1.0), wobble_amp_max=0.15)
DESK_CORPUS_N = 2000
DESK_CFG = dict(side=32, epochs=30, seed=3, batch_size=16,
                base_channels=96, ne=96, nd=192)


def report(criterion: str, ok: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{criterion}: {detail}"


@pytest.fixture(scope="session")
def desk_corpus():
    return make_corpus(DESK_CORPUS_N, seed=11, ranges=DESK_RANGES, patch_side=32)


@pytest.fixture(scope="session")
def desk_pool(desk_corpus):
    return [r.features for r in desk_corpus]


@pytest.fixture(scope="session")
def desk_model(desk_corpus):
    cfg = GanConfig(**DESK_CFG)
    t0 = time.time()
    model = train(desk_corpus, cfg)
    train_minutes = (time.time() - t0) / 60.0
    model._train_minutes = train_minutes
    return model


@pytest.fixture(scope="session")
def db1000(desk_model, desk_pool):
    return bubdb.build(desk_model, 1000, desk_pool, seed=17)


# --------------------------------------------------------------------- 1

def test_criterion_1_gradient_fidelity():
    t0 = time.time()
    err = grad_check(seed=1)
    dt = time.time() - t0
    ok = err < 1e-4 and dt < 30.0
    report("1 gradient fidelity",
           ok, f"max rel err {err:.2e} < 1e-4, runtime {dt:.1f}s < 30s")


# --------------------------------------------------------------------- 2

def test_criterion_2_loss_identities():
    s = np.full(64, 0.5)
    ln2_err = abs(discriminator_loss(s, s, s, s, "log") - math.log(2))
    rng = np.random.default_rng(0)
    exact = True
    for _ in range(200):
        y, y1, y2, y3 = rng.uniform(0.01, 0.99, (4, 32))
        for mode in ("log", "linear"):
            ld = discriminator_loss(y, y1, y2, y3, mode)
            lg = zero_sum_generator_loss(y, y1, y2, y3, mode)
            if lg != -ld:
                exact = False
    ok = ln2_err < 1e-9 and exact
    report("2 loss identities",
           ok, f"|L(0.5)-ln2| = {ln2_err:.2e}, zero-sum exact: {exact}")


# --------------------------------------------------------------------- 3

def test_criterion_3_feature_extraction_oracle():
    t0 = time.time()
    rng = np.random.default_rng(33)
    n = 500
    de, dphi, dm = [], [], []
    for _ in range(n):
        d = rng.uniform(32, 100)
        e = rng.uniform(0.4, 0.95)
        phi = rng.uniform(-math.pi / 2 + 1e-6, math.pi / 2)
        m = rng.uniform(0.1, 0.8)
        a = d / (2 * math.sqrt(e))
        b = 0.5 * d * math.sqrt(e)
        params = CcaParams(a=a, b=b, phi=phi, m=m, noise_sigma=0.0)
        size = int(math.ceil(2 * params.max_extent() / 0.9)) + 4
        img, mask = render(params, size)
        k = extract_features(img, mask)
        de.append(abs(k.E - e))
        dphi.append(angle_distance(k.phi, phi) * (math.pi / 2))
        dm.append(abs(k.m - m))
    psis = []
    for r in (16, 25, 40, 50):
        img, mask = render(CcaParams(a=r, b=r, m=0.0, noise_sigma=0.0),
                           int(2.3 * r) + 6)
        psis.append(extract_features(img, mask).psi)
    dt = time.time() - t0
    me, mphi, mm = np.mean(de), np.mean(dphi), np.mean(dm)
    ok = (me <= 0.03 and mphi <= math.radians(3) and mm <= 0.05
          and all(0.95 <= p <= 1.0 for p in psis) and dt < 60.0)
    report("3 feature extraction",
           ok, f"mean |dE| {me:.4f} <= 0.03, mean dphi {math.degrees(mphi):.2f} deg <= 3, "
               f"mean |dm| {mm:.4f} <= 0.05, disk psi {min(psis):.3f}..{max(psis):.3f} "
               f"in [0.95, 1], runtime {dt:.0f}s < 60s")


# --------------------------------------------------------------------- 4

def test_criterion_4_conditioning_desk_scale(desk_model, desk_pool):
    untrained = GanModel.initialize(GanConfig(**DESK_CFG))
    rmse, rmse0 = {}, {}
    for comp in ("E", "phi", "psi", "m"):
        sweep = default_sweep(desk_pool, comp, 10)
        rmse[comp] = evaluate_conditioning(
            desk_model, comp, sweep, 100, desk_pool, seed=5).rmse_normalized
        rmse0[comp] = evaluate_conditioning(
            untrained, comp, sweep, 100, desk_pool, seed=5).rmse_normalized
    ratios = {c: rmse[c] / max(rmse0[c], 1e-12) for c in rmse}
    ok = (rmse["E"] <= 0.10 and rmse["m"] <= 0.10 and rmse["phi"] <= 0.15
          and all(r < 1 / 3 for r in ratios.values())
          and desk_model._train_minutes < 45.0)
    detail = (f"train {desk_model._train_minutes:.1f} min < 45; RMSE "
              + ", ".join(f"{c}={rmse[c]:.3f}" for c in rmse)
              + "; trained/untrained "
              + ", ".join(f"{c}={ratios[c]:.2f}" for c in ratios))
    report("4 conditioning", ok, detail)


# --------------------------------------------------------------------- 5

def test_criterion_5_interpolation_tracking(desk_model, desk_pool):
    kmat = np.stack([k.as_array() for k in desk_pool])
    ranges = kmat.max(axis=0) - kmat.min(axis=0)
    ranges[1] = math.pi / 2  # angle errors are wrap-normalized by pi/2
    rng = np.random.default_rng(55)
    # a deterministic, well-separated pair of corpus vectors
    i = int(np.argmin(kmat[:, 0]))
    j = int(np.argmax(kmat[:, 0]))
    ki, kj = desk_pool[i], desk_pool[j]
    cfg = desk_model.cfg
    worst = 0.0
    detail_parts = []
    for beta in (0.0, 0.3, 0.5, 0.7, 1.0):
        target = interpolate(ki, kj, beta)
        conds = np.tile(target.as_array(), (100, 1))
        z = rng.standard_normal((100, cfg.nz))
        imgs = desk_model.generate(z, conds)
        vals = []
        for s in range(100):
            try:
                vals.append(patch_features(
                    np.asarray(imgs[s, :, :, 0], dtype=np.float64)).as_array())
            except ValueError:
                continue
        vals = np.stack(vals)
        tgt = target.as_array()
        mean = vals.mean(axis=0)
        sin2 = np.sin(2 * vals[:, 1]).mean()
        cos2 = np.cos(2 * vals[:, 1]).mean()
        mean_phi = 0.5 * math.atan2(sin2, cos2)
        errs = np.empty(4)
        errs[0] = abs(mean[0] - tgt[0]) / ranges[0]
        errs[1] = angle_distance(mean_phi, tgt[1])  # already /(pi/2)
        errs[2] = abs(mean[2] - tgt[2]) / ranges[2]
        errs[3] = abs(mean[3] - tgt[3]) / ranges[3]
        worst = max(worst, float(errs.max()))
        detail_parts.append(f"beta={beta}: max {errs.max():.3f}")
    ok = worst <= 0.12
    report("5 interpolation", ok,
           f"worst normalized deviation {worst:.3f} <= 0.12 ({'; '.join(detail_parts)})")


# --------------------------------------------------------------------- 6

def test_criterion_6_database_exactness(db1000, tmp_path):
    rng = np.random.default_rng(66)
    agree = 0
    for _ in range(100):
        target = bubdb.FeatureVector(
            E=float(rng.uniform(0.2, 1.0)),
            phi=float(rng.uniform(-math.pi / 2 + 1e-9, math.pi / 2)),
            psi=float(rng.uniform(0.2, 1.0)),
            m=float(rng.uniform(0.0, 1.0)))
        w = rng.uniform(0, 2, 4)
        if rng.random() < 0.25:
            w[rng.integers(0, 4)] = 0.0
        if bubdb.query_nearest(db1000, target, w) == bubdb.query_nearest_scan(
                db1000, target, w):
            agree += 1
    p1 = tmp_path / "db.bdb"
    p2 = tmp_path / "db2.bdb"
    bubdb.save(db1000, p1)
    back = bubdb.load(p1)
    bubdb.save(back, p2)
    byte_exact = p1.read_bytes() == p2.read_bytes()
    ok = agree == 100 and byte_exact
    report("6 database exactness",
           ok, f"tree==scan {agree}/100, round trip byte-exact: {byte_exact}")


# --------------------------------------------------------------------- 7

def _lens_area(r1, r2, d):
    if d >= r1 + r2:
        return 0.0
    if d <= abs(r1 - r2):
        return math.pi * min(r1, r2) ** 2
    a1 = r1 * r1 * math.acos((d * d + r1 * r1 - r2 * r2) / (2 * d * r1))
    a2 = r2 * r2 * math.acos((d * d + r2 * r2 - r1 * r1) / (2 * d * r2))
    a3 = 0.5 * math.sqrt((-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2))
    return a1 + a2 - a3


def _pair_distance(r1, r2, frac):
    lo, hi = abs(r1 - r2) + 1e-6, r1 + r2 - 1e-6
    target = frac * math.pi * min(r1, r2) ** 2
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _lens_area(r1, r2, mid) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _render_single_fixture(rng):
    d = rng.uniform(24, 100)
    e = rng.uniform(0.5, 1.0)
    wob = [(rng.uniform(0, 0.08), rng.uniform(0, 2 * math.pi)) for _ in range(4)]
    p = CcaParams(a=d / (2 * math.sqrt(e)), b=0.5 * d * math.sqrt(e),
                  phi=rng.uniform(-1.5, 1.5), m=rng.uniform(0.1, 0.8),
                  wobble=wob, noise_sigma=0.015)
    size = int(math.ceil(2 * p.max_extent() / 0.9)) + 10
    img, mask = render(p, size, rng)
    return Patch(image=img, mask=mask, origin=(0, 0))


def _render_cluster_fixture(rng):
    r1 = rng.uniform(15, 40)
    r2 = r1 * rng.uniform(0.75, 1.0)
    frac = rng.uniform(0.10, 0.40)
    d = _pair_distance(r1, r2, frac)
    ang = rng.uniform(0, 2 * math.pi)
    size = int(2 * (r1 + r2 + d) + 20)

    def bubble(r):
        e = rng.uniform(0.8, 1.0)
        wob = [(rng.uniform(0, 0.04), rng.uniform(0, 2 * math.pi)) for _ in range(4)]
        return CcaParams(a=r / math.sqrt(e), b=r * math.sqrt(e),
                         phi=rng.uniform(-1.5, 1.5), m=rng.uniform(0.1, 0.8),
                         wobble=wob, noise_sigma=0.015)

    i1, m1 = render(bubble(r1), size, rng)
    i2, m2 = render(bubble(r2), size, rng)
    sx = int(round(d * math.cos(ang)))
    sy = int(round(d * math.sin(ang)))
    i2d = np.roll(np.roll(i2.data, sy, axis=0), sx, axis=1)
    m2d = np.roll(np.roll(m2.data, sy, axis=0), sx, axis=1)
    return Patch(image=Raster(np.minimum(i1.data, i2d)),
                 mask=BitMask(m1.data | m2d), origin=(0, 0))


def test_criterion_7_patch_pipeline():
    rng = np.random.default_rng(77)
    singles = [_render_single_fixture(rng) for _ in range(200)]
    clusters = [_render_cluster_fixture(rng) for _ in range(200)]
    v_singles = [classify(p) for p in singles]
    v_clusters = [classify(p) for p in clusters]
    n_single_ok = sum(v.single for v in v_singles)
    n_cluster_ok = sum(v.is_cluster for v in v_clusters)
    deterministic = all(classify(p) == v for p, v in
                        list(zip(singles, v_singles))[:20] +
                        list(zip(clusters, v_clusters))[:20])
    ok = n_single_ok >= 196 and n_cluster_ok >= 170 and deterministic
    report("7 patch pipeline",
           ok, f"singles {n_single_ok}/200 >= 196 (98%), "
               f"clusters {n_cluster_ok}/200 >= 170 (85%), "
               f"verdicts deterministic: {deterministic}")


# --------------------------------------------------------------------- 8

def test_criterion_8_assembly_invariants(db1000):
    rng = np.random.default_rng(88)
    wall_violations = 0
    integral_err = 0.0
    for i in range(100):
        spec = FlowSpec(width_px=260, height_px=200, resolution_px_per_mm=8.0,
                        channel_left_mm=2.0, channel_right_mm=30.0,
                        count=int(rng.integers(5, 25)),
                        median_diameter_mm=1.8, log_sigma=0.25,
                        profile=("uniform", "center", "double", "side")[i % 4],
                        seed=1000 + i)
        img, labels, dmap = synthesize(spec, db1000)
        fg = img.data < spec.background - 0.05
        left = int(math.floor(spec.wall_left_px))
        right = int(math.ceil(spec.wall_right_px))
        wall_violations += int(fg[:, :left].sum() + fg[:, right:].sum())
        integral_err = max(integral_err, abs(dmap.sum() - labels.achieved_count))

    # painting permutation invariance, byte-exact
    spec = FlowSpec(width_px=260, height_px=200, resolution_px_per_mm=8.0,
                    channel_left_mm=2.0, channel_right_mm=30.0, count=20,
                    median_diameter_mm=1.8, log_sigma=0.25, seed=4242)
    insts = sample_bubble_list(spec, db1000)
    prepared = []
    for inst in insts:
        patch = _scaled_patch(db1000, inst)
        prepared.append((place_with_boundary(inst, spec), patch))
    c1 = np.full((spec.height_px, spec.width_px), spec.background)
    c2 = c1.copy()
    for inst, patch in prepared:
        paint(c1, patch, inst)
    for j in np.random.default_rng(0).permutation(len(prepared)):
        inst, patch = prepared[j]
        paint(c2, patch, inst)
    perm_ok = np.array_equal(c1, c2)

    tv_ok = True
    tv_detail = []
    from test_assembler import tv_distance_to_profile
    for profile in ("uniform", "center", "double", "side"):
        spec = FlowSpec(width_px=260, height_px=200, resolution_px_per_mm=8.0,
                        channel_left_mm=2.0, channel_right_mm=30.0, count=2500,
                        median_diameter_mm=1.8, log_sigma=0.25,
                        profile=profile, seed=99)
        xs = np.array([b.center[0] for b in sample_bubble_list(spec, db1000)])
        tv = tv_distance_to_profile(spec, xs)
        tv_detail.append(f"{profile}={tv:.3f}")
        tv_ok &= tv <= 0.08
    ok = wall_violations == 0 and integral_err < 1e-6 and perm_ok and tv_ok
    report("8 assembly invariants",
           ok, f"wall violations {wall_violations}, density integral err "
               f"{integral_err:.1e} < 1e-6, permutation byte-exact {perm_ok}, "
               f"TV {', '.join(tv_detail)} (<= 0.08)")


# --------------------------------------------------------------------- 9

def _pipeline_once(tmp_path, tag):
    out = tmp_path / tag
    out.mkdir()
    corpus = make_corpus(300, seed=2, patch_side=32)
    cfg = GanConfig(side=32, epochs=8, seed=1, batch_size=16,
                    base_channels=32, ne=32, nd=64)
    model = train(corpus, cfg)
    save_model(model, out / "model.bgm")
    pool = [r.features for r in corpus]
    db = bubdb.build(load_model(out / "model.bgm"), 60, pool, seed=3)
    bubdb.save(db, out / "db.bdb")
    spec = FlowSpec(width_px=220, height_px=170, resolution_px_per_mm=8.0,
                    channel_left_mm=0.0, channel_right_mm=27.0, count=10,
                    median_diameter_mm=1.6, log_sigma=0.2, seed=7)
    img, labels, dmap = synthesize(spec, bubdb.load(out / "db.bdb"))
    return export(img, labels, dmap, out / "scene")


def test_criterion_9_end_to_end_determinism(tmp_path):
    a = _pipeline_once(tmp_path, "run_a")
    b = _pipeline_once(tmp_path, "run_b")
    same = {key: (open(a[key], "rb").read() == open(b[key], "rb").read())
            for key in a}
    ok = all(same.values())
    report("9 end-to-end determinism",
           ok, "byte-identical outputs: " + ", ".join(f"{k}={v}" for k, v in same.items()))


# --------------------------------------------------------------------- 10

def test_criterion_10_format_conformance(desk_corpus, tmp_path):
    db = bubdb.from_training_records(desk_corpus[:50], seed=1)
    p1 = tmp_path / "c.bdb"
    bubdb.save(db, p1)
    p2 = tmp_path / "c2.bdb"
    bubdb.save(bubdb.load(p1), p2)
    db_exact = p1.read_bytes() == p2.read_bytes()

    cfg = GanConfig(side=16, nz=8, ne=8, nd=8, base_channels=8,
                    batch_size=4, epochs=0, batchnorm=True)
    model = GanModel.initialize(cfg)
    m1 = tmp_path / "m.bgm"
    save_model(model, m1)
    m2 = tmp_path / "m2.bgm"
    save_model(load_model(m1), m2)
    model_exact = m1.read_bytes() == m2.read_bytes()

    rejects = []
    for path, loader in ((p1, bubdb.load), (m1, load_model)):
        data = path.read_bytes()
        trunc = tmp_path / (path.name + ".trunc")
        trunc.write_bytes(data[:len(data) // 3])
        try:
            loader(trunc)
            rejects.append(False)
        except ValueError as e:
            rejects.append(len(str(e)) > 10)
        corrupt = tmp_path / (path.name + ".corrupt")
        corrupt.write_bytes(b"XX" + data[2:])
        try:
            loader(corrupt)
            rejects.append(False)
        except ValueError:
            rejects.append(True)
    ok = db_exact and model_exact and all(rejects)
    report("10 format conformance",
           ok, f"bdb byte-exact {db_exact}, bgm byte-exact {model_exact}, "
               f"rejects {sum(rejects)}/4 with diagnostics")
