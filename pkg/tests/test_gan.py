"""GAN component tests: losses, forward contracts, gradients, training."""

import math

import numpy as np
import pytest

from bubforge.ccarender import make_corpus
from bubforge.gan import (
    GanConfig,
    GanModel,
    discriminator_loss,
    generator_loss,
    grad_check,
    load_model,
    save_model,
    tiny_config,
    train,
    zero_sum_generator_loss,
)
from bubforge.gan.losses import discriminator_loss_grads, generator_loss_grad
from bubforge.gan.train import Adam


def small_cfg(**kw):
    base = dict(side=16, channels=1, nz=8, ne=8, nd=8, base_channels=8,
                batch_size=4, epochs=1, seed=0, batchnorm=False)
    base.update(kw)
    return GanConfig(**base)


# ------------------------------------------------------------- losses

def test_d_loss_uniform_half_is_ln2():
    s = np.full(8, 0.5)
    assert discriminator_loss(s, s, s, s, "log") == pytest.approx(math.log(2), abs=1e-12)


def test_d_loss_perfect_discriminator_limit():
    y = np.full(8, 1.0)
    yhat = np.full(8, 0.0)
    val = discriminator_loss(y, yhat, yhat, yhat, "log")
    assert abs(val) < 1e-5  # clamped logs of ~1 and ~1


def test_d_loss_linear_mode_value():
    s = np.full(8, 0.5)
    expected = -0.25 + 0.5 * math.log(2)
    assert discriminator_loss(s, s, s, s, "linear") == pytest.approx(expected, abs=1e-12)


def test_g_loss_values_and_limits():
    s = np.full(8, 0.5)
    assert generator_loss(s, "non-saturating-log") == pytest.approx(math.log(2))
    assert generator_loss(s, "paper-linear") == pytest.approx(-0.25)
    ones = np.full(8, 1.0)
    assert abs(generator_loss(ones, "non-saturating-log")) < 1e-5
    assert generator_loss(ones, "paper-linear") == pytest.approx(-0.5, abs=1e-7)


@pytest.mark.parametrize("real_mode", ["log", "linear"])
def test_zero_sum_identity_machine_precision(real_mode):
    rng = np.random.default_rng(0)
    for _ in range(50):
        y, y1, y2, y3 = rng.uniform(0.01, 0.99, (4, 16))
        ld = discriminator_loss(y, y1, y2, y3, real_mode)
        lg = zero_sum_generator_loss(y, y1, y2, y3, real_mode)
        assert lg == -ld  # exact


def test_loss_grads_match_fd():
    rng = np.random.default_rng(1)
    y, y1, y2, y3 = rng.uniform(0.2, 0.8, (4, 6))
    dy, dy1, dy2, dy3 = discriminator_loss_grads(y, y1, y2, y3, "log")
    eps = 1e-7
    for vec, grad in ((y, dy), (y1, dy1), (y2, dy2), (y3, dy3)):
        i = 2
        orig = vec[i]
        vec[i] = orig + eps
        hi = discriminator_loss(y, y1, y2, y3, "log")
        vec[i] = orig - eps
        lo = discriminator_loss(y, y1, y2, y3, "log")
        vec[i] = orig
        assert (hi - lo) / (2 * eps) == pytest.approx(grad[i], rel=1e-4)
    g = generator_loss_grad(y1, "non-saturating-log")
    orig = y1[1]
    y1[1] = orig + eps
    hi = generator_loss(y1, "non-saturating-log")
    y1[1] = orig - eps
    lo = generator_loss(y1, "non-saturating-log")
    y1[1] = orig
    assert (hi - lo) / (2 * eps) == pytest.approx(g[1], rel=1e-4)


# ------------------------------------------------------------- forward

def test_generator_zero_params_outputs_half():
    cfg = small_cfg()
    model = GanModel.initialize(cfg)
    for p in model.g_params.values():
        p[...] = 0.0
    z = np.random.default_rng(0).standard_normal((3, cfg.nz))
    k = np.full((3, 4), 0.5)
    out = model.generate(z, k)
    assert np.allclose(out, 0.5)


def test_discriminator_zero_params_scores_half():
    cfg = small_cfg()
    model = GanModel.initialize(cfg)
    for p in model.d_params.values():
        p[...] = 0.0
    x = np.random.default_rng(1).uniform(0, 1, (3, cfg.side, cfg.side, 1))
    k = np.full((3, 4), 0.5)
    y, _ = model.discriminator.forward(x, k)
    assert np.allclose(y, 0.5)


def test_forward_deterministic():
    cfg = small_cfg()
    model = GanModel.initialize(cfg)
    rng = np.random.default_rng(2)
    z = rng.standard_normal((2, cfg.nz))
    k = rng.uniform(0.2, 0.8, (2, 4))
    a = model.generate(z, k)
    b = model.generate(z, k)
    assert np.array_equal(a, b)


def test_discriminator_sensitive_to_condition():
    cfg = small_cfg()
    model = GanModel.initialize(cfg, seed=3)
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 1, (2, cfg.side, cfg.side, 1))
    k1 = rng.uniform(0.2, 0.8, (2, 4))
    k2 = k1 + 0.1
    y1, _ = model.discriminator.forward(x, k1)
    y2, _ = model.discriminator.forward(x, k2)
    assert not np.allclose(y1, y2)


def test_batch_singleton_equivalence():
    cfg = small_cfg()
    model = GanModel.initialize(cfg, seed=4)
    rng = np.random.default_rng(4)
    z = rng.standard_normal((5, cfg.nz))
    k = rng.uniform(0.2, 0.8, (5, 4))
    batch = model.generate(z, k)
    for i in range(5):
        single = model.generate(z[i:i + 1], k[i:i + 1])
        assert np.allclose(batch[i], single[0], atol=1e-6)
    x = rng.uniform(0, 1, (5, cfg.side, cfg.side, 1))
    yb, _ = model.discriminator.forward(x, k)
    for i in range(5):
        ys, _ = model.discriminator.forward(x[i:i + 1], k[i:i + 1])
        assert yb[i] == pytest.approx(ys[0], abs=1e-6)


def test_forward_shape_validation():
    cfg = small_cfg()
    model = GanModel.initialize(cfg)
    with pytest.raises(ValueError):
        model.generate(np.zeros((2, cfg.nz + 1)), np.zeros((2, 4)))
    with pytest.raises(ValueError):
        model.discriminator.forward(np.zeros((2, 8, 8, 1)), np.zeros((2, 4)))


def test_output_ranges():
    cfg = small_cfg()
    model = GanModel.initialize(cfg, seed=5)
    rng = np.random.default_rng(5)
    out = model.generate(rng.standard_normal((4, cfg.nz)), rng.uniform(0.2, 0.8, (4, 4)))
    assert out.min() >= 0.0 and out.max() <= 1.0
    y, _ = model.discriminator.forward(
        rng.uniform(0, 1, (4, cfg.side, cfg.side, 1)), rng.uniform(0.2, 0.8, (4, 4)))
    assert (y > 0).all() and (y < 1).all()


# ------------------------------------------------------------- gradients

def test_grad_check_tiny_config():
    err = grad_check(seed=1)
    assert err < 1e-4


def test_grad_duplicated_sample_doubles_contribution():
    # mean-loss gradients are linear in per-sample terms
    cfg = tiny_config()
    model = GanModel.initialize(cfg, seed=6)
    rng = np.random.default_rng(6)
    x1 = rng.uniform(0.2, 0.8, (1, cfg.side, cfg.side, 1))
    k1 = rng.uniform(0.3, 0.9, (1, 4))
    disc = model.discriminator

    def d_grads(x, k):
        y, cache = disc.forward(x, k)
        n = y.shape[0]
        dy = -1.0 / (n * np.clip(y, 1e-7, 1 - 1e-7))
        return disc.backward(cache, dy)[0]

    g_single = d_grads(x1, k1)
    g_double = d_grads(np.repeat(x1, 2, axis=0), np.repeat(k1, 2, axis=0))
    for name in g_single:
        assert np.allclose(g_single[name], g_double[name], atol=1e-10)


def test_zero_loss_point_zero_gradient():
    cfg = tiny_config()
    model = GanModel.initialize(cfg, seed=7)
    rng = np.random.default_rng(7)
    x = rng.uniform(0.2, 0.8, (2, cfg.side, cfg.side, 1))
    k = rng.uniform(0.3, 0.9, (2, 4))
    y, cache = model.discriminator.forward(x, k)
    grads, _ = model.discriminator.backward(cache, np.zeros_like(y))
    for g in grads.values():
        assert np.allclose(g, 0.0)


# ------------------------------------------------------------- training

@pytest.fixture(scope="module")
def mini_corpus():
    return make_corpus(3 * 16, seed=21, patch_side=16)


def test_train_zero_epochs_keeps_init(mini_corpus):
    cfg = small_cfg(epochs=0, batch_size=16)
    model = train(mini_corpus, cfg)
    init = GanModel.initialize(cfg)
    for name in init.g_params:
        assert np.array_equal(model.g_params[name], init.g_params[name])


def test_train_deterministic(mini_corpus):
    cfg = small_cfg(epochs=1, batch_size=16)
    m1 = train(mini_corpus, cfg)
    m2 = train(mini_corpus, cfg)
    for name in m1.g_params:
        assert np.array_equal(m1.g_params[name], m2.g_params[name])
    for name in m1.d_params:
        assert np.array_equal(m1.d_params[name], m2.d_params[name])


def test_train_corpus_size_validation(mini_corpus):
    with pytest.raises(ValueError, match="two batches"):
        train(mini_corpus[:8], small_cfg(batch_size=16))


def test_descent_property():
    # one discriminator step at small lr must reduce L(D) when real scores
    # start below fake ones
    cfg = small_cfg(batch_size=8, lr=1e-5)
    model = GanModel.initialize(cfg, seed=8)
    rng = np.random.default_rng(8)
    x = rng.uniform(0, 1, (8, cfg.side, cfg.side, 1))
    xhat = rng.uniform(0, 1, (8, cfg.side, cfg.side, 1))
    k1, k2, k3 = (rng.uniform(0.3, 0.9, (8, 4)) for _ in range(3))
    disc = model.discriminator

    def loss():
        y, _ = disc.forward(x, k1)
        y1, _ = disc.forward(xhat, k2)
        y2, _ = disc.forward(xhat, k3)
        y3, _ = disc.forward(x, k2)
        return discriminator_loss(y, y1, y2, y3)

    y, cy = disc.forward(x, k1)
    y1, c1 = disc.forward(xhat, k2)
    y2, c2 = disc.forward(xhat, k3)
    y3, c3 = disc.forward(x, k2)
    before = discriminator_loss(y, y1, y2, y3)
    dy, dy1, dy2, dy3 = discriminator_loss_grads(y, y1, y2, y3)
    grads = disc.backward(cy, dy)[0]
    for cache, ds in ((c1, dy1), (c2, dy2), (c3, dy3)):
        for name, g in disc.backward(cache, ds)[0].items():
            grads[name] += g
    Adam(model.d_params, cfg.lr, cfg.beta1, cfg.beta2).step(model.d_params, grads)
    assert loss() < before


def test_train_emits_telemetry(mini_corpus):
    seen = []
    cfg = small_cfg(epochs=2, batch_size=16)
    train(mini_corpus, cfg, callback=seen.append)
    assert [s.epoch for s in seen] == [0, 1]
    assert all(math.isfinite(s.loss_d) and math.isfinite(s.loss_g) for s in seen)


# ------------------------------------------------------------- container

def test_model_save_load_round_trip(tmp_path, mini_corpus):
    cfg = small_cfg(epochs=1, batch_size=16, batchnorm=True)
    model = train(mini_corpus, cfg)
    path = tmp_path / "m.bgm"
    save_model(model, path)
    back = load_model(path)
    assert back.cfg.to_dict() == model.cfg.to_dict()
    for name in model.g_params:
        assert np.array_equal(back.g_params[name],
                              model.g_params[name].astype(np.float32))
    assert back.opt_g is not None and back.opt_g.t == model.opt_g.t
    # save -> load -> save is byte-stable
    path2 = tmp_path / "m2.bgm"
    save_model(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_model_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.bgm"
    p.write_bytes(b"NOTAMODEL" + bytes(64))
    with pytest.raises(ValueError, match="magic"):
        load_model(p)


def test_model_rejects_truncation(tmp_path, mini_corpus):
    cfg = small_cfg(epochs=0, batch_size=16)
    model = train(mini_corpus, cfg)
    p = tmp_path / "m.bgm"
    save_model(model, p)
    data = p.read_bytes()
    p.write_bytes(data[:len(data) // 2])
    with pytest.raises(ValueError, match="truncated"):
        load_model(p)


def test_model_rejects_unknown_version(tmp_path, mini_corpus):
    cfg = small_cfg(epochs=0, batch_size=16)
    model = train(mini_corpus, cfg)
    p = tmp_path / "m.bgm"
    save_model(model, p)
    data = bytearray(p.read_bytes())
    data[7] = 99  # version field follows the 7-byte magic
    p.write_bytes(bytes(data))
    with pytest.raises(ValueError, match="version"):
        load_model(p)
