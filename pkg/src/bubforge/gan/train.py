"""Adversarial training loop and finite-difference gradient verification.

Each minibatch performs one discriminator update on the true pair plus the
three false pairs, then one generator update through the frozen
discriminator. Everything is driven by a single seeded RNG, so training is
a pure function of (corpus, config, seed) in the default single-threaded
mode.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .losses import (
    discriminator_loss,
    discriminator_loss_grads,
    generator_loss,
    generator_loss_grad,
)
from .model import AdamState, GanConfig, GanModel

log = logging.getLogger(__name__)


class Adam:
    """Adaptive-moment optimizer over a name->array parameter dict."""

    def __init__(self, params: Dict[str, np.ndarray], lr: float,
                 beta1: float, beta2: float, eps: float = 1e-8,
                 state: Optional[AdamState] = None):
        self.lr = lr
        self.b1 = beta1
        self.b2 = beta2
        self.eps = eps
        if state is None:
            state = AdamState(
                m={k: np.zeros_like(v) for k, v in params.items()},
                v={k: np.zeros_like(v) for k, v in params.items()},
                t=0,
            )
        self.state = state

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]):
        st = self.state
        st.t += 1
        bc1 = 1.0 - self.b1 ** st.t
        bc2 = 1.0 - self.b2 ** st.t
        for name, g in grads.items():
            p = params[name]
            m = st.m[name]
            v = st.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            p -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)


@dataclass
class EpochStats:
    epoch: int
    loss_d: float
    loss_g: float


def _draw_foreign(rng: np.random.Generator, n_total: int, own: np.ndarray) -> np.ndarray:
    """Uniform record indices, re-drawn where they collide with `own`."""
    idx = rng.integers(0, n_total, size=own.shape[0])
    while True:
        clash = idx == own
        if not clash.any():
            return idx
        idx[clash] = rng.integers(0, n_total, size=int(clash.sum()))


def corpus_arrays(records: Sequence, cfg: GanConfig):
    """Stack training records into (N,s,s,c) images and (N,4) features."""
    n = len(records)
    x = np.empty((n, cfg.side, cfg.side, cfg.channels), dtype=cfg.np_dtype)
    k = np.empty((n, 4), dtype=cfg.np_dtype)
    for i, r in enumerate(records):
        img = r.patch.data
        if img.shape != (cfg.side, cfg.side):
            raise ValueError(
                f"record {i} is {img.shape}, config expects {(cfg.side, cfg.side)}")
        x[i] = img[:, :, None]  # channel replication for c > 1
        k[i] = r.features.as_array()
    return x, k


def train(
    records: Sequence,
    cfg: GanConfig,
    callback: Optional[Callable[[EpochStats], None]] = None,
) -> GanModel:
    """Train a conditioned generator/discriminator pair on single-bubble
    records; deterministic per (records, cfg, seed)."""
    if len(records) < 2 * cfg.batch_size:
        raise ValueError("corpus must hold at least two batches")
    # one compute thread end to end: the small per-layer workloads lose more
    # to pool wakeups and spin contention than they gain from BLAS threads
    with threadpool_limits(limits=1):
        return _train_inner(records, cfg, callback)


def _train_inner(records, cfg, callback):
    x_all, k_all = corpus_arrays(records, cfg)
    n_total = len(records)
    model = GanModel.initialize(cfg)
    gen = model.generator
    disc = model.discriminator
    adam_d = Adam(model.d_params, cfg.lr, cfg.beta1, cfg.beta2)
    adam_g = Adam(model.g_params, cfg.lr, cfg.beta1, cfg.beta2)
    rng = np.random.default_rng(cfg.seed)
    nb = n_total // cfg.batch_size
    history: List[EpochStats] = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n_total)
        ld_sum = lg_sum = 0.0
        for b in range(nb):
            own = perm[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            x = x_all[own]
            k1 = k_all[own]
            k2 = k_all[_draw_foreign(rng, n_total, own)]
            k3 = k_all[_draw_foreign(rng, n_total, own)]
            z = rng.standard_normal((cfg.batch_size, cfg.nz)).astype(cfg.np_dtype)

            # discriminator step: true pair + three false pairs
            xhat, _ = gen.forward(z, k2, train=True)
            y, cy = disc.forward(x, k1)
            y1, c1 = disc.forward(xhat, k2)
            y2, c2 = disc.forward(xhat, k3)
            y3, c3 = disc.forward(x, k2)
            loss_d = discriminator_loss(y, y1, y2, y3, cfg.real_term_mode)
            dy, dy1, dy2, dy3 = discriminator_loss_grads(y, y1, y2, y3, cfg.real_term_mode)
            grads_d = disc.backward(cy, dy)[0]
            for cache, dscore in ((c1, dy1), (c2, dy2), (c3, dy3)):
                for name, g in disc.backward(cache, dscore)[0].items():
                    grads_d[name] += g
            adam_d.step(model.d_params, grads_d)

            # generator step through the updated, frozen discriminator
            xhat, gcache = gen.forward(z, k2, train=True)
            y1g, cg = disc.forward(xhat, k2)
            loss_g = generator_loss(y1g, cfg.gen_loss_mode)
            dy1g = generator_loss_grad(y1g, cfg.gen_loss_mode)
            _, dxhat = disc.backward(cg, dy1g, need_dx=True)
            grads_g = gen.backward(gcache, dxhat)
            adam_g.step(model.g_params, grads_g)

            if not (math.isfinite(loss_d) and math.isfinite(loss_g)):
                raise RuntimeError(
                    f"training diverged at epoch {epoch} step {b}: "
                    f"loss_d={loss_d} loss_g={loss_g}")
            ld_sum += loss_d
            lg_sum += loss_g
        stats = EpochStats(epoch=epoch, loss_d=ld_sum / nb, loss_g=lg_sum / nb)
        history.append(stats)
        log.info("epoch %d: loss_d=%.4f loss_g=%.4f", epoch, stats.loss_d, stats.loss_g)
        if callback is not None:
            callback(stats)
    model.opt_d = adam_d.state
    model.opt_g = adam_g.state
    return model


def tiny_config(seed: int = 0) -> GanConfig:
    """64-bit miniature configuration for finite-difference verification."""
    return GanConfig(
        side=8, channels=1, nz=8, ne=8, nd=8, base_channels=8,
        batch_size=2, batchnorm=False, dtype="float64", seed=seed, epochs=0,
    )


def _fd_batch(cfg: GanConfig, rng: np.random.Generator):
    n = cfg.batch_size
    x = rng.uniform(0.2, 0.8, (n, cfg.side, cfg.side, cfg.channels))
    k1 = np.stack([
        rng.uniform(0.3, 1.0, n),
        rng.uniform(-1.5, 1.5, n),
        rng.uniform(0.3, 1.0, n),
        rng.uniform(0.0, 1.0, n),
    ], axis=1)
    k2 = rng.permutation(k1)
    k3 = rng.permutation(k1)
    z = rng.standard_normal((n, cfg.nz))
    return x, k1, k2, k3, z


def grad_check(cfg: Optional[GanConfig] = None, seed: int = 0,
               step: float = 1e-5) -> float:
    """Max relative error of reverse-mode gradients vs central differences,
    over every parameter of both networks."""
    cfg = cfg or tiny_config(seed)
    if cfg.dtype != "float64":
        raise ValueError("gradient checks require the float64 configuration")
    rng = np.random.default_rng(seed)
    model = GanModel.initialize(cfg, seed=seed)
    # move to a generic point: fresh zero-bias networks evaluate rectifiers
    # exactly on their kink (whole windows are zero), where one-sided
    # derivatives and central differences legitimately disagree
    for params in (model.g_params, model.d_params):
        for p in params.values():
            p += rng.normal(0.0, 0.1, p.shape)
    gen = model.generator
    disc = model.discriminator
    x, k1, k2, k3, z = _fd_batch(cfg, rng)

    def loss_d() -> float:
        xhat, _ = gen.forward(z, k2)
        y, _ = disc.forward(x, k1)
        y1, _ = disc.forward(xhat, k2)
        y2, _ = disc.forward(xhat, k3)
        y3, _ = disc.forward(x, k2)
        return discriminator_loss(y, y1, y2, y3, cfg.real_term_mode)

    def loss_g() -> float:
        xhat, _ = gen.forward(z, k2)
        y1, _ = disc.forward(xhat, k2)
        return generator_loss(y1, cfg.gen_loss_mode)

    # analytic gradients
    xhat, _ = gen.forward(z, k2)
    y, cy = disc.forward(x, k1)
    y1, c1 = disc.forward(xhat, k2)
    y2, c2 = disc.forward(xhat, k3)
    y3, c3 = disc.forward(x, k2)
    dy, dy1, dy2, dy3 = discriminator_loss_grads(y, y1, y2, y3, cfg.real_term_mode)
    grads_d = disc.backward(cy, dy)[0]
    for cache, dscore in ((c1, dy1), (c2, dy2), (c3, dy3)):
        for name, g in disc.backward(cache, dscore)[0].items():
            grads_d[name] += g

    xhat, gcache = gen.forward(z, k2)
    y1g, cg = disc.forward(xhat, k2)
    dy1g = generator_loss_grad(y1g, cfg.gen_loss_mode)
    _, dxhat = disc.backward(cg, dy1g, need_dx=True)
    grads_g = gen.backward(gcache, dxhat)

    worst = 0.0
    for params, grads, loss_fn in ((model.d_params, grads_d, loss_d),
                                   (model.g_params, grads_g, loss_g)):
        for name, p in params.items():
            g = grads[name]
            flat = p.ravel()
            gflat = g.ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                hi = loss_fn()
                flat[i] = orig - step
                lo = loss_fn()
                flat[i] = orig
                fd = (hi - lo) / (2.0 * step)
                err = abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), 1e-6)
                if err > worst:
                    worst = float(err)
    return worst
