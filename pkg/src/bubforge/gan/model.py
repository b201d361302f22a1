"""Feature-conditioned generator and discriminator.

Generator: the 4-vector condition is embedded and concatenated with the
latent noise, projected to a coarse (side/8)^2 feature map, then upsampled
three times with 3x3 convolutions; a final convolution and logistic squash
produce images in [0, 1].

Discriminator: three stride-2 convolutions bring the image to the coarsest
grid, where the projected condition is replicated spatially and concatenated
in depth; a 1x1 fuse, a fully connected head and a logistic squash give a
realness score in (0, 1).

Tensors are NHWC and convolution weights (co, kh, kw, ci): the patch
gather then streams sequentially through memory. Parameters live in ordered
name->array dicts so the optimizer, the gradient check and the container
format all share one flat view.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Dict, Optional, Tuple

import numpy as np

from . import layers as L

GEN_LOSS_MODES = ("non-saturating-log", "paper-linear")
REAL_TERM_MODES = ("log", "linear")


@dataclass
class GanConfig:
    side: int = 32              # image side, multiple of 8 (paper scale: 64)
    channels: int = 1           # grayscale; 3 replicates planes (paper scale)
    nz: int = 64                # latent dimension (paper scale: 100)
    ne: int = 64                # condition embedding dimension
    nd: int = 128               # discriminator condition projection (paper scale: 512)
    base_channels: int = 128    # coarsest generator width; discriminator derives from it
    batch_size: int = 64
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epochs: int = 30
    seed: int = 0
    gen_loss_mode: str = "non-saturating-log"
    real_term_mode: str = "log"
    batchnorm: bool = True      # generator stages only; off for gradient checks
    dtype: str = "float32"      # float64 for gradient checks

    def __post_init__(self):
        if self.side % 8 != 0:
            raise ValueError("side must be a multiple of 8")
        if min(self.nz, self.ne, self.nd, self.base_channels) < 1:
            raise ValueError("dimensions must be >= 1")
        if self.gen_loss_mode not in GEN_LOSS_MODES:
            raise ValueError(f"gen_loss_mode must be one of {GEN_LOSS_MODES}")
        if self.real_term_mode not in REAL_TERM_MODES:
            raise ValueError(f"real_term_mode must be one of {REAL_TERM_MODES}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def g_stage_channels(self) -> Tuple[int, int, int]:
        c0 = self.base_channels
        return (max(1, c0 // 2), max(1, c0 // 4), max(1, c0 // 4))

    def d_stack_channels(self) -> Tuple[int, int, int]:
        c0 = self.base_channels
        return (max(1, c0 // 4), max(1, c0 // 2), c0)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GanConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


_INIT_STD = 0.02
# the two condition layers have fan-in 4; the wide-layer 0.02 convention
# would make their output invisible next to the unit-variance latent, so
# they start at Xavier scale instead
_COND_INIT_STD = 0.5


def _init_params(cfg: GanConfig, rng: np.random.Generator) -> Tuple[Dict, Dict, Dict]:
    """Weights ~ N(0, 0.02) (condition layers N(0, 0.5)), biases 0,
    normalization scale 1 / shift 0."""
    dt = cfg.np_dtype
    s8 = cfg.side // 8
    c0 = cfg.base_channels
    g1, g2, g3 = cfg.g_stage_channels()
    d1, d2, d3 = cfg.d_stack_channels()

    def w(*shape):
        return (rng.normal(0.0, _INIT_STD, shape)).astype(dt)

    def wc(*shape):
        return (rng.normal(0.0, _COND_INIT_STD, shape)).astype(dt)

    def z(*shape):
        return np.zeros(shape, dtype=dt)

    g: Dict[str, np.ndarray] = {
        "g.embed.w": wc(4, cfg.ne), "g.embed.b": z(cfg.ne),
        "g.fc.w": w(cfg.nz + cfg.ne, c0 * s8 * s8), "g.fc.b": z(c0 * s8 * s8),
        "g.conv1.w": w(g1, 3, 3, c0), "g.conv1.b": z(g1),
        "g.conv2.w": w(g2, 3, 3, g1), "g.conv2.b": z(g2),
        "g.conv3.w": w(g3, 3, 3, g2), "g.conv3.b": z(g3),
        "g.out.w": w(cfg.channels, 3, 3, g3), "g.out.b": z(cfg.channels),
    }
    stats: Dict[str, np.ndarray] = {}
    if cfg.batchnorm:
        for name, ch in (("bn0", c0), ("bn1", g1), ("bn2", g2), ("bn3", g3)):
            g[f"g.{name}.gamma"] = np.ones(ch, dtype=dt)
            g[f"g.{name}.beta"] = z(ch)
            stats[f"g.{name}.mean"] = z(ch)
            stats[f"g.{name}.var"] = np.ones(ch, dtype=dt)
    d: Dict[str, np.ndarray] = {
        "d.conv1.w": w(d1, 3, 3, cfg.channels), "d.conv1.b": z(d1),
        "d.conv2.w": w(d2, 3, 3, d1), "d.conv2.b": z(d2),
        "d.conv3.w": w(d3, 3, 3, d2), "d.conv3.b": z(d3),
        "d.proj.w": wc(4, cfg.nd), "d.proj.b": z(cfg.nd),
        "d.fuse.w": w(c0, 1, 1, d3 + cfg.nd), "d.fuse.b": z(c0),
        "d.fc.w": w(c0 * s8 * s8, 1), "d.fc.b": z(1),
    }
    return g, d, stats


class Generator:
    def __init__(self, cfg: GanConfig, params: Dict[str, np.ndarray],
                 stats: Dict[str, np.ndarray]):
        self.cfg = cfg
        self.p = params
        self.stats = stats

    def forward(self, z: np.ndarray, k: np.ndarray, train: bool = False):
        cfg = self.cfg
        if z.ndim != 2 or z.shape[1] != cfg.nz:
            raise ValueError(f"z must be (n, {cfg.nz})")
        if k.shape != (z.shape[0], 4):
            raise ValueError("k must be (n, 4)")
        dt = cfg.np_dtype
        z = np.ascontiguousarray(z, dtype=dt)
        k = np.ascontiguousarray(k, dtype=dt)
        p = self.p
        cache: Dict = {"train": train, "n": z.shape[0]}
        s8 = cfg.side // 8
        c0 = cfg.base_channels

        he, cache["embed"] = L.affine_forward(k, p["g.embed.w"], p["g.embed.b"])
        ha, cache["embed_act"] = L.leaky_relu_forward(he)
        zk = np.concatenate([z, ha], axis=1)
        cache["zk_split"] = cfg.nz
        hf, cache["fc"] = L.affine_forward(zk, p["g.fc.w"], p["g.fc.b"])
        x = hf.reshape(z.shape[0], s8, s8, c0)

        x = self._bn(x, "bn0", cache, train)
        x, cache["act0"] = L.relu_forward(x)
        for i, name in enumerate(("conv1", "conv2", "conv3"), start=1):
            x, cache[f"up{i}"] = L.upsample2x_forward(x)
            x, cache[name] = L.conv2d_forward(x, p[f"g.{name}.w"], p[f"g.{name}.b"])
            x = self._bn(x, f"bn{i}", cache, train)
            x, cache[f"act{i}"] = L.relu_forward(x)
        x, cache["out"] = L.conv2d_forward(x, p["g.out.w"], p["g.out.b"])
        y, cache["squash"] = L.sigmoid_forward(x)
        return y, cache

    def _bn(self, x, name, cache, train):
        if not self.cfg.batchnorm:
            return x
        p = self.p
        out, cache[name + "_bn"] = L.batchnorm2d_forward(
            x, p[f"g.{name}.gamma"], p[f"g.{name}.beta"],
            self.stats[f"g.{name}.mean"], self.stats[f"g.{name}.var"], train,
        )
        return out

    def _bn_back(self, dx, name, cache, grads):
        if not self.cfg.batchnorm:
            return dx
        dx, dgamma, dbeta = L.batchnorm2d_backward(dx, cache[name + "_bn"])
        grads[f"g.{name}.gamma"] = dgamma
        grads[f"g.{name}.beta"] = dbeta
        return dx

    def backward(self, cache: Dict, dy: np.ndarray) -> Dict[str, np.ndarray]:
        cfg = self.cfg
        p = self.p
        grads: Dict[str, np.ndarray] = {}
        dx = L.sigmoid_backward(dy, cache["squash"])
        dx, grads["g.out.w"], grads["g.out.b"] = L.conv2d_backward(dx, cache["out"], p["g.out.w"])
        for i, name in zip((3, 2, 1), ("conv3", "conv2", "conv1")):
            dx = L.relu_backward(dx, cache[f"act{i}"])
            dx = self._bn_back(dx, f"bn{i}", cache, grads)
            dx, grads[f"g.{name}.w"], grads[f"g.{name}.b"] = L.conv2d_backward(
                dx, cache[name], p[f"g.{name}.w"])
            dx = L.upsample2x_backward(dx, cache[f"up{i}"])
        dx = L.relu_backward(dx, cache["act0"])
        dx = self._bn_back(dx, "bn0", cache, grads)
        dh = dx.reshape(cache["n"], -1)
        dzk, grads["g.fc.w"], grads["g.fc.b"] = L.affine_backward(dh, cache["fc"], p["g.fc.w"])
        dha = dzk[:, cache["zk_split"]:]
        dhe = L.leaky_relu_backward(dha, cache["embed_act"])
        _, grads["g.embed.w"], grads["g.embed.b"] = L.affine_backward(
            dhe, cache["embed"], p["g.embed.w"])
        return grads


class Discriminator:
    def __init__(self, cfg: GanConfig, params: Dict[str, np.ndarray]):
        self.cfg = cfg
        self.p = params

    def forward(self, x: np.ndarray, k: np.ndarray):
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1:] != (cfg.side, cfg.side, cfg.channels):
            raise ValueError(f"x must be (n, {cfg.side}, {cfg.side}, {cfg.channels})")
        if k.shape != (x.shape[0], 4):
            raise ValueError("k must be (n, 4)")
        dt = cfg.np_dtype
        x = np.ascontiguousarray(x, dtype=dt)
        k = np.ascontiguousarray(k, dtype=dt)
        p = self.p
        cache: Dict = {"n": x.shape[0]}
        for name in ("conv1", "conv2", "conv3"):
            x, cache[name] = L.conv2d_forward(x, p[f"d.{name}.w"], p[f"d.{name}.b"], stride=2)
            x, cache[name + "_act"] = L.leaky_relu_forward(x)
        hp, cache["proj"] = L.affine_forward(k, p["d.proj.w"], p["d.proj.b"])
        hpa, cache["proj_act"] = L.leaky_relu_forward(hp)
        s8 = cfg.side // 8
        tiled = np.broadcast_to(hpa[:, None, None, :], (hpa.shape[0], s8, s8, cfg.nd))
        x = np.concatenate([x, tiled], axis=3)
        cache["concat_split"] = x.shape[3] - cfg.nd
        x, cache["fuse"] = L.conv2d_forward(x, p["d.fuse.w"], p["d.fuse.b"], stride=1, pad=0)
        x, cache["fuse_act"] = L.leaky_relu_forward(x)
        h = x.reshape(x.shape[0], -1)
        logit, cache["fc"] = L.affine_forward(h, p["d.fc.w"], p["d.fc.b"])
        y, cache["squash"] = L.sigmoid_forward(logit)
        cache["pre_fc_shape"] = x.shape
        return y[:, 0], cache

    def backward(self, cache: Dict, dy: np.ndarray, need_dx: bool = False):
        """Gradients of the loss wrt parameters and, optionally, the image."""
        p = self.p
        grads: Dict[str, np.ndarray] = {}
        d = L.sigmoid_backward(dy[:, None], cache["squash"])
        dh, grads["d.fc.w"], grads["d.fc.b"] = L.affine_backward(d, cache["fc"], p["d.fc.w"])
        dx = dh.reshape(cache["pre_fc_shape"])
        dx = L.leaky_relu_backward(dx, cache["fuse_act"])
        dx, grads["d.fuse.w"], grads["d.fuse.b"] = L.conv2d_backward(
            dx, cache["fuse"], p["d.fuse.w"], stride=1, pad=0)
        split = cache["concat_split"]
        dimg = np.ascontiguousarray(dx[:, :, :, :split])
        dtile = dx[:, :, :, split:]
        dproj = dtile.sum(axis=(1, 2))
        dproj = L.leaky_relu_backward(dproj, cache["proj_act"])
        _, grads["d.proj.w"], grads["d.proj.b"] = L.affine_backward(
            dproj, cache["proj"], p["d.proj.w"])
        for name in ("conv3", "conv2", "conv1"):
            dimg = L.leaky_relu_backward(dimg, cache[name + "_act"])
            dimg, grads[f"d.{name}.w"], grads[f"d.{name}.b"] = L.conv2d_backward(
                dimg, cache[name], p[f"d.{name}.w"], stride=2)
        return grads, (dimg if need_dx else None)


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0


@dataclass
class GanModel:
    cfg: GanConfig
    g_params: Dict[str, np.ndarray]
    d_params: Dict[str, np.ndarray]
    g_stats: Dict[str, np.ndarray]
    opt_g: Optional[AdamState] = None
    opt_d: Optional[AdamState] = None

    @classmethod
    def initialize(cls, cfg: GanConfig, seed: Optional[int] = None) -> "GanModel":
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        g, d, stats = _init_params(cfg, rng)
        return cls(cfg=cfg, g_params=g, d_params=d, g_stats=stats)

    @property
    def generator(self) -> Generator:
        return Generator(self.cfg, self.g_params, self.g_stats)

    @property
    def discriminator(self) -> Discriminator:
        return Discriminator(self.cfg, self.d_params)

    def param_count(self) -> int:
        return sum(a.size for a in self.g_params.values()) + sum(
            a.size for a in self.d_params.values())

    def generate(self, z: np.ndarray, k: np.ndarray) -> np.ndarray:
        """Frozen-model sampling (normalization in eval mode)."""
        out, _ = self.generator.forward(z, k, train=False)
        return out

    def architecture(self) -> list:
        """Ordered tensor descriptor used by the container format."""
        desc = []
        for name, arr in list(self.g_params.items()):
            desc.append({"name": name, "shape": list(arr.shape), "kind": "g"})
        for name, arr in list(self.d_params.items()):
            desc.append({"name": name, "shape": list(arr.shape), "kind": "d"})
        for name, arr in list(self.g_stats.items()):
            desc.append({"name": name, "shape": list(arr.shape), "kind": "stat"})
        return desc
