"""Adversarial losses over discriminator scores, with analytic gradients.

The discriminator sees one true pair and three false pairs: the generated
image with its own condition, the generated image with a foreign condition,
and a real image with a foreign condition. Scores are clamped away from
{0, 1} before any logarithm.

The real-image term is configurable: `log` uses log y (the cross-entropy
form), `linear` uses y itself (an alternative printed form of the same
objective); both keep the three false-pair log terms.
"""

from __future__ import annotations

from typing import Tuple

import numpy as np

SCORE_EPS = 1e-7


def _clamp(y: np.ndarray) -> np.ndarray:
    return np.clip(y, SCORE_EPS, 1.0 - SCORE_EPS)


def discriminator_loss(y, y1, y2, y3, real_mode: str = "log") -> float:
    """-1/2 E[f(y)] - 1/2 E[(log(1-y1) + log(1-y2) + log(1-y3)) / 3]."""
    y, y1, y2, y3 = (_clamp(np.asarray(a, dtype=np.float64)) for a in (y, y1, y2, y3))
    if real_mode == "log":
        real_term = np.log(y).mean()
    elif real_mode == "linear":
        real_term = y.mean()
    else:
        raise ValueError("real_mode must be 'log' or 'linear'")
    fake_term = (np.log1p(-y1) + np.log1p(-y2) + np.log1p(-y3)).mean() / 3.0
    return float(-0.5 * real_term - 0.5 * fake_term)


def discriminator_loss_grads(y, y1, y2, y3, real_mode: str = "log"):
    """d loss / d score for each of the four score vectors."""
    n = np.asarray(y).shape[0]
    yc, y1c, y2c, y3c = (_clamp(np.asarray(a, dtype=np.float64)) for a in (y, y1, y2, y3))
    if real_mode == "log":
        dy = -0.5 / (n * yc)
    else:
        dy = np.full_like(yc, -0.5 / n)
    dy1 = 0.5 / (3.0 * n * (1.0 - y1c))
    dy2 = 0.5 / (3.0 * n * (1.0 - y2c))
    dy3 = 0.5 / (3.0 * n * (1.0 - y3c))
    return dy, dy1, dy2, dy3


def generator_loss(y1, mode: str = "non-saturating-log") -> float:
    """Non-saturating: -E[log y1]; linear: -1/2 E[y1]."""
    y1c = _clamp(np.asarray(y1, dtype=np.float64))
    if mode == "non-saturating-log":
        return float(-np.log(y1c).mean())
    if mode == "paper-linear":
        return float(-0.5 * y1c.mean())
    raise ValueError("mode must be 'non-saturating-log' or 'paper-linear'")


def generator_loss_grad(y1, mode: str = "non-saturating-log") -> np.ndarray:
    n = np.asarray(y1).shape[0]
    y1c = _clamp(np.asarray(y1, dtype=np.float64))
    if mode == "non-saturating-log":
        return -1.0 / (n * y1c)
    if mode == "paper-linear":
        return np.full_like(y1c, -0.5 / n)
    raise ValueError("mode must be 'non-saturating-log' or 'paper-linear'")


def zero_sum_generator_loss(y, y1, y2, y3, real_mode: str = "log") -> float:
    """The minimax generator objective: term-by-term negation of the
    discriminator loss, so the two sum to zero exactly."""
    y, y1, y2, y3 = (_clamp(np.asarray(a, dtype=np.float64)) for a in (y, y1, y2, y3))
    if real_mode == "log":
        real_term = np.log(y).mean()
    elif real_mode == "linear":
        real_term = y.mean()
    else:
        raise ValueError("real_mode must be 'log' or 'linear'")
    fake_term = (np.log1p(-y1) + np.log1p(-y2) + np.log1p(-y3)).mean() / 3.0
    return float(-(-0.5 * real_term) - (-0.5 * fake_term))
