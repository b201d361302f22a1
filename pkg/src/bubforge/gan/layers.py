"""Differentiable layer primitives: forward returns (out, cache), backward
consumes (dout, cache) and returns input/parameter gradients.

Convolutions run as patch-gather (kernel backend) + BLAS matmul; everything
operates on NCHW arrays of the model dtype.
"""

from __future__ import annotations

from typing import Tuple

import numpy as np

from .._kernels import col2im, im2col


def affine_forward(x, w, b):
    return x @ w + b, x


def affine_backward(dout, cache, w):
    x = cache
    dx = dout @ w.T
    dw = x.T @ dout
    db = dout.sum(axis=0)
    return dx, dw, db


def leaky_relu_forward(x, alpha=0.2):
    out = np.where(x >= 0, x, alpha * x)
    return out, (x >= 0)


def leaky_relu_backward(dout, cache, alpha=0.2):
    pos = cache
    return np.where(pos, dout, alpha * dout)


def relu_forward(x):
    out = np.maximum(x, 0)
    return out, (x > 0)


def relu_backward(dout, cache):
    return dout * cache


def sigmoid_forward(x):
    out = 1.0 / (1.0 + np.exp(-x))
    return out, out


def sigmoid_backward(dout, cache):
    y = cache
    return dout * y * (1.0 - y)


def conv2d_forward(x, w, b, stride=1, pad=1):
    """x: (n,h,w,ci) NHWC; w: (co,kh,kw,ci); b: (co,)."""
    n, h, wd, ci = x.shape
    co, kh, kw, _ = w.shape
    cols = im2col(x, kh, kw, stride, pad)           # (n*oh*ow, kh*kw*ci)
    wmat = w.reshape(co, -1)
    out = cols @ wmat.T
    out += b
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    return out.reshape(n, oh, ow, co), (cols, x.shape)


def conv2d_backward(dout, cache, w, stride=1, pad=1):
    cols, x_shape = cache
    n, h, wd, ci = x_shape
    co, kh, kw, _ = w.shape
    dmat = dout.reshape(-1, co)                      # layout-free reshape
    dw = (dmat.T @ cols).reshape(w.shape)
    db = dmat.sum(axis=0)
    dcols = dmat @ w.reshape(co, -1)                 # (n*oh*ow, kh*kw*ci)
    dx = col2im(dcols, n, h, wd, ci, kh, kw, stride, pad)
    return dx, dw, db


def upsample2x_forward(x):
    out = x.repeat(2, axis=1).repeat(2, axis=2)
    return out, x.shape


def upsample2x_backward(dout, cache):
    n, h, w, c = cache
    return dout.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4))


def batchnorm2d_forward(x, gamma, beta, running_mean, running_var,
                        train: bool, momentum=0.9, eps=1e-5):
    """Per-channel normalization over (n, h, w) of an NHWC tensor.

    In train mode batch statistics normalize and update the running
    estimates in place; in eval mode the running estimates are used.
    """
    if train:
        mean = x.mean(axis=(0, 1, 2))
        var = x.var(axis=(0, 1, 2))
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mean = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    out = gamma * xhat + beta
    return out, (xhat, inv_std, gamma, train)


def batchnorm2d_backward(dout, cache):
    xhat, inv_std, gamma, train = cache
    dgamma = (dout * xhat).sum(axis=(0, 1, 2))
    dbeta = dout.sum(axis=(0, 1, 2))
    dxhat = dout * gamma
    if train:
        term = (
            dxhat
            - dxhat.mean(axis=(0, 1, 2))
            - xhat * (dxhat * xhat).mean(axis=(0, 1, 2))
        )
        dx = term * inv_std
    else:
        dx = dxhat * inv_std
    return dx, dgamma, dbeta
