"""Differentiable kernels: convolution, batch norm, activations, pixel shuffle."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ddcn.core.tensor import Tensor, astensor, make
from ddcn.errors import DimensionError


@dataclass(frozen=True)
class ConvSpec:
    """Kernel geometry. Stride is always 1 and padding always zero "same"."""

    kernel: tuple[int, ...]

    def __post_init__(self):
        if any(k < 1 or k % 2 == 0 for k in self.kernel):
            raise DimensionError(f"kernel extents must be odd, got {self.kernel}")

    @property
    def padding(self) -> tuple[int, ...]:
        return tuple(k // 2 for k in self.kernel)


def _im2col(xpad: np.ndarray, kernel: tuple[int, ...], spatial: tuple[int, ...]) -> np.ndarray:
    """(C*K, P) column matrix, one row block per kernel offset."""
    c = xpad.shape[0]
    k = int(np.prod(kernel))
    p = int(np.prod(spatial))
    cols = np.empty((c, k, p))
    for j, offs in enumerate(np.ndindex(*kernel)):
        src = (slice(None),) + tuple(slice(o, o + n) for o, n in zip(offs, spatial))
        cols[:, j, :] = xpad[src].reshape(c, p)
    return cols.reshape(c * k, p)


def _conv_same(x: Tensor, w: Tensor, b: Tensor | None, nsp: int, op: str) -> Tensor:
    x, w = astensor(x), astensor(w)
    if x.ndim != nsp + 1 or w.ndim != nsp + 2:
        raise DimensionError(f"{op}: expected input rank {nsp + 1} and weight rank {nsp + 2}, "
                             f"got {x.shape} and {w.shape}")
    cin = x.shape[0]
    if w.shape[1] != cin:
        raise DimensionError(f"{op}: weight expects {w.shape[1]} input channels, input has {cin}")
    spec = ConvSpec(tuple(w.shape[2:]))
    cout = w.shape[0]
    pads = spec.padding
    spatial = x.shape[1:]
    npix = int(np.prod(spatial))
    pointwise = all(k == 1 for k in spec.kernel)

    if pointwise:
        cols = x.data.reshape(cin, npix)
    else:
        xpad = np.pad(x.data, ((0, 0),) + tuple((p, p) for p in pads))
        cols = _im2col(xpad, spec.kernel, spatial)
    w2 = w.data.reshape(cout, -1)
    out = w2 @ cols
    if b is not None:
        b = astensor(b)
        if b.shape != (cout,):
            raise DimensionError(f"{op}: bias shape {b.shape} != ({cout},)")
        out += b.data[:, None]
    out = out.reshape((cout,) + spatial)

    def backward(g):
        g2 = g.reshape(cout, npix)
        gw = (g2 @ cols.T).reshape(w.shape)
        dcols = w2.T @ g2
        if pointwise:
            gx = dcols.reshape(x.shape)
        else:
            dcols = dcols.reshape(cin, -1, npix)
            gpad = np.zeros(xpad.shape)
            for j, offs in enumerate(np.ndindex(*spec.kernel)):
                dst = (slice(None),) + tuple(slice(o, o + n) for o, n in zip(offs, spatial))
                gpad[dst] += dcols[:, j, :].reshape((cin,) + spatial)
            gx = gpad[(slice(None),) + tuple(slice(p, p + n) for p, n in zip(pads, spatial))]
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=1)

    parents = (x, w, b) if b is not None else (x, w)
    return make(out, parents, backward, op)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Cross-correlate ``x`` (C,H,W) with ``weight`` (O,C,kh,kw), zero "same" padding."""
    return _conv_same(x, weight, bias, 2, "conv2d")


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Cross-correlate ``x`` (C,D,H,W) with ``weight`` (O,C,kd,kh,kw), zero "same" padding."""
    return _conv_same(x, weight, bias, 3, "conv3d")


def relu(x: Tensor) -> Tensor:
    x = astensor(x)
    mask = x.data > 0
    return make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def softmax_axis(x: Tensor, axis: int) -> Tensor:
    x = astensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make(s, (x,), backward, "softmax")


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Rearrange (C*r*r, H, W) into (C, r*H, r*W)."""
    x = astensor(x)
    if r < 1:
        raise DimensionError(f"pixel_shuffle factor must be positive, got {r}")
    crr, h, w = x.shape
    if crr % (r * r):
        raise DimensionError(f"pixel_shuffle: {crr} channels not divisible by r^2={r * r}")
    c = crr // (r * r)
    out = x.data.reshape(c, r, r, h, w).transpose(0, 3, 1, 4, 2).reshape(c, h * r, w * r)

    def backward(g):
        return (g.reshape(c, h, r, w, r).transpose(0, 2, 4, 1, 3).reshape(crr, h, w),)

    return make(out, (x,), backward, "pixel_shuffle")


def pixel_unshuffle(x: np.ndarray, r: int) -> np.ndarray:
    """Inverse index map of :func:`pixel_shuffle` on plain arrays."""
    c, hr, wr = x.shape
    h, w = hr // r, wr // r
    return x.reshape(c, h, r, w, r).transpose(0, 2, 4, 1, 3).reshape(c * r * r, h, w)


@dataclass(frozen=True)
class BatchNormState:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    epsilon: float = 1e-5

    @classmethod
    def fresh(cls, channels: int, momentum: float = 0.1, epsilon: float = 1e-5):
        return cls(Tensor(np.ones(channels)), Tensor(np.zeros(channels)),
                   np.zeros(channels), np.ones(channels), momentum, epsilon)


def batchnorm(x: Tensor, state: BatchNormState, mode: str = "train") -> tuple[Tensor, BatchNormState]:
    """Per-channel normalization over every axis but 0.

    Returns the output and the (possibly updated) state; ``state`` itself is
    never mutated.  Running variance tracks the unbiased batch variance.
    """
    x = astensor(x)
    gamma, beta = astensor(state.gamma), astensor(state.beta)
    c = x.shape[0]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batchnorm: {c} channels but gamma/beta shapes "
                             f"{gamma.shape}/{beta.shape}")
    bshape = (c,) + (1,) * (x.ndim - 1)
    axes = tuple(range(1, x.ndim))
    n = x.data.size // c
    eps = state.epsilon

    if mode == "train":
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        unbiased = var * n / (n - 1) if n > 1 else var
        m = state.momentum
        new_state = replace(state,
                            running_mean=(1 - m) * state.running_mean + m * mu,
                            running_var=(1 - m) * state.running_var + m * unbiased)
    elif mode == "eval":
        mu, var = state.running_mean, state.running_var
        new_state = state
    else:
        raise ValueError(f"batchnorm mode must be 'train' or 'eval', got {mode!r}")

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv_std.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def backward(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        dxhat = g * gamma.data.reshape(bshape)
        if mode == "train":
            gx = (inv_std.reshape(bshape) / n) * (
                n * dxhat
                - dxhat.sum(axis=axes).reshape(bshape)
                - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape))
        else:
            gx = dxhat * inv_std.reshape(bshape)
        return gx, gg, gb

    return make(out, (x, gamma, beta), backward, "batchnorm"), new_state


def mean_abs_error(a: Tensor, b: Tensor) -> Tensor:
    """Mean of |a - b| over every element."""
    a, b = astensor(a), astensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"L1 operands differ in shape: {a.shape} vs {b.shape}")
    return (a - b).abs().mean()
