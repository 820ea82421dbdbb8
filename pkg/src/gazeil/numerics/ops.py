"""Differentiable layer primitives.

Layer ops accept either a single sample (``[C,H,W]`` / ``[N]``) or a batch with
a leading axis (``[B,C,H,W]`` / ``[B,N]``); the output keeps the same form.
"""
from __future__ import annotations

import enum

import numpy as np

from ..errors import DimensionError
from . import kernels
from .tensor import Tensor, as_tensor, make_output


class DropoutMode(enum.Enum):
    TRAIN = "train"
    TEST = "test"


def conv2d_forward(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """Valid (unpadded) 2D cross-correlation."""
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    if x.ndim not in (3, 4):
        raise DimensionError(f"conv2d input must be [C,H,W] or [N,C,H,W], got rank {x.ndim}")
    if kernel.ndim != 4:
        raise DimensionError(f"conv2d kernel must be [C_out,C_in,kH,kW], got rank {kernel.ndim}")
    stride = int(stride)
    if stride < 1:
        raise ValueError("stride must be a positive integer")
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    n, c, h, w = xd.shape
    c_out, c_in, kh, kw = kernel.shape
    if c_in != c:
        raise DimensionError(f"channel axis mismatch: input has {c} channels, kernel expects {c_in}")
    if kh > h:
        raise DimensionError(f"height axis: kernel height {kh} exceeds input height {h}")
    if kw > w:
        raise DimensionError(f"width axis: kernel width {kw} exceeds input width {w}")
    if bias.shape != (c_out,):
        raise DimensionError(f"bias axis: expected shape ({c_out},), got {bias.shape}")
    oh = kernels.conv_output_size(h, kh, stride)
    ow = kernels.conv_output_size(w, kw, stride)

    cols = kernels.im2col(np.ascontiguousarray(xd), kh, kw, stride)
    wmat = kernel.data.reshape(c_out, -1)
    out = wmat @ cols + bias.data[:, None]
    out = out.reshape(c_out, n, oh, ow).transpose(1, 0, 2, 3)
    if single:
        out = out[0]
    out = np.ascontiguousarray(out)

    def backward_fn(g):
        g4 = g[None] if single else g
        gmat = g4.transpose(1, 0, 2, 3).reshape(c_out, -1)
        gk = (gmat @ cols.T).reshape(kernel.shape)
        gb = gmat.sum(axis=1)
        gx = None
        if x.requires_grad:
            gx = kernels.col2im(wmat.T @ gmat, n, c, h, w, kh, kw, stride)
            if single:
                gx = gx[0]
        return gx, gk, gb

    return make_output(out, "conv2d", (x, kernel, bias), backward_fn, stride=stride)


def affine_forward(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """``weights @ x + bias`` (row-wise for a batch)."""
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    if weights.ndim != 2:
        raise DimensionError(f"weights must be [M,N], got rank {weights.ndim}")
    m, k = weights.shape
    if x.ndim not in (1, 2) or x.shape[-1] != k:
        raise DimensionError(f"input axis mismatch: weights expect {k} inputs, got shape {x.shape}")
    if bias.shape != (m,):
        raise DimensionError(f"bias axis: expected shape ({m},), got {bias.shape}")
    xd, wd = x.data, weights.data
    out = xd @ wd.T + bias.data

    def backward_fn(g):
        if g.ndim == 1:
            return g @ wd, np.outer(g, xd), g
        return g @ wd, g.T @ xd, g.sum(axis=0)

    return make_output(out, "affine", (x, weights, bias), backward_fn)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_output(np.where(mask, x.data, 0.0), "relu", (x,), lambda g: (g * mask,))


def _check_keep_prob(keep_prob):
    if not (0.0 < keep_prob <= 1.0):
        raise ValueError(f"keep_prob must lie in (0, 1], got {keep_prob}")


def uniform_dropout(x: Tensor, keep_prob: float, mode: DropoutMode, rng: np.random.Generator) -> Tensor:
    """Classic (non-inverted) dropout: drop at train time, scale by ``keep_prob`` at test time."""
    x = as_tensor(x)
    keep_prob = float(keep_prob)
    _check_keep_prob(keep_prob)
    if mode is DropoutMode.TRAIN:
        factor = (rng.random(x.shape) < keep_prob).astype(np.float64)
    else:
        factor = np.full(x.shape, keep_prob)
    return make_output(x.data * factor, "uniform_dropout", (x,), lambda g: (g * factor,),
                       mode=mode, keep=factor)


def spatial_modulated_dropout(x: Tensor, keep_mask, mode: DropoutMode, rng: np.random.Generator) -> Tensor:
    """Dropout with a per-location keep probability shared by all channels.

    ``keep_mask`` is ``[H,W]`` (or ``[N,H,W]`` for a batch input). Train mode keeps
    location ``(i,j)`` with probability ``keep_mask[i,j]``; Test mode multiplies
    the features by the mask.
    """
    x = as_tensor(x)
    mask = np.asarray(keep_mask.data if isinstance(keep_mask, Tensor) else keep_mask, dtype=np.float64)
    if x.ndim not in (3, 4):
        raise ValueError(f"input must be [C,H,W] or [N,C,H,W], got shape {x.shape}")
    spatial = x.shape[-2:]
    if mask.shape[-2:] != spatial or mask.ndim not in (2, 3):
        raise ValueError(f"keep_mask shape {mask.shape} does not match input spatial shape {spatial}")
    if mask.ndim == 3 and (x.ndim != 4 or mask.shape[0] != x.shape[0]):
        raise ValueError("a per-sample keep_mask needs a batch input with matching batch size")
    if not np.all((mask > 0.0) & (mask <= 1.0)):
        raise ValueError("keep_mask values must lie in (0, 1]")
    if mode is DropoutMode.TRAIN:
        if x.ndim == 4 and mask.ndim == 2:
            draws = rng.random((x.shape[0],) + spatial) < mask
        else:
            draws = rng.random(mask.shape) < mask
        factor = draws.astype(np.float64)
    else:
        factor = mask
    # broadcast the spatial factor across the channel axis
    factor = factor[..., None, :, :] if factor.ndim == x.ndim - 1 else factor
    if factor.ndim < x.ndim:
        factor = factor[None]
    return make_output(x.data * factor, "spatial_modulated_dropout", (x,),
                       lambda g: (g * factor,), mode=mode, keep=factor)


def flatten(x: Tensor) -> Tensor:
    """``[C,H,W] -> [C*H*W]``; a batch keeps its leading axis."""
    x = as_tensor(x)
    old = x.shape
    new = (old[0], -1) if x.ndim == 4 else (-1,)
    return make_output(x.data.reshape(new), "flatten", (x,), lambda g: (g.reshape(old),))


def concat_channels(tensors) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = tensors[0].ndim - 3
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward_fn(g):
        return tuple(np.split(g, sizes, axis=axis))

    return make_output(np.concatenate([t.data for t in tensors], axis=axis), "concat", tuple(tensors),
                       backward_fn)


def upsample_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Separable bilinear resize of the two trailing axes."""
    x = as_tensor(x)
    h, w = x.shape[-2:]
    ry = kernels.bilinear_weights(h, out_h)
    rx = kernels.bilinear_weights(w, out_w)
    out = ry @ x.data @ rx.T
    return make_output(out, "upsample", (x,), lambda g: (ry.T @ g @ rx,))


def spatial_log_softmax(x: Tensor) -> Tensor:
    """Log-softmax over the two trailing axes of a single-channel map ``[...,H,W]``."""
    x = as_tensor(x)
    lead = x.shape[:-2]
    flat = x.data.reshape(lead + (-1,))
    m = flat.max(axis=-1, keepdims=True)
    z = flat - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    p = np.exp(logp)

    def backward_fn(g):
        gf = g.reshape(flat.shape)
        return ((gf - p * gf.sum(axis=-1, keepdims=True)).reshape(x.shape),)

    return make_output(logp.reshape(x.shape), "log_softmax", (x,), backward_fn)


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    e = np.exp(x.data)
    return make_output(e, "exp", (x,), lambda g: (g * e,))


def spatial_softmax(x: Tensor) -> Tensor:
    return exp(spatial_log_softmax(x))


def bce_with_logits(logits: Tensor, target: float) -> Tensor:
    """Mean binary cross-entropy of ``logits`` against a constant label."""
    logits = as_tensor(logits)
    z = logits.data
    t = float(target)
    # log(1 + e^-|z|) + max(z, 0) - z*t
    loss = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    n = z.size
    sig = 1.0 / (1.0 + np.exp(-z))
    return make_output(np.array(loss.mean()), "bce_logits", (logits,),
                       lambda g: (np.asarray(g).item() * (sig - t) / n,))


def mse_loss(pred: Tensor, target) -> Tensor:
    diff = pred - Tensor(np.asarray(target, dtype=np.float64))
    return (diff * diff).mean()


def l1_map_loss(pred: Tensor, target) -> Tensor:
    """Per-map L1 distance, averaged over the batch (summed over pixels)."""
    from .tensor import absolute

    diff = absolute(pred - Tensor(np.asarray(target, dtype=np.float64)))
    n = pred.shape[0] if pred.ndim > 2 else 1
    return diff.sum() / n
