"""Toy-scale gaze predictor (encoder plus softmax head) and its conditional discriminator."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import gazemap
from ..numerics import (
    OptimizerState,
    Tensor,
    affine_forward,
    backward,
    bce_with_logits,
    concat_channels,
    conv2d_forward,
    flatten,
    l1_map_loss,
    optimizer_step,
    relu,
    spatial_softmax,
    upsample_bilinear,
    zero_grad,
)
from ..numerics.tensor import reshape
from .base import Model, conv_params, dense_params, fit_minibatch
from .config import ConvSpec, DiscriminatorConfig, GazePredictorConfig

INPUT_SHIFT = 0.5


def build_gaze_predictor(config: GazePredictorConfig, rng: np.random.Generator) -> Model:
    config.validate()
    params = {}
    c_in = 1
    for i, spec in enumerate(config.encoder):
        conv_params(rng, f"enc{i + 1}", c_in, spec, params)
        c_in = spec.out_channels
    conv_params(rng, "head", c_in, ConvSpec(1, 1, 1), params)
    params["head.w"].data *= 0.1  # start close to the prior
    if config.learn_prior:
        params["prior"] = Tensor(np.zeros((config.input_height, config.input_width)), requires_grad=True)
    return Model("gaze", config, params)


def _as_frames(images, cfg) -> np.ndarray:
    x = np.asarray(images)
    x = x.astype(np.float64) / 255.0 if x.dtype == np.uint8 else x.astype(np.float64, copy=False)
    if x.ndim != 3 or x.shape[1:] != (cfg.input_height, cfg.input_width):
        raise ValueError(f"expected frames [B,{cfg.input_height},{cfg.input_width}], got {x.shape}")
    return x


def gaze_logits(model: Model, images) -> Tensor:
    cfg: GazePredictorConfig = model.config
    x = _as_frames(images, cfg)
    h = Tensor(x[:, None] - INPUT_SHIFT)
    p = model.params
    for i, spec in enumerate(cfg.encoder):
        h = relu(conv2d_forward(h, p[f"enc{i + 1}.w"], p[f"enc{i + 1}.b"], spec.stride))
    h = conv2d_forward(h, p["head.w"], p["head.b"])
    h = upsample_bilinear(h, cfg.input_height, cfg.input_width)
    h = reshape(h, (len(x), cfg.input_height, cfg.input_width))
    if "prior" in p:
        h = h + p["prior"]
    return h


def gaze_forward(model: Model, images) -> Tensor:
    """``[B,H,W]`` frames to ``[B,H,W]`` gaze maps, each summing to one."""
    return spatial_softmax(gaze_logits(model, images))


def predict_gaze(model: Model, image) -> np.ndarray:
    """Deterministic gaze map for one ``[H,W]`` frame (or a ``[B,H,W]`` stack)."""
    x = np.asarray(image)
    single = x.ndim == 2
    out = gaze_forward(model, x[None] if single else x).data
    return out[0] if single else out


def predict_gaze_batched(model: Model, images, batch_size: int = 256) -> np.ndarray:
    chunks = [predict_gaze(model, images[s:s + batch_size]) for s in range(0, len(images), batch_size)]
    cfg = model.config
    return np.concatenate(chunks) if chunks else np.zeros((0, cfg.input_height, cfg.input_width))


@dataclass
class GazeData:
    frames: np.ndarray  # [N,H,W] uint8 or float
    maps: np.ndarray  # [N,H,W] truth gaze maps

    def __len__(self):
        return len(self.frames)


@dataclass
class GazeHyper:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 2e-3
    adv_weight: float = 1.0
    disc_learning_rate: float = 2e-4


def train_gaze_supervised(model: Model, data: GazeData, hyper: GazeHyper, rng: np.random.Generator,
                          optimizer: Optional[OptimizerState] = None, on_epoch=None) -> Model:
    """Minimise the per-map L1 distance to the truth maps."""
    if len(data) == 0:
        raise ValueError("training set is empty")
    opt = optimizer or OptimizerState("adam", hyper.learning_rate)

    def loss_fn(idx, r):
        idx = np.sort(idx)
        return l1_map_loss(gaze_forward(model, data.frames[idx]), data.maps[idx])

    return fit_minibatch(model, len(data), hyper.epochs, hyper.batch_size, opt, rng, loss_fn, on_epoch)


# adversarial training

def build_discriminator(config: DiscriminatorConfig, rng: np.random.Generator) -> Model:
    sizes = config.validate()
    params = {}
    c_in = 2
    for i, spec in enumerate(config.convs):
        conv_params(rng, f"disc{i + 1}", c_in, spec, params)
        c_in = spec.out_channels
    h, w = sizes[-1]
    dense_params(rng, "out", c_in * h * w, 1, params, gain=3.0)
    return Model("discriminator", config, params)


def discriminator_logits(disc: Model, images, maps) -> Tensor:
    """Logit that ``maps`` is a real gaze map for ``images``; maps are rescaled to unit mean."""
    cfg: DiscriminatorConfig = disc.config
    x = _as_frames(images, cfg)
    maps = maps if isinstance(maps, Tensor) else Tensor(np.asarray(maps, dtype=np.float64))
    scale = float(cfg.input_width * cfg.input_height)
    img = Tensor(x[:, None] - INPUT_SHIFT)
    m = reshape(maps * scale, (len(x), 1, cfg.input_height, cfg.input_width))
    h = concat_channels([img, m])
    p = disc.params
    for i, spec in enumerate(cfg.convs):
        h = relu(conv2d_forward(h, p[f"disc{i + 1}.w"], p[f"disc{i + 1}.b"], spec.stride))
    return reshape(affine_forward(flatten(h), p["out.w"], p["out.b"]), (len(x),))


def generator_loss(generator: Model, disc: Model, images, truth, l1_weight: float, adv_weight: float) -> Tensor:
    """``adv_weight * BCE(D(x, G(x)), real) + l1_weight * L1(G(x), truth)``."""
    fake = gaze_forward(generator, images)
    loss = l1_map_loss(fake, truth) * float(l1_weight)
    if adv_weight:
        loss = loss + bce_with_logits(discriminator_logits(disc, images, fake), 1.0) * float(adv_weight)
    return loss


def discriminator_loss(disc: Model, images, real_maps, fake_maps) -> Tensor:
    real = bce_with_logits(discriminator_logits(disc, images, real_maps), 1.0)
    fake = bce_with_logits(discriminator_logits(disc, images, fake_maps), 0.0)
    return (real + fake) * 0.5


def discriminator_accuracy(disc: Model, images, real_maps, fake_maps) -> float:
    r = discriminator_logits(disc, images, real_maps).data
    f = discriminator_logits(disc, images, fake_maps).data
    return float((np.sum(r > 0) + np.sum(f <= 0)) / (len(r) + len(f)))


def train_gaze_adversarial(generator: Model, disc: Model, data: GazeData, l1_weight: float, hyper: GazeHyper,
                           rng: np.random.Generator, on_epoch=None) -> Model:
    """Alternate one discriminator step and one generator step per minibatch."""
    if len(data) == 0:
        raise ValueError("training set is empty")
    g_opt = OptimizerState("adam", hyper.learning_rate, beta1=0.5)
    d_opt = OptimizerState("adam", hyper.disc_learning_rate, beta1=0.5)
    d_params = list(disc.params.values())

    def loss_fn(idx, r):
        idx = np.sort(idx)
        frames, truth = data.frames[idx], data.maps[idx]
        fake = gaze_forward(generator, frames).data
        # the previous generator pass left gradients on the discriminator
        zero_grad(d_params)
        backward(discriminator_loss(disc, frames, truth, fake), params=d_params)
        optimizer_step(disc.params, d_opt)
        zero_grad(d_params)
        return generator_loss(generator, disc, frames, truth, l1_weight, hyper.adv_weight)

    fit_minibatch(generator, len(data), hyper.epochs, hyper.batch_size, g_opt, rng, loss_fn, on_epoch)
    zero_grad(d_params)
    return generator


def evaluate_gaze(maps_pred: np.ndarray, maps_true: np.ndarray) -> tuple:
    """Mean KL(truth || prediction) and mean CC over a stack of maps."""
    kls = [gazemap.kl_divergence(t, p) for t, p in zip(maps_true, maps_pred)]
    ccs = [gazemap.correlation_coefficient(t, p) for t, p in zip(maps_true, maps_pred)]
    return float(np.mean(kls)), float(np.mean(ccs))
