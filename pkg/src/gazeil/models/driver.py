"""PilotNet-style steering networks with optional gaze integration."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .. import gazemap
from ..errors import DegenerateMapError
from ..numerics import (
    DropoutMode,
    OptimizerState,
    Tensor,
    affine_forward,
    conv2d_forward,
    flatten,
    mse_loss,
    relu,
    spatial_modulated_dropout,
    uniform_dropout,
)
from .base import Model, conv_params, dense_params, fit_minibatch
from .config import IntegrationMode, ModelConfig

INPUT_SHIFT = 0.5  # frames in [0, 1] are centred before conv1


def build_pilotnet(config: ModelConfig, rng: np.random.Generator) -> Model:
    sizes = config.validate()
    params = {}
    c_in = config.input_channels
    for i, spec in enumerate(config.convs):
        conv_params(rng, f"conv{i + 1}", c_in, spec, params)
        c_in = spec.out_channels
    h, w = sizes[-1]
    n_in = c_in * h * w
    for i, width in enumerate(config.dense):
        last = i == len(config.dense) - 1
        dense_params(rng, f"fc{i + 1}", n_in, width, params, gain=3.0 if last else 6.0)
        n_in = width
    return Model("driver", config, params)


def preprocess_gaze_as_input(image, gaze) -> np.ndarray:
    """Stack a frame with its gaze-modulated copy: ``[2,H,W]`` (or ``[N,2,H,W]`` for stacks)."""
    image = np.asarray(image, dtype=np.float64)
    gaze = np.asarray(gaze, dtype=np.float64)
    if image.shape != gaze.shape:
        raise ValueError(f"image shape {image.shape} differs from gaze shape {gaze.shape}")
    if image.ndim not in (2, 3):
        raise ValueError("expected [H,W] or [N,H,W] arrays")
    peak = gaze.max(axis=(-2, -1), keepdims=True)
    if np.any(peak <= 0) or not np.all(np.isfinite(gaze)):
        raise DegenerateMapError("gaze map has no positive mass")
    return np.stack([image, image * (gaze / peak)], axis=-3)


def _frames(images) -> np.ndarray:
    x = np.asarray(images)
    if x.dtype == np.uint8:
        return x.astype(np.float64) / 255.0
    return x.astype(np.float64, copy=False)


@lru_cache(maxsize=16)
def _blob_mask(width, height, p_base, w, h):
    return gazemap.keep_prob_mask(gazemap.central_blob(width, height), p_base, w, h)


def _keep_masks(cfg: ModelConfig, gazes, site: int) -> np.ndarray:
    h, w = _site_sizes(cfg)[site]
    if cfg.integration_mode is IntegrationMode.CENTRAL_BLOB_DROPOUT:
        return _blob_mask(cfg.input_width, cfg.input_height, cfg.p_base, w, h)
    return gazemap.keep_prob_masks(gazes, cfg.p_base, w, h)


_SITE_CACHE: dict = {}


def _site_sizes(cfg: ModelConfig):
    key = (cfg.input_height, cfg.input_width, cfg.convs)
    if key not in _SITE_CACHE:
        _SITE_CACHE[key] = cfg.validate()[:2]
    return _SITE_CACHE[key]


def forward_batch(model: Model, images, gazes=None, mode: DropoutMode = DropoutMode.TEST,
                  rng: Optional[np.random.Generator] = None) -> Tensor:
    """Steering in degrees for ``[B,H,W]`` frames; returns a ``[B]`` tensor on the tape."""
    cfg: ModelConfig = model.config
    mode = DropoutMode(mode)
    x = _frames(images)
    if x.ndim != 3 or x.shape[1:] != (cfg.input_height, cfg.input_width):
        raise ValueError(f"expected frames [B,{cfg.input_height},{cfg.input_width}], got {x.shape}")
    im = cfg.integration_mode
    if im.needs_gaze:
        if gazes is None:
            raise ValueError(f"integration mode {im.value} needs a gaze map")
        gazes = np.asarray(gazes, dtype=np.float64)
        if gazes.shape != x.shape:
            raise ValueError(f"gaze shape {gazes.shape} differs from frame shape {x.shape}")
    if mode is DropoutMode.TRAIN and rng is None:
        raise ValueError("Train mode needs a random generator")
    if im is IntegrationMode.GAZE_AS_INPUT:
        inp = preprocess_gaze_as_input(x, gazes)
    else:
        inp = x[:, None]
    h = Tensor(inp - INPUT_SHIFT)
    p = model.params
    for i, spec in enumerate(cfg.convs):
        h = relu(conv2d_forward(h, p[f"conv{i + 1}.w"], p[f"conv{i + 1}.b"], spec.stride))
        if i < 2:
            if im in (IntegrationMode.GAZE_DROPOUT, IntegrationMode.CENTRAL_BLOB_DROPOUT):
                h = spatial_modulated_dropout(h, _keep_masks(cfg, gazes, i), mode, rng)
            else:
                h = uniform_dropout(h, cfg.uniform_keep_prob, mode, rng)
    h = flatten(h)
    n_dense = len(cfg.dense)
    for i in range(n_dense):
        h = affine_forward(h, p[f"fc{i + 1}.w"], p[f"fc{i + 1}.b"])
        if i < n_dense - 1:
            h = relu(h)
    return h.reshape(len(x))


def forward_driver(model: Model, image, gaze=None, mode: DropoutMode = DropoutMode.TEST,
                   rng: Optional[np.random.Generator] = None) -> float:
    """Steering angle in degrees for one ``[H,W]`` frame."""
    if model.config.integration_mode.needs_gaze and gaze is None:
        raise ValueError(f"integration mode {model.config.integration_mode.value} needs a gaze map")
    g = None if gaze is None or not model.config.integration_mode.needs_gaze else np.asarray(gaze)[None]
    return forward_batch(model, np.asarray(image)[None], g, mode, rng).item()


def predict_steering(model: Model, images, gazes=None, batch_size: int = 256) -> np.ndarray:
    """Test-mode steering for a stack of frames, evaluated in chunks."""
    out = []
    needs = model.config.integration_mode.needs_gaze
    for s in range(0, len(images), batch_size):
        g = gazes[s:s + batch_size] if needs else None
        out.append(forward_batch(model, images[s:s + batch_size], g).data)
    return np.concatenate(out) if out else np.zeros(0)


@dataclass
class DriverData:
    """Frames (uint8 or float in [0,1]), steering labels in degrees, optional gaze maps."""
    frames: np.ndarray
    steering: np.ndarray
    gaze: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.steering)


def train_driver(model: Model, data: DriverData, epochs: int, batch_size: int, optimizer: OptimizerState,
                 rng: np.random.Generator, on_epoch=None) -> Model:
    """Minimise mean squared steering error with dropout active per integration mode."""
    if len(data) == 0:
        raise ValueError("training set is empty")
    if model.config.integration_mode.needs_gaze and data.gaze is None:
        raise ValueError(f"integration mode {model.config.integration_mode.value} needs gaze maps")
    y = np.asarray(data.steering, dtype=np.float64)

    def loss_fn(idx, r):
        idx = np.sort(idx)
        g = data.gaze[idx] if data.gaze is not None and model.config.integration_mode.needs_gaze else None
        pred = forward_batch(model, data.frames[idx], g, DropoutMode.TRAIN, r)
        return mse_loss(pred, y[idx])

    return fit_minibatch(model, len(data), epochs, batch_size, optimizer, rng, loss_fn, on_epoch)
