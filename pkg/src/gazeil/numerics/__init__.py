"""Tensor arithmetic, reverse-mode differentiation and layer primitives."""
from .gradcheck import GradCheckReport, finite_diff_check
from .ops import (
    DropoutMode,
    affine_forward,
    bce_with_logits,
    concat_channels,
    conv2d_forward,
    flatten,
    l1_map_loss,
    mse_loss,
    relu,
    spatial_log_softmax,
    spatial_modulated_dropout,
    spatial_softmax,
    uniform_dropout,
    upsample_bilinear,
)
from .optim import OptimizerState, optimizer_step, zero_grad
from .tensor import Graph, Node, Tensor, backward

__all__ = [
    "DropoutMode", "GradCheckReport", "Graph", "Node", "OptimizerState", "Tensor",
    "affine_forward", "backward", "bce_with_logits", "concat_channels", "conv2d_forward",
    "finite_diff_check", "flatten", "l1_map_loss", "mse_loss", "optimizer_step", "relu",
    "spatial_log_softmax", "spatial_modulated_dropout", "spatial_softmax",
    "uniform_dropout", "upsample_bilinear", "zero_grad",
]
