"""Driver networks, the gaze predictor and model checkpoints."""
from .base import CheckpointError, Model, fit_minibatch, load_model, save_model
from .config import ConvSpec, DiscriminatorConfig, GazePredictorConfig, IntegrationMode, LossMode, ModelConfig
from .driver import (
    DriverData,
    build_pilotnet,
    forward_batch,
    forward_driver,
    predict_steering,
    preprocess_gaze_as_input,
    train_driver,
)
from .gaze import (
    GazeData,
    GazeHyper,
    build_discriminator,
    build_gaze_predictor,
    discriminator_accuracy,
    discriminator_logits,
    discriminator_loss,
    evaluate_gaze,
    gaze_forward,
    generator_loss,
    predict_gaze,
    predict_gaze_batched,
    train_gaze_adversarial,
    train_gaze_supervised,
)

__all__ = [
    "CheckpointError", "ConvSpec", "DiscriminatorConfig", "DriverData", "GazeData", "GazeHyper",
    "GazePredictorConfig", "IntegrationMode", "LossMode", "Model", "ModelConfig", "build_discriminator",
    "build_gaze_predictor", "build_pilotnet", "discriminator_accuracy", "discriminator_logits",
    "discriminator_loss", "evaluate_gaze", "fit_minibatch", "forward_batch", "forward_driver", "gaze_forward",
    "generator_loss", "load_model", "predict_gaze", "predict_gaze_batched", "predict_steering",
    "preprocess_gaze_as_input", "save_model", "train_driver", "train_gaze_adversarial", "train_gaze_supervised",
]
