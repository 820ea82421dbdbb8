"""Configuration records for the driver and gaze networks."""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field
from typing import List, Tuple

from ..errors import ConfigurationError
from ..numerics.kernels import conv_output_size


class IntegrationMode(enum.Enum):
    NO_GAZE = "nogaze"
    GAZE_AS_INPUT = "gaze-input"
    GAZE_DROPOUT = "gaze-dropout"
    CENTRAL_BLOB_DROPOUT = "central-blob"

    @property
    def needs_gaze(self) -> bool:
        return self in (IntegrationMode.GAZE_AS_INPUT, IntegrationMode.GAZE_DROPOUT)


class LossMode(enum.Enum):
    L1 = "l1"
    ADVERSARIAL = "adversarial"


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: int
    stride: int = 1


PILOTNET_CONVS = (ConvSpec(24, 5, 2), ConvSpec(36, 5, 2), ConvSpec(48, 5, 2), ConvSpec(64, 3, 1), ConvSpec(64, 3, 1))
PILOTNET_DENSE = (100, 50, 10, 1)


def _as_specs(convs) -> Tuple[ConvSpec, ...]:
    return tuple(c if isinstance(c, ConvSpec) else ConvSpec(*c) for c in convs)


def conv_chain(height: int, width: int, convs, names=None) -> List[Tuple[int, int]]:
    """Spatial sizes after each valid conv; raises naming the first layer that does not fit."""
    sizes = []
    h, w = height, width
    for i, spec in enumerate(convs):
        name = names[i] if names else f"conv{i + 1}"
        if spec.out_channels < 1 or spec.kernel < 1 or spec.stride < 1:
            raise ConfigurationError(f"{name}: channels, kernel and stride must be positive")
        if spec.kernel > h or spec.kernel > w:
            raise ConfigurationError(f"{name}: kernel {spec.kernel} does not fit input {h}x{w}")
        h, w = conv_output_size(h, spec.kernel, spec.stride), conv_output_size(w, spec.kernel, spec.stride)
        sizes.append((h, w))
    return sizes


@dataclass(frozen=True)
class ModelConfig:
    """PilotNet-style driver: five valid convolutions then four dense layers."""
    input_width: int = 200
    input_height: int = 66
    input_channels: int = 0  # 0 picks the channel count implied by integration_mode
    convs: Tuple[ConvSpec, ...] = PILOTNET_CONVS
    dense: Tuple[int, ...] = PILOTNET_DENSE
    integration_mode: IntegrationMode = IntegrationMode.NO_GAZE
    uniform_keep_prob: float = 0.5
    p_base: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "convs", _as_specs(self.convs))
        object.__setattr__(self, "dense", tuple(int(d) for d in self.dense))
        object.__setattr__(self, "integration_mode", IntegrationMode(self.integration_mode))
        if self.input_channels == 0:
            ch = 2 if self.integration_mode is IntegrationMode.GAZE_AS_INPUT else 1
            object.__setattr__(self, "input_channels", ch)

    @property
    def channels(self) -> int:
        return self.input_channels

    def validate(self) -> List[Tuple[int, int]]:
        if len(self.convs) != 5:
            raise ConfigurationError(f"expected 5 conv layers, got {len(self.convs)}")
        if len(self.dense) != 4:
            raise ConfigurationError(f"expected 4 dense layers, got {len(self.dense)}")
        want = 2 if self.integration_mode is IntegrationMode.GAZE_AS_INPUT else 1
        if self.input_channels != want:
            raise ConfigurationError(f"conv1: mode {self.integration_mode.value} needs {want} input channels, "
                                     f"got {self.input_channels}")
        sizes = conv_chain(self.input_height, self.input_width, self.convs)
        for i, width in enumerate(self.dense):
            if width < 1:
                raise ConfigurationError(f"fc{i + 1}: width must be positive")
        if self.dense[-1] != 1:
            raise ConfigurationError(f"fc4: final width must be 1 (steering), got {self.dense[-1]}")
        if not (0.0 < self.uniform_keep_prob <= 1.0 and 0.0 < self.p_base <= 1.0):
            raise ConfigurationError("keep probabilities must lie in (0, 1]")
        return sizes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["convs"] = [[c.out_channels, c.kernel, c.stride] for c in self.convs]
        d["dense"] = list(self.dense)
        d["integration_mode"] = self.integration_mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class GazePredictorConfig:
    """Encoder of valid convolutions, a 1x1 projection, bilinear upsampling to the
    input size, a learned full-resolution logit prior and a pixelwise softmax."""
    input_width: int = 200
    input_height: int = 66
    encoder: Tuple[ConvSpec, ...] = (ConvSpec(8, 5, 2), ConvSpec(16, 5, 2), ConvSpec(24, 3, 1), ConvSpec(24, 3, 1))
    learn_prior: bool = True
    loss_mode: LossMode = LossMode.L1
    l1_weight: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "encoder", _as_specs(self.encoder))
        object.__setattr__(self, "loss_mode", LossMode(self.loss_mode))

    def validate(self):
        if not self.encoder:
            raise ConfigurationError("encoder needs at least one conv layer")
        return conv_chain(self.input_height, self.input_width, self.encoder,
                          [f"enc{i + 1}" for i in range(len(self.encoder))])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder"] = [[c.out_channels, c.kernel, c.stride] for c in self.encoder]
        d["loss_mode"] = self.loss_mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GazePredictorConfig":
        return cls(**d)


@dataclass(frozen=True)
class DiscriminatorConfig:
    """Small conv classifier over stacked (image, scaled gaze map) pairs."""
    input_width: int = 200
    input_height: int = 66
    convs: Tuple[ConvSpec, ...] = (ConvSpec(8, 5, 2), ConvSpec(16, 5, 2), ConvSpec(16, 3, 2))

    def __post_init__(self):
        object.__setattr__(self, "convs", _as_specs(self.convs))

    def validate(self):
        return conv_chain(self.input_height, self.input_width, self.convs,
                          [f"disc{i + 1}" for i in range(len(self.convs))])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["convs"] = [[c.out_channels, c.kernel, c.stride] for c in self.convs]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DiscriminatorConfig":
        return cls(**d)


CONFIG_KINDS = {"driver": ModelConfig, "gaze": GazePredictorConfig, "discriminator": DiscriminatorConfig}
