"""Experiment configuration: TOML in, fully resolved TOML out."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

try:
    import tomllib as tomli
except ImportError:  # python < 3.11
    import tomli
import tomli_w

from .datastore import SimParams
from .errors import ConfigurationError


@dataclass
class DataSection:
    n_train_tracks: int = 6
    n_seen_eval_trials: int = 1
    n_unseen_tracks: int = 6
    train_stride: int = 2  # use every k-th recorded frame for training
    eval_stride: int = 4


@dataclass
class DriverSection:
    # PilotNet geometry at half width: a desk-scale default for one CPU core
    convs: list = field(default_factory=lambda: [[12, 5, 2], [18, 5, 2], [24, 5, 2], [32, 3, 1], [32, 3, 1]])
    dense: list = field(default_factory=lambda: [50, 25, 10, 1])
    uniform_keep_prob: float = 0.5
    p_base: float = 0.25
    epochs: int = 8
    batch_size: int = 32
    learning_rate: float = 1e-3
    n_seeds: int = 5


@dataclass
class GazeSection:
    encoder: list = field(default_factory=lambda: [[8, 5, 2], [16, 5, 2], [24, 3, 1], [24, 3, 1]])
    loss_mode: str = "l1"
    l1_weight: float = 100.0
    adv_weight: float = 1.0
    epochs: int = 8
    batch_size: int = 32
    learning_rate: float = 2e-3
    disc_learning_rate: float = 2e-4


@dataclass
class ClosedLoopSection:
    episodes: int = 20
    duration: float = 30.0
    cars: str = "both"  # on, off or both
    gaze_noise_px: float = 3.0


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "runs/default"
    integration_mode: str = "all"  # "all" runs every method row
    gaze_source: str = "oracle"
    sim: SimParams = field(default_factory=SimParams)
    data: DataSection = field(default_factory=DataSection)
    driver: DriverSection = field(default_factory=DriverSection)
    gaze: GazeSection = field(default_factory=GazeSection)
    closedloop: ClosedLoopSection = field(default_factory=ClosedLoopSection)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @property
    def data_dir(self) -> Path:
        return self.out_dir / "data"


INTEGRATION_MODES = ("nogaze", "gaze-input", "gaze-dropout", "central-blob")
GAZE_SOURCES = ("oracle", "predictor", "central")


def _merge(obj, values: dict, where: str):
    known = {f.name: f for f in fields(obj)}
    for key, value in values.items():
        if key not in known:
            raise ConfigurationError(f"unknown config key '{where}{key}'")
        current = getattr(obj, key)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigurationError(f"config key '{where}{key}' must be a table")
            _merge(current, value, f"{where}{key}.")
            continue
        if isinstance(current, bool) != isinstance(value, bool):
            raise ConfigurationError(f"config key '{where}{key}' has the wrong type")
        if isinstance(current, (int, float)) and not isinstance(current, bool):
            if not isinstance(value, (int, float)) or (isinstance(current, int) and not isinstance(value, int)):
                raise ConfigurationError(f"config key '{where}{key}' must be a number of type "
                                         f"{type(current).__name__}")
            value = type(current)(value)
        elif isinstance(current, str) and not isinstance(value, str):
            raise ConfigurationError(f"config key '{where}{key}' must be a string")
        elif isinstance(current, list) and not isinstance(value, list):
            raise ConfigurationError(f"config key '{where}{key}' must be an array")
        setattr(obj, key, value)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    if cfg.integration_mode not in INTEGRATION_MODES + ("all",):
        raise ConfigurationError(f"integration_mode must be 'all' or one of {INTEGRATION_MODES}")
    if cfg.gaze_source not in GAZE_SOURCES:
        raise ConfigurationError(f"gaze_source must be one of {GAZE_SOURCES}")
    if cfg.closedloop.cars not in ("on", "off", "both"):
        raise ConfigurationError("closedloop.cars must be on, off or both")
    if cfg.gaze.loss_mode not in ("l1", "adversarial"):
        raise ConfigurationError("gaze.loss_mode must be l1 or adversarial")
    if cfg.seed < 0:
        raise ConfigurationError("seed must be non-negative")
    for name in ("train_stride", "eval_stride"):
        if getattr(cfg.data, name) < 1:
            raise ConfigurationError(f"data.{name} must be >= 1")
    if cfg.driver.n_seeds < 1 or cfg.closedloop.episodes < 1:
        raise ConfigurationError("driver.n_seeds and closedloop.episodes must be >= 1")
    return cfg


def from_dict(values: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    _merge(cfg, values, "")
    return validate(cfg)


def load(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            values = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    return from_dict(values)


def to_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)


def dumps(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def write_resolved(cfg: ExperimentConfig, directory=None) -> Path:
    """Write the fully resolved config next to a run's outputs."""
    path = Path(directory or cfg.out_dir) / "resolved_config.toml"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(cfg))
    return path
