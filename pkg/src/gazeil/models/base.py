"""Model container, fan-in initialisation, the minibatch loop and checkpoints."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List

import numpy as np

from ..errors import ShardError
from ..numerics import OptimizerState, Tensor, backward, optimizer_step, zero_grad
from .config import CONFIG_KINDS

CHECKPOINT_MAGIC = b"GZMD"
CHECKPOINT_VERSION = 1


class CheckpointError(ShardError):
    """Unreadable or corrupted model checkpoint."""


@dataclass
class Model:
    kind: str  # "driver", "gaze" or "discriminator"
    config: object
    params: Dict[str, Tensor] = field(default_factory=dict)
    training_history: List[float] = field(default_factory=list)

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int, gain: float = 6.0) -> Tensor:
    bound = np.sqrt(gain / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def conv_params(rng, name, c_in, spec, params):
    fan_in = c_in * spec.kernel * spec.kernel
    params[f"{name}.w"] = uniform_fan_in(rng, (spec.out_channels, c_in, spec.kernel, spec.kernel), fan_in)
    params[f"{name}.b"] = Tensor(np.zeros(spec.out_channels), requires_grad=True)


def dense_params(rng, name, n_in, n_out, params, gain=6.0):
    params[f"{name}.w"] = uniform_fan_in(rng, (n_out, n_in), n_in, gain)
    params[f"{name}.b"] = Tensor(np.zeros(n_out), requires_grad=True)


def fit_minibatch(model: Model, n: int, epochs: int, batch_size: int, optimizer: OptimizerState,
                  rng: np.random.Generator, loss_fn: Callable[[np.ndarray, np.random.Generator], Tensor],
                  on_epoch: Callable[[int, float], None] | None = None) -> Model:
    """Shuffled minibatch descent; appends the mean batch loss of each epoch to the history."""
    if n <= 0:
        raise ValueError("training set is empty")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    params = list(model.params.values())
    for epoch in range(int(epochs)):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            loss = loss_fn(idx, rng)
            backward(loss, params=params)
            optimizer_step(model.params, optimizer)
            zero_grad(params)
            total += loss.item() * len(idx)
            count += len(idx)
        model.training_history.append(total / count)
        if on_epoch is not None:
            on_epoch(epoch, model.training_history[-1])
    return model


# checkpoints: magic, u32 version, u32-length config JSON, u32 param count,
# then per param: u16 name length, name, u8 rank, u64 extents, little-endian f64 data

def encode_model(model: Model) -> bytes:
    cfg = json.dumps({"kind": model.kind, "config": model.config.to_dict(),
                      "training_history": model.training_history}, sort_keys=True).encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(cfg)), cfg,
             struct.pack("<I", len(model.params))]
    for name, p in model.params.items():
        raw = name.encode()
        parts.append(struct.pack("<HB", len(raw), p.ndim) + raw)
        parts.append(struct.pack(f"<{p.ndim}Q", *p.shape))
        parts.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, raw, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_model(raw: bytes, path="<memory>") -> Model:
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    r = _Reader(raw, path)
    r.take(4)
    version, cfg_len = r.unpack("<II")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    try:
        meta = json.loads(r.take(cfg_len))
        config = CONFIG_KINDS[meta["kind"]].from_dict(meta["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: bad config block: {exc}") from exc
    (count,) = r.unpack("<I")
    params = {}
    for _ in range(count):
        name_len, rank = r.unpack("<HB")
        name = r.take(name_len).decode()
        shape = r.unpack(f"<{rank}Q") if rank else ()
        size = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
        params[name] = Tensor(data, requires_grad=True)
    if r.pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - r.pos} trailing bytes")
    return Model(meta["kind"], config, params, list(meta.get("training_history", [])))


def save_model(model: Model, path) -> None:
    Path(path).write_bytes(encode_model(model))


def load_model(path) -> Model:
    return decode_model(Path(path).read_bytes(), path)
