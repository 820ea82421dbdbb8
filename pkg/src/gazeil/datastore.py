"""Expert-driven datasets, the GZIM shard format and seen/unseen split bookkeeping.

Shard layout (little-endian)::

    "GZIM" | version u32 | record_count u64
    per record: track_seed u64 | step_index u32 | steering_deg f64 |
                fixation_count u16 | (x f64, y f64, w f64) * count | frame u8 * 66*200
    FNV-1a-64 of every preceding byte (u64)
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Sequence

import numpy as np

from ._accel import njit, pick
from .errors import (
    BadMagicError,
    ChecksumMismatchError,
    TruncatedShardError,
    VersionMismatchError,
)
from .gazemap import Fixation
from .parallel import parallel_map
from .simworld.episode import Scenario, rollout
from .simworld.render import HEIGHT, WIDTH
from .simworld.track import generate_track

MAGIC = b"GZIM"
SHARD_VERSION = 1
MANIFEST_VERSION = 1
FRAME_BYTES = WIDTH * HEIGHT
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_HEADER = struct.Struct("<4sIQ")
_REC_HEAD = struct.Struct("<QIdH")
_FIX = struct.Struct("<ddd")
_SUM = struct.Struct("<Q")


@njit
def _fnv1a_nb(buf):
    h = np.uint64(0xCBF29CE484222325)
    prime = np.uint64(0x100000001B3)
    for i in range(buf.shape[0]):
        h = (h ^ np.uint64(buf[i])) * prime
    return h


def _fnv1a_py(buf):
    h = FNV_OFFSET
    for b in bytes(buf):
        h = ((h ^ b) * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


_fnv1a = pick(_fnv1a_nb, _fnv1a_py)
fnv1a64_numba, fnv1a64_python = _fnv1a_nb, _fnv1a_py


def fnv1a64(data) -> int:
    return int(_fnv1a(np.frombuffer(bytes(data), dtype=np.uint8)))


@dataclass
class DriveRecord:
    frame: np.ndarray  # uint8 [66, 200]
    steering_deg: float
    fixations: List[Fixation]
    track_seed: int
    step_index: int

    def __eq__(self, other):
        if not isinstance(other, DriveRecord):
            return NotImplemented
        return (np.array_equal(self.frame, other.frame) and self.frame.dtype == other.frame.dtype
                and self.steering_deg == other.steering_deg
                and [tuple(f) for f in self.fixations] == [tuple(f) for f in other.fixations]
                and self.track_seed == other.track_seed and self.step_index == other.step_index)


def encode_shard(records: Sequence[DriveRecord]) -> bytes:
    parts = [_HEADER.pack(MAGIC, SHARD_VERSION, len(records))]
    for r in records:
        frame = np.asarray(r.frame)
        if frame.shape != (HEIGHT, WIDTH) or frame.dtype != np.uint8:
            raise ValueError(f"frame must be uint8 [{HEIGHT}, {WIDTH}], got {frame.dtype} {frame.shape}")
        parts.append(_REC_HEAD.pack(int(r.track_seed), int(r.step_index), float(r.steering_deg), len(r.fixations)))
        for f in r.fixations:
            f = Fixation(*f)
            parts.append(_FIX.pack(float(f.x), float(f.y), float(f.weight)))
        parts.append(frame.tobytes())
    body = b"".join(parts)
    return body + _SUM.pack(fnv1a64(body))


def decode_shard(raw: bytes, path="<memory>") -> List[DriveRecord]:
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < _HEADER.size:
        raise TruncatedShardError(f"{path}: truncated header")
    _, version, count = _HEADER.unpack_from(raw, 0)
    if version != SHARD_VERSION:
        raise VersionMismatchError(f"{path}: shard version {version}, expected {SHARD_VERSION}")
    pos, records = _HEADER.size, []
    for _ in range(count):
        if pos + _REC_HEAD.size > len(raw):
            raise TruncatedShardError(f"{path}: truncated in record {len(records)}")
        seed, step, steer, nfix = _REC_HEAD.unpack_from(raw, pos)
        pos += _REC_HEAD.size
        end = pos + nfix * _FIX.size + FRAME_BYTES
        if end > len(raw):
            raise TruncatedShardError(f"{path}: truncated in record {len(records)}")
        fixes = [Fixation(*_FIX.unpack_from(raw, pos + k * _FIX.size)) for k in range(nfix)]
        pos += nfix * _FIX.size
        frame = np.frombuffer(raw, dtype=np.uint8, count=FRAME_BYTES, offset=pos).reshape(HEIGHT, WIDTH).copy()
        pos = end
        records.append(DriveRecord(frame, steer, fixes, seed, step))
    if pos + _SUM.size > len(raw):
        raise TruncatedShardError(f"{path}: missing checksum")
    (stored,) = _SUM.unpack_from(raw, pos)
    if pos + _SUM.size != len(raw):
        raise ChecksumMismatchError(f"{path}: {len(raw) - pos - _SUM.size} trailing bytes after checksum")
    if fnv1a64(raw[:pos]) != stored:
        raise ChecksumMismatchError(f"{path}: checksum mismatch")
    return records


def write_shard(records: Sequence[DriveRecord], path) -> int:
    """Write ``records``; returns the FNV-1a-64 checksum stored in the trailer."""
    raw = encode_shard(records)
    try:
        Path(path).write_bytes(raw)
    except OSError as exc:
        raise OSError(f"cannot write shard {path}: {exc}") from exc
    return _SUM.unpack_from(raw, len(raw) - _SUM.size)[0]


def read_shard(path) -> List[DriveRecord]:
    return decode_shard(Path(path).read_bytes(), path)


# dataset generation

@dataclass
class SimParams:
    n_segments: int = 12
    duration: float = 20.0
    dt: float = 0.05
    train_trials_per_track: int = 2
    cars_every: int = 2  # every k-th trial of a track runs with cars
    steer_noise_deg: float = 3.0
    noise_corr: float = 0.95
    gaze_noise_px: float = 3.0


@dataclass
class EpisodeSpec:
    split: str
    track_seed: int
    trial_seed: int
    cars: bool


def _unique_seeds(rng, n, taken):
    out = []
    while len(out) < n:
        s = int(rng.integers(1, 2**31 - 1))
        if s not in taken:
            taken.add(s)
            out.append(s)
    return out


def plan_episodes(master_seed: int, n_train_tracks: int, n_seen_eval_trials: int, n_unseen_tracks: int,
                  sim: SimParams) -> List[EpisodeSpec]:
    """Deterministic episode list; track and trial seeds are all distinct."""
    if min(n_train_tracks, n_seen_eval_trials, n_unseen_tracks) < 1:
        raise ValueError("all split counts must be >= 1")
    rng = np.random.default_rng([int(master_seed), 0xDA7A])
    taken: set = set()
    train_tracks = _unique_seeds(rng, n_train_tracks, taken)
    unseen_tracks = _unique_seeds(rng, n_unseen_tracks, taken)
    plan = []
    for t in train_tracks:
        for k, trial in enumerate(_unique_seeds(rng, sim.train_trials_per_track, taken)):
            plan.append(EpisodeSpec("train", t, trial, k % sim.cars_every == 0))
    for t in train_tracks:
        for k, trial in enumerate(_unique_seeds(rng, n_seen_eval_trials, taken)):
            plan.append(EpisodeSpec("seen_eval", t, trial, k % sim.cars_every == 0))
    for t in unseen_tracks:
        for k, trial in enumerate(_unique_seeds(rng, n_seen_eval_trials, taken)):
            plan.append(EpisodeSpec("unseen_eval", t, trial, k % sim.cars_every == 0))
    return plan


def _episode_views(spec: EpisodeSpec, sim: SimParams):
    track = generate_track(spec.track_seed, sim.n_segments)
    scenario = Scenario(track, cars=spec.cars, duration=sim.duration, dt=sim.dt)
    noise_rng = np.random.default_rng([spec.trial_seed, 0x5EED])
    noise = [0.0]
    scale = sim.steer_noise_deg * np.sqrt(1.0 - sim.noise_corr ** 2)

    def control(frame, fixations, state, expert):
        noise[0] = sim.noise_corr * noise[0] + scale * noise_rng.standard_normal()
        return expert + noise[0]

    return rollout(scenario, control, spec.trial_seed, sim.gaze_noise_px)


def record_episode(spec: EpisodeSpec, sim: SimParams) -> List[DriveRecord]:
    """Expert demonstration with correlated steering noise injected into the executed command.

    Labels are always the clean expert command, so the recordings include recoveries.
    """
    return [DriveRecord(v.frame, v.expert_deg, list(v.fixations), spec.track_seed, v.index)
            for v in _episode_views(spec, sim)]


def replay_states(spec: EpisodeSpec, sim: SimParams):
    """Simulator states of a recorded episode, reproduced from its seeds."""
    return [v.state for v in _episode_views(spec, sim)]


def shard_name(spec: EpisodeSpec) -> str:
    return f"shards/{spec.split}_t{spec.track_seed}_r{spec.trial_seed}.gzim"


def _build_one(job):
    spec, sim, root = job
    records = record_episode(spec, sim)
    checksum = write_shard(records, Path(root) / shard_name(spec))
    return {"path": shard_name(spec), "split": spec.split, "track_seed": spec.track_seed,
            "trial_seed": spec.trial_seed, "cars": spec.cars, "records": len(records),
            "checksum": f"{checksum:016x}"}


def build_dataset(out_dir, sim: SimParams | None = None, n_train_tracks: int = 4, n_seen_eval_trials: int = 1,
                  n_unseen_tracks: int = 4, master_seed: int = 0) -> dict:
    """Generate every split under ``out_dir`` and write ``manifest.json``; returns the manifest."""
    sim = sim or SimParams()
    root = Path(out_dir)
    (root / "shards").mkdir(parents=True, exist_ok=True)
    plan = plan_episodes(master_seed, n_train_tracks, n_seen_eval_trials, n_unseen_tracks, sim)
    shards = sorted(parallel_map(_build_one, [(spec, sim, str(root)) for spec in plan]),
                    key=lambda e: e["path"])
    tracks = {str(p.track_seed): ("unseen" if p.split == "unseen_eval" else "train") for p in plan}
    manifest = {
        "format_version": MANIFEST_VERSION,
        "shard_version": SHARD_VERSION,
        "master_seed": int(master_seed),
        "frame": {"width": WIDTH, "height": HEIGHT},
        "sim": asdict(sim),
        "counts": {"n_train_tracks": n_train_tracks, "n_seen_eval_trials": n_seen_eval_trials,
                   "n_unseen_tracks": n_unseen_tracks},
        "shards": shards,
        "tracks": dict(sorted(tracks.items())),
        "trials": dict(sorted((str(p.trial_seed), p.split) for p in plan)),
    }
    path = root / "manifest.json"
    try:
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    except OSError as exc:
        raise OSError(f"cannot write manifest {path}: {exc}") from exc
    return manifest


def load_manifest(data_dir) -> dict:
    return json.loads((Path(data_dir) / "manifest.json").read_text())


def check_split_hygiene(manifest: dict) -> None:
    """Raise ValueError unless the manifest's splits are disjoint as required."""
    train_tracks = {e["track_seed"] for e in manifest["shards"] if e["split"] == "train"}
    unseen_tracks = {e["track_seed"] for e in manifest["shards"] if e["split"] == "unseen_eval"}
    if train_tracks & unseen_tracks:
        raise ValueError(f"unseen tracks also used in training: {sorted(train_tracks & unseen_tracks)}")
    trials = [e["trial_seed"] for e in manifest["shards"]]
    if len(trials) != len(set(trials)):
        raise ValueError("a trial seed appears in more than one shard")
    seen_tracks = {e["track_seed"] for e in manifest["shards"] if e["split"] == "seen_eval"}
    if not seen_tracks <= train_tracks:
        raise ValueError("seen_eval trials must run on training tracks")


@dataclass
class DriveSamples:
    """Records of one split, column-stacked for training."""
    frames: np.ndarray  # uint8 [N, H, W]
    steering: np.ndarray  # float64 [N]
    fixations: list = field(default_factory=list)
    track_seeds: np.ndarray = None
    step_index: np.ndarray = None

    def __len__(self):
        return len(self.steering)

    @classmethod
    def from_records(cls, records: Sequence[DriveRecord]) -> "DriveSamples":
        if not records:
            return cls(np.zeros((0, HEIGHT, WIDTH), np.uint8), np.zeros(0), [], np.zeros(0, np.int64),
                       np.zeros(0, np.int64))
        return cls(np.stack([r.frame for r in records]), np.array([r.steering_deg for r in records]),
                   [list(r.fixations) for r in records], np.array([r.track_seed for r in records], np.int64),
                   np.array([r.step_index for r in records], np.int64))

    def subset(self, idx) -> "DriveSamples":
        idx = np.asarray(idx)
        return DriveSamples(self.frames[idx], self.steering[idx], [self.fixations[i] for i in idx],
                            self.track_seeds[idx], self.step_index[idx])


def load_split(data_dir, split: str) -> DriveSamples:
    manifest = load_manifest(data_dir)
    records: List[DriveRecord] = []
    for entry in manifest["shards"]:
        if entry["split"] == split:
            records.extend(read_shard(Path(data_dir) / entry["path"]))
    return DriveSamples.from_records(records)
