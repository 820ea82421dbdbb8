"""End-to-end experiment steps shared by the command line and the acceptance suite.

Artifacts live under one output directory::

    data/            shards and manifest.json
    gaze.gzmd        trained gaze predictor
    drivers/         one checkpoint per (method, seed)
    tables/          CSV tables
    traces/          closed-loop JSON-lines traces
    render/          PGM frames, heatmaps and overlays
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import datastore, gazemap
from .expconfig import ExperimentConfig, write_resolved
from .models import (
    DiscriminatorConfig,
    DriverData,
    GazeData,
    GazeHyper,
    GazePredictorConfig,
    ModelConfig,
    build_discriminator,
    build_gaze_predictor,
    build_pilotnet,
    load_model,
    predict_gaze,
    predict_gaze_batched,
    predict_steering,
    save_model,
    train_driver,
    train_gaze_adversarial,
    train_gaze_supervised,
)
from .models.driver import forward_driver
from .numerics import OptimizerState
from .parallel import parallel_map
from .simworld import GazeSource, Scenario, closed_loop_metrics, generate_track, run_episode, write_trace_jsonl
from .simworld.episode import rollout
from .simworld.render import HEIGHT, WIDTH, render_driver_view
from .simworld.vehicle import expert_steering

log = logging.getLogger("gazeil")


@dataclass(frozen=True)
class Method:
    key: str
    label: str
    mode: str
    gaze: Optional[str]  # oracle, predictor or None


METHODS = (
    Method("no_gaze", "No gaze", "nogaze", None),
    Method("real_input", "Real gaze as input", "gaze-input", "oracle"),
    Method("est_input", "Estimated gaze as input", "gaze-input", "predictor"),
    Method("real_dropout", "Real gaze dropout", "gaze-dropout", "oracle"),
    Method("est_dropout", "Estimated gaze dropout", "gaze-dropout", "predictor"),
    Method("blob_dropout", "Central blob dropout", "central-blob", None),
)
METHOD_BY_KEY = {m.key: m for m in METHODS}

# closed-loop rows use the gaze network running online, as deployed
CLOSED_LOOP_METHODS = (
    ("Gaze dropout", "est_dropout"),
    ("Gaze as input", "est_input"),
    ("No gaze", "no_gaze"),
)


def method_for(mode: str, gaze: Optional[str]) -> Method:
    if mode in ("nogaze", "central-blob"):
        return next(m for m in METHODS if m.mode == mode)
    source = gaze or "oracle"
    if source == "central":
        raise ValueError(f"mode {mode} takes --gaze oracle or predictor")
    return next(m for m in METHODS if m.mode == mode and m.gaze == source)


# tables

def format_table(header: Sequence[str], rows: List[Sequence]) -> tuple:
    """CSV text and an aligned plain-text rendering of the same rows."""
    def cell(v):
        if v is None:
            return "N/A"
        if isinstance(v, float):
            return f"{v:.4f}"
        return str(v)

    cells = [[cell(v) for v in r] for r in rows]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(cells)
    widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in cells]
    return buf.getvalue(), "\n".join(lines)


def write_table(cfg: ExperimentConfig, name: str, header, rows) -> tuple:
    csv_text, text = format_table(header, rows)
    path = cfg.out_dir / "tables" / f"{name}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text)
    return csv_text, text


# data

def gen_data(cfg: ExperimentConfig) -> dict:
    write_resolved(cfg)
    d = cfg.data
    manifest = datastore.build_dataset(cfg.data_dir, cfg.sim, d.n_train_tracks, d.n_seen_eval_trials,
                                       d.n_unseen_tracks, cfg.seed)
    datastore.check_split_hygiene(manifest)
    return manifest


SPLITS = {"train": "train", "seen": "seen_eval", "unseen": "unseen_eval"}


def load_samples(cfg: ExperimentConfig, split: str, stride: Optional[int] = None) -> datastore.DriveSamples:
    if not (cfg.data_dir / "manifest.json").exists():
        raise FileNotFoundError(f"no dataset at {cfg.data_dir}; run gen-data first")
    samples = datastore.load_split(cfg.data_dir, SPLITS.get(split, split))
    if stride is None:
        stride = cfg.data.train_stride if split == "train" else cfg.data.eval_stride
    return samples.subset(np.arange(0, len(samples), stride))


def truth_maps(samples: datastore.DriveSamples) -> np.ndarray:
    return gazemap.render_batch(samples.fixations, WIDTH, HEIGHT).astype(np.float32)


# gaze network

def gaze_config(cfg: ExperimentConfig) -> GazePredictorConfig:
    g = cfg.gaze
    return GazePredictorConfig(encoder=tuple(tuple(c) for c in g.encoder), loss_mode=g.loss_mode,
                               l1_weight=g.l1_weight)


def gaze_path(cfg: ExperimentConfig) -> Path:
    return cfg.out_dir / "gaze.gzmd"


def train_gaze(cfg: ExperimentConfig, samples: Optional[datastore.DriveSamples] = None):
    write_resolved(cfg)
    samples = samples if samples is not None else load_samples(cfg, "train")
    data = GazeData(samples.frames, truth_maps(samples))
    g = cfg.gaze
    hyper = GazeHyper(g.epochs, g.batch_size, g.learning_rate, g.adv_weight, g.disc_learning_rate)
    rng = np.random.default_rng([cfg.seed, 0x6A2E])
    model = build_gaze_predictor(gaze_config(cfg), rng)

    def report(epoch, loss):
        log.info("gaze epoch %d loss %.4f", epoch, loss)

    if g.loss_mode == "adversarial":
        disc = build_discriminator(DiscriminatorConfig(), rng)
        train_gaze_adversarial(model, disc, data, g.l1_weight, hyper, rng, report)
    else:
        train_gaze_supervised(model, data, hyper, rng, on_epoch=report)
    save_model(model, gaze_path(cfg))
    return model


def load_gaze(cfg: ExperimentConfig):
    path = gaze_path(cfg)
    if not path.exists():
        raise FileNotFoundError(f"no gaze model at {path}; run train-gaze first")
    return load_model(path)


def eval_gaze(cfg: ExperimentConfig, model=None) -> List[tuple]:
    """Rows ``(method, split, kl, cc)`` for the predictor and the central-blob baseline."""
    model = model or load_gaze(cfg)
    blob = gazemap.central_blob(WIDTH, HEIGHT)
    rows = []
    for split in ("seen", "unseen"):
        samples = load_samples(cfg, split)
        truth = truth_maps(samples).astype(np.float64)
        pred = predict_gaze_batched(model, samples.frames)
        for method, maps in (("estimated", pred), ("central_blob", None)):
            kls, ccs = [], []
            for i, t in enumerate(truth):
                est = blob if maps is None else maps[i]
                kls.append(gazemap.kl_divergence(t, est))
                ccs.append(gazemap.correlation_coefficient(t, est))
            rows.append((method, split, float(np.mean(kls)), float(np.mean(ccs))))
    return rows


# drivers

def driver_config(cfg: ExperimentConfig, mode: str) -> ModelConfig:
    d = cfg.driver
    return ModelConfig(convs=tuple(tuple(c) for c in d.convs), dense=tuple(d.dense), integration_mode=mode,
                       uniform_keep_prob=d.uniform_keep_prob, p_base=d.p_base)


def driver_path(cfg: ExperimentConfig, method: Method, seed: int) -> Path:
    return cfg.out_dir / "drivers" / f"{method.key}_s{seed}.gzmd"


def driver_seeds(cfg: ExperimentConfig) -> List[int]:
    return [cfg.seed + k for k in range(cfg.driver.n_seeds)]


class GazeCache:
    """Gaze maps per (split, source), computed once per process."""

    def __init__(self, cfg: ExperimentConfig, gaze_model=None):
        self.cfg = cfg
        self._model = gaze_model
        self.samples: Dict[str, datastore.DriveSamples] = {}
        self.maps: Dict[tuple, np.ndarray] = {}

    def split(self, name: str) -> datastore.DriveSamples:
        if name not in self.samples:
            self.samples[name] = load_samples(self.cfg, name)
        return self.samples[name]

    def gaze_model(self):
        if self._model is None:
            self._model = load_gaze(self.cfg)
        return self._model

    def get(self, split: str, source: Optional[str]) -> Optional[np.ndarray]:
        if source is None:
            return None
        key = (split, source)
        if key not in self.maps:
            s = self.split(split)
            if source == "oracle":
                self.maps[key] = truth_maps(s)
            else:
                self.maps[key] = predict_gaze_batched(self.gaze_model(), s.frames).astype(np.float32)
        return self.maps[key]


def train_one_driver(cfg: ExperimentConfig, method: Method, seed: int, cache: Optional[GazeCache] = None):
    cache = cache or GazeCache(cfg)
    samples = cache.split("train")
    data = DriverData(samples.frames, samples.steering, cache.get("train", method.gaze))
    rng = np.random.default_rng([seed, 0xD51])
    model = build_pilotnet(driver_config(cfg, method.mode), rng)
    opt = OptimizerState("adam", cfg.driver.learning_rate)

    def report(epoch, loss):
        log.info("%s seed %d epoch %d loss %.4f", method.key, seed, epoch, loss)

    train_driver(model, data, cfg.driver.epochs, cfg.driver.batch_size, opt, rng, report)
    path = driver_path(cfg, method, seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, path)
    return model


def train_drivers(cfg: ExperimentConfig, methods: Sequence[Method] = METHODS, cache: Optional[GazeCache] = None,
                  skip_existing: bool = False) -> List[Path]:
    write_resolved(cfg)
    cache = cache or GazeCache(cfg)
    done = []
    for method in methods:
        for seed in driver_seeds(cfg):
            path = driver_path(cfg, method, seed)
            if not (skip_existing and path.exists()):
                train_one_driver(cfg, method, seed, cache)
            done.append(path)
    return done


def offline_errors(cfg: ExperimentConfig, methods: Sequence[Method] = METHODS,
                   cache: Optional[GazeCache] = None) -> Dict[str, Dict[str, List[float]]]:
    """Mean absolute steering error (degrees) per method, split and seed."""
    cache = cache or GazeCache(cfg)
    out: Dict[str, Dict[str, List[float]]] = {}
    for method in methods:
        paths = [driver_path(cfg, method, s) for s in driver_seeds(cfg)]
        missing = [str(p) for p in paths if not p.exists()]
        if missing:
            raise FileNotFoundError(f"missing driver checkpoints: {', '.join(missing)}")
        per = out.setdefault(method.key, {"seen": [], "unseen": []})
        for path in paths:
            model = load_model(path)
            for split in ("seen", "unseen"):
                s = cache.split(split)
                pred = predict_steering(model, s.frames, cache.get(split, method.gaze))
                per[split].append(float(np.mean(np.abs(pred - s.steering))))
    return out


def eval_offline(cfg: ExperimentConfig, cache: Optional[GazeCache] = None) -> List[tuple]:
    """Rows ``(method, seen_deg, unseen_deg, seen_std, unseen_std, n_seeds)``."""
    errs = offline_errors(cfg, METHODS, cache)
    rows = []
    for m in METHODS:
        e = errs[m.key]
        rows.append((m.label, float(np.mean(e["seen"])), float(np.mean(e["unseen"])),
                     float(np.std(e["seen"])), float(np.std(e["unseen"])), len(e["seen"])))
    return rows


def expert_offline_error(cfg: ExperimentConfig, split: str = "unseen") -> float:
    """Replay every recorded episode and score the privileged expert against the stored labels."""
    manifest = datastore.load_manifest(cfg.data_dir)
    errors = []
    for entry in manifest["shards"]:
        if entry["split"] != SPLITS[split]:
            continue
        spec = datastore.EpisodeSpec(entry["split"], entry["track_seed"], entry["trial_seed"], entry["cars"])
        records = datastore.read_shard(cfg.data_dir / entry["path"])
        track = generate_track(spec.track_seed, cfg.sim.n_segments)
        replay = datastore.replay_states(spec, cfg.sim)
        for rec, state in zip(records, replay):
            errors.append(abs(expert_steering(track, state) - rec.steering_deg))
    return float(np.mean(errors)) if errors else 0.0


# closed loop

class DriverPolicy:
    """Wraps a driver checkpoint as an episode policy ``(frame, gaze_map) -> degrees``."""

    def __init__(self, model):
        self.model = model

    def __call__(self, frame, gaze):
        return forward_driver(self.model, frame, gaze)


def closed_loop_tracks(cfg: ExperimentConfig) -> List[int]:
    manifest = datastore.load_manifest(cfg.data_dir)
    return sorted({e["track_seed"] for e in manifest["shards"] if e["split"] == "unseen_eval"})


def _episode_job(job):
    cfg, method_key, seed_model, track_seed, episode_seed, cars, trace_path = job
    method = METHOD_BY_KEY[method_key]
    model = load_model(driver_path(cfg, method, seed_model))
    needs_gaze = method.gaze is not None
    gaze_model = load_gaze(cfg) if needs_gaze and method.gaze == "predictor" else None
    source = {None: GazeSource.NONE_REQUIRED, "oracle": GazeSource.ORACLE,
              "predictor": GazeSource.PREDICTOR}[method.gaze]
    if method.mode == "central-blob":
        source = GazeSource.NONE_REQUIRED
    scenario = Scenario(generate_track(track_seed, cfg.sim.n_segments), cars=cars, duration=cfg.closedloop.duration,
                        dt=cfg.sim.dt)
    predictor = (lambda f: predict_gaze(gaze_model, f)) if gaze_model is not None else None
    result = run_episode(DriverPolicy(model), scenario, source, episode_seed, gaze_predictor=predictor,
                         gaze_noise=cfg.closedloop.gaze_noise_px, keep_trace=trace_path is not None)
    if trace_path is not None:
        write_trace_jsonl(trace_path, result)
        result.trace = []
    return result


def closed_loop_jobs(cfg: ExperimentConfig, method_key: str, cars: bool, write_traces: bool = True):
    tracks = closed_loop_tracks(cfg)
    seeds = driver_seeds(cfg)
    jobs = []
    for i in range(cfg.closedloop.episodes):
        trace = None
        if write_traces:
            trace = cfg.out_dir / "traces" / f"{method_key}_{'cars' if cars else 'nocars'}_e{i:03d}.jsonl"
            trace.parent.mkdir(parents=True, exist_ok=True)
        # fresh episode seeds, disjoint from the recorded trial seeds' stream
        episode_seed = int(np.random.default_rng([cfg.seed, 0xC105, i]).integers(1, 2**31 - 1))
        jobs.append((cfg, method_key, seeds[i % len(seeds)], tracks[i % len(tracks)], episode_seed, cars, trace))
    return jobs


def eval_closedloop(cfg: ExperimentConfig, methods=CLOSED_LOOP_METHODS, write_traces: bool = True) -> List[tuple]:
    """Rows ``(method, cars, success_rate, km_between_infractions, infractions, km, episodes)``."""
    write_resolved(cfg)
    settings = {"on": (True,), "off": (False,), "both": (True, False)}[cfg.closedloop.cars]
    rows = []
    for cars in settings:
        for label, key in methods:
            results = parallel_map(_episode_job, closed_loop_jobs(cfg, key, cars, write_traces))
            m = closed_loop_metrics(results)
            rows.append((label, "W/cars" if cars else "W/o cars",
                         m["overtake_success_rate"] if cars else None,
                         m["mean_distance_between_infractions_km"], m["infractions"], m["distance_km"],
                         len(results)))
    return rows


# render

def overlay(frame: np.ndarray, heat: np.ndarray, alpha: float = 0.6) -> np.ndarray:
    """Grayscale overlay: the frame dimmed where the heatmap is low."""
    h = heat / heat.max() if heat.max() > 0 else heat
    return frame * ((1.0 - alpha) + alpha * h)


def render_artifacts(cfg: ExperimentConfig, n_frames: int = 4, gaze_model=None) -> List[Path]:
    """Frames from an unseen track with truth and estimated heatmaps, as PGM files."""
    out = cfg.out_dir / "render"
    out.mkdir(parents=True, exist_ok=True)
    if gaze_model is None and gaze_path(cfg).exists():
        gaze_model = load_model(gaze_path(cfg))
    track_seed = closed_loop_tracks(cfg)[0] if (cfg.data_dir / "manifest.json").exists() \
        else int(np.random.default_rng(cfg.seed).integers(1, 2**31 - 1))
    scenario = Scenario(generate_track(track_seed, cfg.sim.n_segments), cars=True, duration=n_frames * 1.0,
                        dt=cfg.sim.dt)
    every = max(1, int(round(1.0 / cfg.sim.dt)))
    written, fix_rows = [], []
    for view in rollout(scenario, lambda f, fx, st, e: e, cfg.seed, cfg.closedloop.gaze_noise_px):
        if view.index % every:
            continue
        k = view.index // every
        frame = view.frame / 255.0
        truth = gazemap.render_gaze_map(view.fixations, WIDTH, HEIGHT)
        fix_rows.append((k, view.fixations))
        items = {"frame": frame, "truth": truth, "truth_overlay": overlay(frame, truth)}
        if gaze_model is not None:
            est = predict_gaze(gaze_model, frame)
            items["estimated"] = est
            items["estimated_overlay"] = overlay(frame, est)
        for name, values in items.items():
            path = out / f"{k:03d}_{name}.pgm"
            gazemap.write_pgm(path, values)
            written.append(path)
    gazemap.write_fixations_csv(out / "fixations.csv", fix_rows)
    written.append(out / "fixations.csv")
    return written


def summarize(rows, ndigits=4):
    return [tuple(round(v, ndigits) if isinstance(v, float) and math.isfinite(v) else v for v in r) for r in rows]
