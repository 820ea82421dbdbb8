"""Procedural 2D driving world with an expert driver and a synthetic gaze source."""
from .episode import (
    EpisodeResult,
    GazeSource,
    Infraction,
    Scenario,
    closed_loop_metrics,
    detect_infraction,
    run_episode,
    write_trace_jsonl,
)
from .render import gaze_oracle, render_driver_view
from .track import Appearance, Arc, Straight, TrackSpec, generate_track, mirror_track, straight_track
from .vehicle import Car, ExpertPolicy, SimState, expert_steering, step_vehicle

__all__ = [
    "Appearance", "Arc", "Car", "EpisodeResult", "ExpertPolicy", "GazeSource", "Infraction", "Scenario",
    "SimState", "Straight", "TrackSpec", "closed_loop_metrics", "detect_infraction", "expert_steering",
    "gaze_oracle", "generate_track", "mirror_track", "render_driver_view", "run_episode", "step_vehicle",
    "straight_track", "write_trace_jsonl",
]
