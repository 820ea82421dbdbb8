"""Closed-loop episodes, infraction bookkeeping and the driving metrics."""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterator, List, Optional

import numpy as np

from .. import gazemap
from .render import HEIGHT, WIDTH, gaze_oracle, quantize, render_driver_view
from .track import TrackSpec
from .vehicle import (
    DEFAULT_DT,
    VEHICLE_LENGTH,
    VEHICLE_WIDTH,
    Car,
    SimState,
    expert_steering,
    step_vehicle,
)

ENGAGE_WINDOW = 25.0


class Infraction(enum.Enum):
    NONE = "none"
    LANE_DEPARTURE = "lane_departure"
    COLLISION = "collision"


class GazeSource(enum.Enum):
    ORACLE = "oracle"
    PREDICTOR = "predictor"
    CENTRAL_BLOB = "central"
    NONE_REQUIRED = "none"


@dataclass(frozen=True)
class Scenario:
    track: TrackSpec
    cars: bool = False
    duration: float = 30.0
    dt: float = DEFAULT_DT
    car_speed_range: tuple = (4.0, 6.0)
    car_spacing_range: tuple = (70.0, 110.0)
    first_car_range: tuple = (35.0, 60.0)
    start_range: tuple = (0.0, 40.0)


@dataclass
class TraceStep:
    step: int
    s: float
    d: float
    psi: float
    steering_deg: float
    infraction: str
    fixations: list

    def to_json(self):
        return {"step": self.step, "s": self.s, "d": self.d, "psi": self.psi, "steering_deg": self.steering_deg,
                "infraction": self.infraction, "fixations": [[f.x, f.y, f.weight] for f in self.fixations]}


@dataclass
class EpisodeResult:
    distance_traveled: float = 0.0
    infraction_count: Dict[str, int] = field(
        default_factory=lambda: {Infraction.LANE_DEPARTURE.value: 0, Infraction.COLLISION.value: 0})
    overtake_attempts: int = 0
    overtake_successes: int = 0
    aborted: bool = False
    trace: List[TraceStep] = field(default_factory=list)

    @property
    def infractions(self) -> int:
        return sum(self.infraction_count.values())


def lane_limit(track: TrackSpec) -> float:
    return track.lane_width / 2.0 + 0.5 * VEHICLE_WIDTH


def _overlaps(state: SimState, car: Car) -> bool:
    return abs(state.s - car.s) < VEHICLE_LENGTH and abs(state.d - car.d) < VEHICLE_WIDTH


def detect_infraction(track: TrackSpec, state: SimState) -> Infraction:
    """Level-triggered check; edge triggering happens in the episode loop."""
    if any(_overlaps(state, c) for c in state.cars):
        return Infraction.COLLISION
    if abs(state.d) > lane_limit(track):
        return Infraction.LANE_DEPARTURE
    return Infraction.NONE


def spawn_cars(scenario: Scenario, start_s: float, rng: np.random.Generator) -> tuple:
    if not scenario.cars:
        return ()
    v_ego = SimState().v
    span = start_s + scenario.duration * v_ego + 60.0
    cars, s = [], start_s + rng.uniform(*scenario.first_car_range)
    while s < span:
        side = 1.0 if rng.random() < 0.5 else -1.0
        cars.append(Car(side * 1.1, float(s), float(rng.uniform(*scenario.car_speed_range))))
        s += rng.uniform(*scenario.car_spacing_range)
    return tuple(cars)


def initial_state(scenario: Scenario, rng: np.random.Generator) -> SimState:
    s0 = float(rng.uniform(*scenario.start_range))
    return SimState(s=s0, cars=spawn_cars(scenario, s0, rng))


@dataclass
class StepView:
    """What one loop iteration saw and did, yielded by :func:`rollout`."""
    index: int
    state: SimState
    frame: np.ndarray  # uint8
    fixations: list
    expert_deg: float
    steering_deg: float
    infraction: Infraction
    new_infraction: bool
    advanced: float  # arc length covered by this step


def rollout(scenario: Scenario, control: Callable, seed: int, gaze_noise: float = 3.0) -> Iterator[StepView]:
    """Sequential simulation loop shared by evaluation and data collection.

    ``control(frame_u8, fixations, state, expert_deg)`` returns the steering
    applied this step. Infractions trigger a reset to the centerline at the
    current arc length with zero heading error.
    """
    rng = np.random.default_rng([int(seed), 0xE915])
    gaze_rng = np.random.default_rng([int(seed), 0x6A2E])
    track = scenario.track
    state = initial_state(scenario, rng)
    n_steps = int(round(scenario.duration / scenario.dt))
    active = Infraction.NONE
    for k in range(n_steps):
        frame = quantize(render_driver_view(track, state))
        fixations = gaze_oracle(track, state, gaze_noise, gaze_rng)
        expert = expert_steering(track, state)
        steer = float(control(frame, fixations, state, expert))
        nxt = step_vehicle(track, state, steer, scenario.dt)
        level = detect_infraction(track, nxt)
        new = level is not Infraction.NONE and level is not active
        active = level
        yield StepView(k, state, frame, fixations, expert, steer, level, new, nxt.s - state.s)
        if level is not Infraction.NONE:
            nxt = replace(nxt, d=0.0, psi=0.0)
            if detect_infraction(track, nxt) is Infraction.NONE:
                active = Infraction.NONE
        state = nxt


def run_episode(policy, scenario: Scenario, gaze_source: GazeSource, seed: int,
                gaze_predictor: Optional[Callable] = None, gaze_noise: float = 3.0,
                keep_trace: bool = True) -> EpisodeResult:
    """Drive one episode with ``policy(frame, gaze_map)`` returning steering in degrees.

    ``frame`` is the quantized driver view scaled to [0, 1]; ``gaze_map`` is
    None when ``gaze_source`` is NONE_REQUIRED. Policies flagged ``privileged``
    are called as ``policy.act(track, state)`` instead.
    """
    gaze_source = GazeSource(gaze_source)
    if gaze_source is GazeSource.PREDICTOR and gaze_predictor is None:
        raise ValueError("gaze_source=predictor needs a gaze_predictor")
    track = scenario.track
    blob = gazemap.central_blob(WIDTH, HEIGHT)
    privileged = getattr(policy, "privileged", False)

    def control(frame_u8, fixations, state, expert):
        if privileged:
            return policy.act(track, state)
        frame = frame_u8 / 255.0
        if gaze_source is GazeSource.ORACLE:
            gaze = gazemap.render_gaze_map(fixations, WIDTH, HEIGHT)
        elif gaze_source is GazeSource.PREDICTOR:
            gaze = gaze_predictor(frame)
        elif gaze_source is GazeSource.CENTRAL_BLOB:
            gaze = blob
        else:
            gaze = None
        return policy(frame, gaze)

    result = EpisodeResult()
    attempts: Dict[int, bool] = {}  # car index -> still clean
    cap = 2.0 * track.lane_width
    for view in rollout(scenario, control, seed, gaze_noise):
        st = view.state
        result.distance_traveled += max(0.0, view.advanced)
        for i, car in enumerate(st.cars):
            gap = car.s - st.s
            if i not in attempts and 0.0 < gap <= ENGAGE_WINDOW and car.v < st.v:
                attempts[i] = True
                result.overtake_attempts += 1
            elif attempts.get(i) is True and st.s > car.s:
                attempts[i] = None  # resolved
                result.overtake_successes += 1
        if view.infraction is not Infraction.NONE:
            for i in attempts:
                if attempts[i] is True:
                    attempts[i] = False
        if view.new_infraction:
            result.infraction_count[view.infraction.value] += 1
        if keep_trace:
            result.trace.append(TraceStep(view.index, st.s, st.d, st.psi, view.steering_deg,
                                          view.infraction.value if view.new_infraction else Infraction.NONE.value,
                                          list(view.fixations)))
        if not all(math.isfinite(x) for x in (st.s, st.d, st.psi)) or abs(st.d) > cap:
            result.aborted = True
            break
    # a maneuver still in progress when time runs out is neither won nor lost
    result.overtake_attempts -= sum(1 for v in attempts.values() if v is True)
    return result


def closed_loop_metrics(results: List[EpisodeResult]) -> dict:
    """Overtake success rate (None when no attempts) and km driven per infraction."""
    if not results:
        raise ValueError("need at least one episode result")
    attempts = sum(r.overtake_attempts for r in results)
    successes = sum(r.overtake_successes for r in results)
    distance = sum(r.distance_traveled for r in results)
    infractions = sum(r.infractions for r in results)
    return {
        "overtake_success_rate": successes / attempts if attempts else None,
        "mean_distance_between_infractions_km": distance / max(1, infractions) / 1000.0,
        "overtake_attempts": attempts,
        "overtake_successes": successes,
        "distance_km": distance / 1000.0,
        "infractions": infractions,
    }


def write_trace_jsonl(path, result: EpisodeResult) -> None:
    with open(path, "w") as fh:
        for step in result.trace:
            fh.write(json.dumps(step.to_json()) + "\n")
