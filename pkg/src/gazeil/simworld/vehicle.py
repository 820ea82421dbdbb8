"""Kinematic bicycle in track coordinates and the pure-pursuit expert."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

from .track import TrackSpec

WHEELBASE = 2.5
LOOKAHEAD = 10.0
MAX_STEER_DEG = 30.0
DEFAULT_SPEED = 10.0
DEFAULT_DT = 0.05
VEHICLE_WIDTH = 1.8
VEHICLE_LENGTH = 4.5

OVERTAKE_OFFSET = 1.2  # lateral target while passing a car
ENGAGE_AHEAD = 25.0
HOLD_BEHIND = 8.0  # keep the passing offset until the car is this far behind


@dataclass(frozen=True)
class Car:
    d: float
    s: float
    v: float


@dataclass(frozen=True)
class SimState:
    s: float = 0.0
    d: float = 0.0
    psi: float = 0.0
    v: float = DEFAULT_SPEED
    cars: Tuple[Car, ...] = ()


def step_vehicle(track: TrackSpec, state: SimState, steering_deg: float, dt: float = DEFAULT_DT) -> SimState:
    """One explicit-Euler step of the bicycle model in (s, d, psi)."""
    if not 0.0 < dt <= 0.1:
        raise ValueError("dt must lie in (0, 0.1]")
    delta = math.radians(steering_deg)
    kappa = track.curvature(state.s)
    v = state.v
    s_dot = v * math.cos(state.psi) / (1.0 - kappa * state.d)
    d_dot = v * math.sin(state.psi)
    psi_dot = v * math.tan(delta) / WHEELBASE - kappa * s_dot
    cars = tuple(Car(c.d, c.s + c.v * dt, c.v) for c in state.cars)
    return replace(state, s=state.s + s_dot * dt, d=state.d + d_dot * dt, psi=state.psi + psi_dot * dt, cars=cars)


def target_offset(state: SimState) -> float:
    """Lateral offset the expert aims for: pass slower cars on the free side."""
    best: Optional[Car] = None
    for car in state.cars:
        gap = car.s - state.s
        if -HOLD_BEHIND < gap <= ENGAGE_AHEAD and car.v < state.v:
            if best is None or abs(gap) < abs(best.s - state.s):
                best = car
    if best is None:
        return 0.0
    return -math.copysign(OVERTAKE_OFFSET, best.d) if best.d != 0 else OVERTAKE_OFFSET


def lookahead_point(track: TrackSpec, state: SimState, lookahead: float = LOOKAHEAD,
                    offset: Optional[float] = None):
    """World position of the pure-pursuit target."""
    if offset is None:
        offset = target_offset(state)
    x, y, _ = track.to_world(state.s + lookahead, offset)
    return x, y


def vehicle_pose(track: TrackSpec, state: SimState):
    x, y, th = track.to_world(state.s, state.d)
    return x, y, th + state.psi


def expert_steering(track: TrackSpec, state: SimState, lookahead: float = LOOKAHEAD,
                    offset: Optional[float] = None) -> float:
    """Pure-pursuit steering in degrees, clamped to +/-30."""
    if lookahead <= 0:
        raise ValueError("lookahead must be positive")
    px, py, h = vehicle_pose(track, state)
    tx, ty = lookahead_point(track, state, lookahead, offset)
    dx, dy = tx - px, ty - py
    lx = math.cos(h) * dx + math.sin(h) * dy
    ly = -math.sin(h) * dx + math.cos(h) * dy
    alpha = math.atan2(ly, lx)
    steer = math.degrees(math.atan(2.0 * WHEELBASE * math.sin(alpha) / lookahead))
    return max(-MAX_STEER_DEG, min(MAX_STEER_DEG, steer))


class ExpertPolicy:
    """Privileged pure-pursuit driver usable wherever a policy is expected."""

    privileged = True

    def __init__(self, lookahead: float = LOOKAHEAD):
        self.lookahead = lookahead

    def act(self, track, state):
        return expert_steering(track, state, self.lookahead)
