"""Procedural tracks: straights and circular arcs joined with matching heading."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Tuple, Union

import numpy as np

MIN_RADIUS = 15.0


@dataclass(frozen=True)
class Straight:
    length: float


@dataclass(frozen=True)
class Arc:
    radius: float
    angle: float  # signed, + turns left

    @property
    def length(self):
        return self.radius * abs(self.angle)

    @property
    def curvature(self):
        return math.copysign(1.0 / self.radius, self.angle)


Segment = Union[Straight, Arc]


@dataclass(frozen=True)
class Appearance:
    """Per-track nuisance appearance: brightness levels, road banding and roadside posts.

    Everything is mirror-symmetric about the centerline so that the renderer's
    left/right symmetry holds on any track.
    """
    sky: float = 0.8
    ground: float = 0.5
    offroad_delta: float = 0.0
    band_amplitude: float = 0.0
    band_wavelength: float = 10.0
    band_phase: float = 0.0
    # (s, lateral distance beyond the lane edge, height m, intensity)
    posts: Tuple[Tuple[float, float, float, float], ...] = ()


@dataclass(frozen=True)
class TrackSpec:
    seed: int
    segments: Tuple[Segment, ...]
    lane_width: float = 4.0
    appearance: Appearance = field(default_factory=Appearance)

    def __post_init__(self):
        if not self.segments:
            raise ValueError("a track needs at least one segment")
        for seg in self.segments:
            if isinstance(seg, Arc) and seg.radius < MIN_RADIUS:
                raise ValueError(f"arc radius {seg.radius} below {MIN_RADIUS} m")
        starts, poses = [0.0], [(0.0, 0.0, 0.0)]
        for seg in self.segments:
            x, y, th = poses[-1]
            poses.append(_advance(seg, x, y, th, seg.length))
            starts.append(starts[-1] + seg.length)
        object.__setattr__(self, "_starts", np.array(starts))
        object.__setattr__(self, "_poses", poses)
        object.__setattr__(self, "_kappa", np.array([_kappa(s) for s in self.segments]))

    @property
    def length(self) -> float:
        return float(self._starts[-1])

    def _index(self, s):
        return np.clip(np.searchsorted(self._starts, s, side="right") - 1, 0, len(self.segments) - 1)

    def curvature(self, s: float) -> float:
        if s < 0 or s >= self.length:
            return 0.0
        return float(self._kappa[self._index(s)])

    def pose(self, s: float):
        """Centerline ``(x, y, heading)`` at arc length ``s`` (straight extension off the ends)."""
        if s < 0:
            x, y, th = self._poses[0]
            return x + s * math.cos(th), y + s * math.sin(th), th
        if s >= self.length:
            x, y, th = self._poses[-1]
            ds = s - self.length
            return x + ds * math.cos(th), y + ds * math.sin(th), th
        i = int(self._index(s))
        x, y, th = self._poses[i]
        return _advance(self.segments[i], x, y, th, s - self._starts[i])

    def sample(self, s0: float, s1: float, step: float = 0.5):
        """Centerline samples ``(s, x, y, heading)`` as arrays."""
        ss = np.arange(s0, s1 + 1e-9, step)
        pts = np.array([self.pose(float(s)) for s in ss])
        return ss, pts[:, 0], pts[:, 1], pts[:, 2]

    def to_world(self, s: float, d: float):
        x, y, th = self.pose(s)
        return x - d * math.sin(th), y + d * math.cos(th), th


def _kappa(seg):
    return seg.curvature if isinstance(seg, Arc) else 0.0


def _advance(seg, x, y, th, u):
    if isinstance(seg, Straight) or seg.angle == 0:
        return x + u * math.cos(th), y + u * math.sin(th), th
    k = seg.curvature
    th2 = th + k * u
    return x + (math.sin(th2) - math.sin(th)) / k, y - (math.cos(th2) - math.cos(th)) / k, th2


def generate_track(seed: int, n_segments: int = 12, radius_range=(MIN_RADIUS, 80.0),
                   angle_range=(0.4, 1.4), straight_range=(20.0, 60.0), lane_width: float = 4.0) -> TrackSpec:
    """Alternate straights and arcs, deterministically from ``seed``."""
    if n_segments < 1:
        raise ValueError("n_segments must be >= 1")
    if radius_range[0] < MIN_RADIUS or radius_range[1] < radius_range[0]:
        raise ValueError("invalid radius range")
    rng = np.random.default_rng([int(seed), 0x7AC])
    segs = []
    for i in range(n_segments):
        if i % 2 == 0:
            segs.append(Straight(float(rng.uniform(*straight_range))))
        else:
            sign = 1.0 if rng.random() < 0.5 else -1.0
            segs.append(Arc(float(rng.uniform(*radius_range)), sign * float(rng.uniform(*angle_range))))
    length = sum(s.length for s in segs)
    return TrackSpec(int(seed), tuple(segs), lane_width, _random_appearance(rng, length))


def _random_appearance(rng, length):
    posts = []
    s = float(rng.uniform(5, 25))
    while s < length + 120:
        posts.append((s, float(rng.uniform(1.5, 6.0)), float(rng.uniform(1.0, 3.5)), float(rng.uniform(0.05, 0.95))))
        s += float(rng.uniform(8, 40))
    return Appearance(
        sky=float(rng.uniform(0.65, 0.95)),
        ground=float(rng.uniform(0.35, 0.6)),
        offroad_delta=float(rng.uniform(-0.2, 0.2)),
        band_amplitude=float(rng.uniform(0.0, 0.12)),
        band_wavelength=float(rng.uniform(4.0, 20.0)),
        band_phase=float(rng.uniform(0, 2 * math.pi)),
        posts=tuple(posts),
    )


def straight_track(length: float = 1000.0, seed: int = 0, lane_width: float = 4.0,
                   appearance: Appearance | None = None) -> TrackSpec:
    return TrackSpec(seed, (Straight(length),), lane_width, appearance or Appearance())


def mirror_track(track: TrackSpec) -> TrackSpec:
    segs = tuple(Arc(s.radius, -s.angle) if isinstance(s, Arc) else s for s in track.segments)
    return replace(track, segments=segs)
