"""Driver-view rendering and the synthetic gaze oracle.

Pinhole camera at the vehicle, looking along its heading over flat ground.
Image coordinates: ``u`` grows rightwards, ``v`` downwards, pixel centres at
integers.
"""
from __future__ import annotations

import math
from typing import List

import numpy as np

from .._accel import njit, pick
from ..gazemap import Fixation
from .track import TrackSpec
from .vehicle import VEHICLE_LENGTH, VEHICLE_WIDTH, SimState, lookahead_point, vehicle_pose

WIDTH, HEIGHT = 200, 66
FOCAL = 100.0
CAM_HEIGHT = 1.5
HORIZON_V = 13.5
CENTER_U = (WIDTH - 1) / 2.0
LINE_LEVEL = 0.95
CAR_LEVEL = 0.08
CAR_HEIGHT = 1.5
POST_WIDTH = 0.4
FOG_START, FOG_RANGE = 35.0, 45.0
SAMPLE_STEP = 0.5
GAZE_CAR_RANGE = 30.0


def _haze(app):
    return 0.5 * (app.sky + app.ground)


@njit
def _ground_nb(out, ss, sx, sy, sth, px, py, h, half_width, ground, offroad, band_amp, band_k, band_phase,
               sky, haze):
    height, width = out.shape
    ch, sh = math.cos(h), math.sin(h)
    n = ss.shape[0]
    for v in range(height):
        dv = v - HORIZON_V
        if dv <= 0:
            for u in range(width):
                out[v, u] = sky
            continue
        x_fwd = FOCAL * CAM_HEIGHT / dv
        fog = min(max((x_fwd - FOG_START) / FOG_RANGE, 0.0), 1.0)
        for u in range(width):
            if fog >= 1.0:
                out[v, u] = haze
                continue
            y_lat = (CENTER_U - u) * x_fwd / FOCAL
            wx = px + x_fwd * ch - y_lat * sh
            wy = py + x_fwd * sh + y_lat * ch
            best, bi = 1e300, 0
            for i in range(n):
                ex, ey = wx - sx[i], wy - sy[i]
                dd = ex * ex + ey * ey
                if dd < best:
                    best, bi = dd, i
            ex, ey = wx - sx[bi], wy - sy[bi]
            c, s = math.cos(sth[bi]), math.sin(sth[bi])
            s_pt = ss[bi] + ex * c + ey * s
            d_pt = abs(-ex * s + ey * c)
            val = ground + band_amp * math.sin(band_k * s_pt + band_phase)
            if d_pt > half_width + 0.5:
                val += offroad
            dist_px = abs(d_pt - half_width) * FOCAL / x_fwd
            alpha = min(max(1.5 - dist_px, 0.0), 1.0)
            val = val * (1.0 - alpha) + LINE_LEVEL * alpha
            out[v, u] = val * (1.0 - fog) + haze * fog


def _ground_np(out, ss, sx, sy, sth, px, py, h, half_width, ground, offroad, band_amp, band_k, band_phase,
               sky, haze):
    height, width = out.shape
    v = np.arange(height, dtype=np.float64)[:, None]
    u = np.arange(width, dtype=np.float64)[None, :]
    dv = v - HORIZON_V
    out[:] = sky
    rows = dv[:, 0] > 0
    x_fwd = np.broadcast_to(FOCAL * CAM_HEIGHT / np.where(dv > 0, dv, 1.0), (height, width))[rows]
    y_lat = ((CENTER_U - u) * x_fwd / FOCAL)
    fog = np.clip((x_fwd - FOG_START) / FOG_RANGE, 0.0, 1.0)
    ch, sh = math.cos(h), math.sin(h)
    wx = px + x_fwd * ch - y_lat * sh
    wy = py + x_fwd * sh + y_lat * ch
    flat_x, flat_y = wx.reshape(-1), wy.reshape(-1)
    bi = np.empty(flat_x.size, dtype=np.int64)
    for start in range(0, flat_x.size, 2048):
        sl = slice(start, start + 2048)
        dd = (flat_x[sl, None] - sx[None, :]) ** 2 + (flat_y[sl, None] - sy[None, :]) ** 2
        bi[sl] = np.argmin(dd, axis=1)
    bi = bi.reshape(wx.shape)
    ex, ey = wx - sx[bi], wy - sy[bi]
    c, s = np.cos(sth[bi]), np.sin(sth[bi])
    s_pt = ss[bi] + ex * c + ey * s
    d_pt = np.abs(-ex * s + ey * c)
    val = ground + band_amp * np.sin(band_k * s_pt + band_phase)
    val = val + np.where(d_pt > half_width + 0.5, offroad, 0.0)
    dist_px = np.abs(d_pt - half_width) * FOCAL / x_fwd
    alpha = np.clip(1.5 - dist_px, 0.0, 1.0)
    val = val * (1.0 - alpha) + LINE_LEVEL * alpha
    val = val * (1.0 - fog) + haze * fog
    out[rows] = np.where(fog >= 1.0, haze, val)


@njit
def _billboards_nb(out, objs):
    height, width = out.shape
    for k in range(objs.shape[0]):
        u0, u1, v0, v1, level = objs[k, 0], objs[k, 1], objs[k, 2], objs[k, 3], objs[k, 4]
        j0 = max(int(math.floor(u0 + 0.5)), 0)
        j1 = min(int(math.ceil(u1 - 0.5)), width - 1)
        i0 = max(int(math.floor(v0 + 0.5)), 0)
        i1 = min(int(math.ceil(v1 - 0.5)), height - 1)
        for i in range(i0, i1 + 1):
            cy = min(v1, i + 0.5) - max(v0, i - 0.5)
            if cy <= 0:
                continue
            for j in range(j0, j1 + 1):
                cx = min(u1, j + 0.5) - max(u0, j - 0.5)
                if cx <= 0:
                    continue
                a = min(cx, 1.0) * min(cy, 1.0)
                out[i, j] = out[i, j] * (1.0 - a) + level * a


def _billboards_np(out, objs):
    height, width = out.shape
    jj = np.arange(width, dtype=np.float64)
    ii = np.arange(height, dtype=np.float64)
    for u0, u1, v0, v1, level in objs:
        cx = np.clip(np.minimum(u1, jj + 0.5) - np.maximum(u0, jj - 0.5), 0.0, 1.0)
        cy = np.clip(np.minimum(v1, ii + 0.5) - np.maximum(v0, ii - 0.5), 0.0, 1.0)
        a = cy[:, None] * cx[None, :]
        out[:] = out * (1.0 - a) + level * a


render_ground = pick(_ground_nb, _ground_np)
draw_billboards = pick(_billboards_nb, _billboards_np)
ground_numba, ground_numpy = _ground_nb, _ground_np


def to_vehicle_frame(pose, wx, wy):
    px, py, h = pose
    dx, dy = wx - px, wy - py
    return math.cos(h) * dx + math.sin(h) * dy, -math.sin(h) * dx + math.cos(h) * dy


def project_vehicle_point(x_fwd, y_lat, z=0.0):
    """Pixel ``(u, v)`` of a point ``x_fwd`` ahead, ``y_lat`` to the left, ``z`` above ground."""
    return CENTER_U - FOCAL * y_lat / x_fwd, HORIZON_V + FOCAL * (CAM_HEIGHT - z) / x_fwd


def project_world(track: TrackSpec, state: SimState, wx, wy):
    """Image position of a ground point in world coordinates, or None when behind the camera."""
    x_fwd, y_lat = to_vehicle_frame(vehicle_pose(track, state), wx, wy)
    if x_fwd <= 0.1:
        return None
    return project_vehicle_point(x_fwd, y_lat)


def _billboard(pose, track, s, d, width_m, height_m, level, haze):
    wx, wy, _ = track.to_world(s, d)
    x_fwd, y_lat = to_vehicle_frame(pose, wx, wy)
    if x_fwd < 1.0 or x_fwd > FOG_START + FOG_RANGE:
        return None
    uc, vb = project_vehicle_point(x_fwd, y_lat)
    half = 0.5 * FOCAL * width_m / x_fwd
    top = vb - FOCAL * height_m / x_fwd
    fog = min(max((x_fwd - FOG_START) / FOG_RANGE, 0.0), 1.0)
    return x_fwd, (uc - half, uc + half, top, vb, level * (1.0 - fog) + haze * fog)


def car_billboard(track, state, car):
    """Image rectangle ``(u0, u1, v0, v1)`` of a car's rear face, or None."""
    bb = _billboard(vehicle_pose(track, state), track, car.s - VEHICLE_LENGTH / 2, car.d, VEHICLE_WIDTH,
                    CAR_HEIGHT, CAR_LEVEL, 0.0)
    return None if bb is None else bb[1][:4]


def render_driver_view(track: TrackSpec, state: SimState) -> np.ndarray:
    """Grayscale ``[66, 200]`` frame in [0, 1]."""
    app = track.appearance
    pose = vehicle_pose(track, state)
    haze = _haze(app)
    ss, sx, sy, sth = track.sample(state.s - 10.0, state.s + FOG_START + FOG_RANGE + 10.0, SAMPLE_STEP)
    out = np.empty((HEIGHT, WIDTH))
    band_k = 2.0 * math.pi / app.band_wavelength
    render_ground(out, ss, sx, sy, sth, pose[0], pose[1], pose[2], track.lane_width / 2.0, app.ground,
                  app.offroad_delta, app.band_amplitude, band_k, app.band_phase, app.sky, haze)

    objs = []
    hw = track.lane_width / 2.0
    for s_post, extra, height_m, level in app.posts:
        if s_post < state.s - 5.0 or s_post > state.s + FOG_START + FOG_RANGE:
            continue
        for side in (1.0, -1.0):
            bb = _billboard(pose, track, s_post, side * (hw + extra), POST_WIDTH, height_m, level, haze)
            if bb is not None:
                objs.append(bb)
    for car in state.cars:
        bb = _billboard(pose, track, car.s - VEHICLE_LENGTH / 2, car.d, VEHICLE_WIDTH, CAR_HEIGHT, CAR_LEVEL, haze)
        if bb is not None:
            objs.append(bb)
    if objs:
        objs.sort(key=lambda o: -o[0])
        draw_billboards(out, np.array([o[1] for o in objs]))
    return np.clip(out, 0.0, 1.0)


def quantize(frame: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)


def gaze_oracle(track: TrackSpec, state: SimState, noise_sigma: float = 3.0,
                rng: np.random.Generator | None = None) -> List[Fixation]:
    """Synthetic fixations: the pure-pursuit target, plus the nearest car ahead within 30 m."""
    points = []
    tx, ty = lookahead_point(track, state)
    p = project_world(track, state, tx, ty)
    if p is not None:
        points.append(p)
    ahead = [c for c in state.cars if 0.0 < c.s - VEHICLE_LENGTH / 2 - state.s <= GAZE_CAR_RANGE]
    if ahead:
        car = min(ahead, key=lambda c: c.s)
        bb = car_billboard(track, state, car)
        if bb is not None:
            points.append((0.5 * (bb[0] + bb[1]), 0.5 * (bb[2] + bb[3])))
    out = []
    for u, v in points:
        if noise_sigma > 0:
            if rng is None:
                raise ValueError("a random generator is required when noise_sigma > 0")
            u, v = u + rng.normal(0.0, noise_sigma), v + rng.normal(0.0, noise_sigma)
        out.append(Fixation(float(u), float(v), 1.0))
    return out
