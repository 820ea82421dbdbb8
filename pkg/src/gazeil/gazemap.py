"""Gaze heatmaps: rendering, baseline, resizing, keep masks and similarity metrics.

A gaze map is a plain ``[height, width]`` float64 array, nonnegative and summing
to one.
"""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, List, NamedTuple, Sequence, Tuple

import numpy as np

from .errors import DegenerateMapError, DimensionError
from .numerics.kernels import bilinear_weights

KL_EPS = 1e-8
DEFAULT_P_BASE = 0.25


class Fixation(NamedTuple):
    x: float
    y: float
    weight: float = 1.0


def default_sigma(width: int) -> float:
    return width / 16.0


def normalize_sum(values) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    total = values.sum()
    if not np.any(values > 0) or not np.isfinite(total) or total <= 0:
        raise DegenerateMapError("map has no positive mass")
    return values / total


def render_gaze_map(fixations: Iterable, width: int, height: int, sigma: float | None = None) -> np.ndarray:
    """Sum of isotropic Gaussians at the in-frame fixations, normalized to unit mass.

    Fixations outside ``[0, width-1] x [0, height-1]`` are dropped; with none
    left the map is uniform.
    """
    if width <= 0 or height <= 0:
        raise ValueError("width and height must be positive")
    sigma = default_sigma(width) if sigma is None else float(sigma)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    fx = [Fixation(*f) if not isinstance(f, Fixation) else f for f in fixations]
    fx = [f for f in fx if 0.0 <= f.x <= width - 1 and 0.0 <= f.y <= height - 1]
    if not fx:
        return np.full((height, width), 1.0 / (width * height))
    cols = np.arange(width, dtype=np.float64)
    rows = np.arange(height, dtype=np.float64)
    xs = np.array([f.x for f in fx])
    ys = np.array([f.y for f in fx])
    ws = np.array([f.weight for f in fx], dtype=np.float64)
    if np.any(ws <= 0):
        raise ValueError("fixation weights must be positive")
    inv = 1.0 / (2.0 * sigma * sigma)
    gx = np.exp(-((cols[None, :] - xs[:, None]) ** 2) * inv)  # [k, W]
    gy = np.exp(-((rows[None, :] - ys[:, None]) ** 2) * inv)  # [k, H]
    return normalize_sum((gy * ws[:, None]).T @ gx)


def render_batch(fixation_lists: Sequence, width: int, height: int, sigma: float | None = None) -> np.ndarray:
    return np.stack([render_gaze_map(f, width, height, sigma) for f in fixation_lists])


def central_blob(width: int, height: int, sigma: float | None = None) -> np.ndarray:
    """Single Gaussian at the geometric centre of the frame."""
    return render_gaze_map([Fixation((width - 1) / 2.0, (height - 1) / 2.0)], width, height, sigma)


def resize_map(values, new_width: int, new_height: int) -> np.ndarray:
    """Bilinear resample followed by renormalization."""
    values = np.asarray(values, dtype=np.float64)
    if new_width <= 0 or new_height <= 0:
        raise ValueError("target size must be positive")
    h, w = values.shape
    if (h, w) == (new_height, new_width):
        return normalize_sum(values)
    out = bilinear_weights(h, new_height) @ values @ bilinear_weights(w, new_width).T
    return normalize_sum(out)


def keep_prob_mask(gaze, p_base: float = DEFAULT_P_BASE, target_width: int | None = None,
                   target_height: int | None = None) -> np.ndarray:
    """Per-location keep probability ``p_base + (1 - p_base) * gaze / max(gaze)``."""
    if not 0.0 < p_base <= 1.0:
        raise ValueError("p_base must lie in (0, 1]")
    gaze = np.asarray(gaze, dtype=np.float64)
    h, w = gaze.shape
    g = resize_map(gaze, target_width or w, target_height or h)
    peak = g.max()
    if peak <= 0:
        raise DegenerateMapError("gaze map has no positive mass")
    return p_base + (1.0 - p_base) * (g / peak)


def keep_prob_masks(gazes, p_base: float, target_width: int, target_height: int) -> np.ndarray:
    """Batched :func:`keep_prob_mask` for an ``[N,H,W]`` stack."""
    gazes = np.asarray(gazes, dtype=np.float64)
    _, h, w = gazes.shape
    ry, rx = bilinear_weights(h, target_height), bilinear_weights(w, target_width)
    g = np.einsum("ih,nhw,jw->nij", ry, gazes, rx, optimize=True)
    peak = g.reshape(len(g), -1).max(axis=1)
    if np.any(peak <= 0):
        raise DegenerateMapError("gaze map has no positive mass")
    return p_base + (1.0 - p_base) * g / peak[:, None, None]


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"map shapes differ: {a.shape} vs {b.shape}")


def kl_divergence(truth, estimate, eps: float = KL_EPS) -> float:
    """KL(truth || estimate) with ``eps`` smoothing inside the log ratio."""
    t = np.asarray(truth, dtype=np.float64)
    e = np.asarray(estimate, dtype=np.float64)
    _check_same_shape(t, e)
    return float(np.sum(t * np.log((t + eps) / (e + eps))))


def correlation_coefficient(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    _check_same_shape(a, b)
    da, db = a - a.mean(), b - b.mean()
    na, nb = np.sqrt(np.dot(da, da)), np.sqrt(np.dot(db, db))
    if na == 0 or nb == 0:
        raise DegenerateMapError("correlation needs maps with nonzero variance")
    return float(np.clip(np.dot(da, db) / (na * nb), -1.0, 1.0))


# file formats

def write_pgm(path, values) -> None:
    """Binary PGM (P5) with the map peak scaled to 255."""
    values = np.asarray(values, dtype=np.float64)
    peak = values.max()
    scaled = np.zeros_like(values) if peak <= 0 else values * (255.0 / peak)
    pixels = np.clip(np.rint(scaled), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    pos += 1
    return np.frombuffer(raw[pos:pos + w * h], dtype=np.uint8).reshape(h, w).copy()


FIXATION_COLUMNS = ("frame_index", "x", "y", "weight")


def write_fixations_csv(path, rows: Iterable[Tuple[int, Sequence]]) -> None:
    """``rows`` yields ``(frame_index, fixations)`` pairs."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FIXATION_COLUMNS)
        for frame_index, fixations in rows:
            for f in fixations:
                f = Fixation(*f)
                writer.writerow([int(frame_index), repr(float(f.x)), repr(float(f.y)), repr(float(f.weight))])


def read_fixations_csv(path) -> dict:
    out: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(int(row["frame_index"]), []).append(
                Fixation(float(row["x"]), float(row["y"]), float(row["weight"])))
    return out
