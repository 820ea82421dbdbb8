"""Numba kernels against their pure-numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat N]

Part one times each kernel pair in-process on realistic inputs (the numba
side after a warm-up call, so compilation is excluded). Part two reruns a
small end-to-end workload in a subprocess with and without
``GZIM_PURE_NUMPY=1``, which is how the switch is used in practice.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from gazeil import datastore
from gazeil.numerics import kernels
from gazeil.simworld import SimState, generate_track, render
from gazeil.simworld import render_driver_view

END_TO_END = """
import time, numpy as np
from gazeil.models import ModelConfig, build_pilotnet, DriverData, train_driver
from gazeil.numerics import OptimizerState
from gazeil.simworld import generate_track, SimState, render_driver_view
rng = np.random.default_rng(0)
track = generate_track(5)
t = time.perf_counter()
frames = np.stack([render_driver_view(track, SimState(s=2.0 * k, d=0.3)) for k in range(200)])
t_render = time.perf_counter() - t
cfg = ModelConfig(convs=((12, 5, 2), (18, 5, 2), (24, 5, 2), (32, 3, 1), (32, 3, 1)), dense=(50, 25, 10, 1))
model = build_pilotnet(cfg, rng)
data = DriverData(frames[:64], rng.normal(size=64))
train_driver(model, data, 1, 32, OptimizerState("adam", 1e-3), rng)
t = time.perf_counter()
train_driver(model, data, 2, 32, OptimizerState("adam", 1e-3), rng)
print(t_render, time.perf_counter() - t)
"""


def capture_ground_args():
    """Arguments of one ground-render call on a real frame."""
    seen = {}
    original = render.render_ground

    def record(*args):
        seen["args"] = args
        return original(*args)

    render.render_ground = record
    try:
        render_driver_view(generate_track(3), SimState(s=40.0, d=0.2))
    finally:
        render.render_ground = original
    out, *rest = seen["args"]
    return out.shape, rest


def kernel_pairs():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(32, 12, 31, 98))
    cols = kernels.im2col_numpy(x, 5, 5, 2)
    shape, ground_args = capture_ground_args()
    objs = np.array([[20.0 + 15 * k, 34.0 + 15 * k, 20.0, 30.0, 0.1] for k in range(6)])
    blob = rng.integers(0, 256, 66 * 200 * 200, dtype=np.uint8)
    return [
        ("im2col  [32,12,31,98] k5 s2", lambda: kernels.im2col_numba(x, 5, 5, 2),
         lambda: kernels.im2col_numpy(x, 5, 5, 2)),
        ("col2im  same geometry", lambda: kernels.col2im_numba(cols, 32, 12, 31, 98, 5, 5, 2),
         lambda: kernels.col2im_numpy(cols, 32, 12, 31, 98, 5, 5, 2)),
        ("ground  66x200 frame", lambda: render.ground_numba(np.zeros(shape), *ground_args),
         lambda: render.ground_numpy(np.zeros(shape), *ground_args)),
        ("billboards 6 cars", lambda: render._billboards_nb(np.ones(shape), objs),
         lambda: render._billboards_np(np.ones(shape), objs)),
        ("fnv1a64 2.6 MB", lambda: datastore.fnv1a64_numba(blob), lambda: datastore.fnv1a64_python(blob[:66 * 200])),
    ]


def best_of(fn, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def end_to_end(pure: bool):
    env = dict(os.environ, GZIM_PURE_NUMPY="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, capture_output=True, text=True, check=True)
    return [float(v) for v in out.stdout.split()]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    print(f"{'kernel':30s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, fast, slow in kernel_pairs():
        fast()  # compile
        t_fast, t_slow = best_of(fast, args.repeat), best_of(slow, args.repeat)
        if name.startswith("fnv1a64"):
            # the python fallback is timed on one frame; scale to the same byte count
            t_slow *= 200
        print(f"{name:30s} {1e3 * t_fast:10.3f} {1e3 * t_slow:10.3f} {t_slow / t_fast:8.1f}x")

    print()
    print(f"{'end to end':30s} {'numba s':>10s} {'numpy s':>10s} {'speedup':>8s}")
    fast, slow = end_to_end(False), end_to_end(True)
    for label, a, b in zip(("render 200 frames", "train 2 epochs x 64 frames"), fast, slow):
        print(f"{label:30s} {a:10.3f} {b:10.3f} {b / a:8.1f}x")


if __name__ == "__main__":
    main()
