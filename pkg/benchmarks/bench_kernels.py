"""Compare the numba and numpy paths of the hot kernels.

Run:

    python benchmarks/bench_kernels.py [--repeats 5]

The numba path is warmed up once before timing so compilation is excluded.
Outputs are checked for equality on every call.
"""

import argparse
import os
import statistics
import time

import numpy as np

from skillemb import _accel, scene
from skillemb.kernels import nearest_neighbor_indices, render_rects

FLAG = "SKILLEMB_DISABLE_NUMBA"


def _time(fn, repeats):
    out, times = None, []
    for _ in range(repeats):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return out, times


def _with_flag(disabled, fn, repeats):
    old = os.environ.get(FLAG)
    os.environ[FLAG] = "1" if disabled else "0"
    try:
        fn()  # warm-up / compile
        return _time(fn, repeats)
    finally:
        if old is None:
            os.environ.pop(FLAG, None)
        else:
            os.environ[FLAG] = old


def bench_render(size, frames, repeats):
    rng = np.random.default_rng(0)
    states = [scene.initial_scene("color_stack", rng)[0] for _ in range(frames)]
    cam = scene.CAMERAS[1]
    inv = cam.inverse(size)
    prepared = []
    for s in states:
        rects, colors = scene.scene_rects(s)
        colors[0] = cam.table
        prepared.append((rects, np.array(colors, dtype=np.uint8)))

    def run():
        return np.stack([render_rects(cam.background, r, c, inv, size) for r, c in prepared])

    return run


def bench_nn(f, dim, repeats):
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((f, dim)), rng.standard_normal((f, dim))
    return lambda: nearest_neighbor_indices(a, b)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        print("numba not importable: only the numpy path is available")
    cases = [
        ("render 64x64 x200 frames", bench_render(64, 200, args.repeats)),
        ("render 128x128 x50 frames", bench_render(128, 50, args.repeats)),
        ("nearest neighbour F=60 n=32", bench_nn(60, 32, args.repeats)),
        ("nearest neighbour F=500 n=32", bench_nn(500, 32, args.repeats)),
    ]
    print(f"{'case':32s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, fn in cases:
        ref, t_np = _with_flag(True, fn, args.repeats)
        if _accel.HAVE_NUMBA:
            out, t_nb = _with_flag(False, fn, args.repeats)
            assert np.array_equal(ref, out), f"{name}: paths disagree"
            m_np, m_nb = statistics.median(t_np) * 1e3, statistics.median(t_nb) * 1e3
            print(f"{name:32s} {m_np:10.2f} {m_nb:10.2f} {m_np / m_nb:8.1f}")
        else:
            print(f"{name:32s} {statistics.median(t_np) * 1e3:10.2f} {'-':>10s} {'-':>8s}")


if __name__ == "__main__":
    main()
