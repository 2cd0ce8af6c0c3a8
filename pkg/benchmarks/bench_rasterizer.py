"""Compare the numba and pure-numpy rasterizer kernels on the synthetic tube scene.

Usage:
    python benchmarks/bench_rasterizer.py [--sizes 64 128 256] [--repeats 5] [--points 200 800]

Compilation is triggered once before timing (numba caches to __pycache__),
so the numbers are steady-state.  Outputs of both backends are compared and
the largest difference is printed next to the timings.
"""
import argparse
import time

import numpy as np

from stylesplat._accel import HAS_NUMBA
from stylesplat.rasterizer import rasterize, render_backward
from stylesplat.synthetic import SyntheticSceneSpec, synthetic_cameras, synthetic_cloud


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench(size, points, repeats):
    spec = SyntheticSceneSpec(n_points=points, width=size, height=size, focal=size * 80.0 / 128.0)
    cloud = synthetic_cloud(spec)
    cam = synthetic_cameras(spec)[0][0]
    grad = np.random.default_rng(0).normal(size=(size, size, 3))
    row = {}
    outs = {}
    for backend in ("numba", "numpy"):
        rasterize(cloud, cam, backend)  # warm-up / JIT
        t_fwd, state = best_of(lambda: rasterize(cloud, cam, backend), repeats)
        t_bwd, g = best_of(lambda: render_backward(cloud, cam, grad, state, backend), repeats)
        row[backend] = (t_fwd, t_bwd)
        outs[backend] = (state.image, g.positions)
    img_diff = float(np.abs(outs["numba"][0] - outs["numpy"][0]).max())
    grad_diff = float(np.abs(outs["numba"][1] - outs["numpy"][1]).max())
    return row, img_diff, grad_diff


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256])
    ap.add_argument("--points", type=int, nargs="+", default=[200, 800])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    if not HAS_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    print(f"{'size':>5} {'pts':>5} | {'numba fwd':>10} {'numba bwd':>10} | {'numpy fwd':>10} "
          f"{'numpy bwd':>10} | {'speedup':>8} | {'max|dimg|':>9} {'max|dgrad|':>10}")
    for size in args.sizes:
        for pts in args.points:
            row, d_img, d_grad = bench(size, pts, args.repeats)
            nb, npy = row["numba"], row["numpy"]
            speedup = (npy[0] + npy[1]) / (nb[0] + nb[1])
            print(f"{size:>5} {pts:>5} | {1e3 * nb[0]:>8.2f}ms {1e3 * nb[1]:>8.2f}ms | "
                  f"{1e3 * npy[0]:>8.2f}ms {1e3 * npy[1]:>8.2f}ms | {speedup:>7.1f}x | "
                  f"{d_img:9.1e} {d_grad:10.1e}")


if __name__ == "__main__":
    main()
