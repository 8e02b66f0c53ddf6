"""Compare the compiled kernels against the NumPy reference backend.

Runs the three kernel entry points (z-buffer scatter, blend forward,
blend backward) plus a full scene render on synthetic workloads and
prints per-backend timings with speedups.

    python3 benchmarks/bench_backends.py --gaussians 4000 --repeats 5
"""

import argparse
import os
import sys
import time

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np

from lidarpaint.backends import reference

try:
    from lidarpaint.backends import _native as native
except ImportError:
    native = None


def _blend_workload(seed, n, height, width, tile_size=16):
    from lidarpaint.gaussian_scene import _bin_tiles

    rng = np.random.default_rng(seed)
    means2d = np.column_stack([rng.uniform(0, width, n),
                               rng.uniform(0, height, n)])
    a = rng.uniform(0.02, 0.4, n)
    c = rng.uniform(0.02, 0.4, n)
    b = rng.uniform(-1.0, 1.0, n) * np.sqrt(a * c) * 0.9
    conics = np.column_stack([a, b, c])
    opacities = rng.uniform(0.05, 1.0, n)
    colors = rng.uniform(0.0, 1.0, (n, 3))
    background = np.zeros(3)
    radius = rng.uniform(4.0, 24.0, n)
    ranges, point_list = _bin_tiles(means2d, radius, height, width, tile_size)
    return (means2d, conics, opacities, colors, background, ranges,
            point_list, height, width, tile_size)


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--gaussians", type=int, default=4000)
    ap.add_argument("--points", type=int, default=200000)
    ap.add_argument("--size", type=int, default=256, help="image side length")
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)

    h = w = args.size
    rng = np.random.default_rng(0)

    rows = []

    px = rng.integers(0, w, args.points)
    py = rng.integers(0, h, args.points)
    depth = rng.uniform(1, 50, args.points)
    values = rng.uniform(0, 1, (args.points, 4))
    rows.append(("rasterize_zbuffer",
                 lambda impl: impl.rasterize_zbuffer(px, py, depth, values, h, w)))

    blend_args = _blend_workload(1, args.gaussians, h, w)
    alpha_min, stop_t = 1.0 / 255.0, 1e-4
    rows.append(("blend_forward",
                 lambda impl: impl.blend_forward(*blend_args, alpha_min, stop_t)))

    _, final_t, n_contrib = reference.blend_forward(*blend_args, alpha_min, stop_t)
    grad_image = rng.uniform(-1, 1, (h, w, 3))
    rows.append(("blend_backward",
                 lambda impl: impl.blend_backward(*blend_args, alpha_min, stop_t,
                                                  final_t, n_contrib, grad_image)))

    print(f"workload: {args.gaussians} gaussians, {args.points} points, "
          f"{h}x{w}, best of {args.repeats}")
    header = f"{'kernel':<20} {'python':>10} {'native':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, call in rows:
        t_ref = _time(lambda: call(reference), args.repeats)
        if native is None:
            print(f"{name:<20} {t_ref * 1e3:>8.1f}ms {'n/a':>10} {'n/a':>8}")
            continue
        t_nat = _time(lambda: call(native), args.repeats)
        print(f"{name:<20} {t_ref * 1e3:>8.1f}ms {t_nat * 1e3:>8.1f}ms "
              f"{t_ref / t_nat:>7.1f}x")

    # end-to-end render through whichever backend is active
    from lidarpaint.backends import BACKEND_NAME
    from lidarpaint.gaussian_scene import init_from_bundle, render
    from lidarpaint.synth import SynthConfig, generate

    cfg = SynthConfig(seed=3, extent=40.0, actors=1, frames=1,
                      lidar_rays=4096, width=args.size, height=args.size,
                      fx=args.size * 0.86, fy=args.size * 0.86,
                      holdout_offsets=())
    bundle, _ = generate(cfg)
    scene = init_from_bundle(bundle, seed=3)
    t_render = _time(lambda: render(scene, 0, bundle.cameras[0]), args.repeats)
    print(f"\nfull render ({scene.total_count()} gaussians, backend "
          f"{BACKEND_NAME}): {t_render * 1e3:.1f}ms")
    return 0


if __name__ == "__main__":
    sys.exit(main())
