"""Time the numba kernels against the pure-numpy fallback.

    python3 benchmarks/bench_backends.py [--repeat 20] [--json out.json]

Shapes are the ones a desk-scale training step actually hits (batch 32,
64x64 frames). Each kernel is warmed up once so numba compile time is not
counted, then the median of ``--repeat`` runs is reported. Outputs of the
two backends are compared as well.
"""

import argparse
import json
import statistics
import time

import numpy as np

from autojoin.kernels import _nb, _np
from autojoin.perturb import distortion_source_coords, gaussian_taps


def _median_ms(fn, args, repeat):
    fn(*args)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return 1000.0 * statistics.median(times)


def cases(rng):
    x = rng.random((32, 3, 64, 64), dtype=np.float32)
    cols = _np.im2col(x, 5, 5, 2, 0)
    img = rng.uniform(0, 255, (64, 64, 3)).astype(np.float32)
    xs, ys = distortion_source_coords(64, 64, 0.5)
    up = rng.random((32 * 32 * 32, 8 * 16), dtype=np.float32)
    return {
        "im2col conv1": ("im2col", (x, 5, 5, 2, 0)),
        "col2im conv1 grad": ("col2im", (cols, x.shape, 5, 5, 2, 0)),
        "col2im decoder up3": ("col2im", (up, (32, 8, 64, 64), 4, 4, 2, 1)),
        "rgb_to_hsv frame": ("rgb_to_hsv", (img,)),
        "hsv_to_rgb frame": ("hsv_to_rgb", (_np.rgb_to_hsv(img),)),
        "blur sigma=3": ("blur_separable", (img, gaussian_taps(3.0))),
        "distort k=0.5": ("remap_bilinear", (img, xs, ys)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", default=None, help="also write results here")
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    rows = []
    print(f"{'kernel':22s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    for label, (name, call_args) in cases(rng).items():
        f_np, f_nb = getattr(_np, name), getattr(_nb, name)
        t_np = _median_ms(f_np, call_args, args.repeat)
        t_nb = _median_ms(f_nb, call_args, args.repeat)
        diff = float(np.max(np.abs(np.asarray(f_np(*call_args), np.float64) - np.asarray(f_nb(*call_args), np.float64))))
        rows.append({"kernel": label, "numpy_ms": t_np, "numba_ms": t_nb, "speedup": t_np / t_nb, "max_abs_diff": diff})
        print(f"{label:22s} {t_np:10.3f} {t_nb:10.3f} {t_np / t_nb:7.2f}x {diff:11.2e}")

    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
