"""Time the numba kernels against their pure-numpy fallbacks.

Runs every hot kernel on representative shapes under both backends and
prints a table of per-call times and speedups. The numba side includes a
warmup call so JIT compilation is not billed to the measurement.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from evlight import _kernels as K


def _time(fn, args, repeat: int) -> float:
    fn(*args)  # warmup (JIT compile on the numba side, cache touch on numpy)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _cases(rng: np.random.Generator):
    h = w = 128
    c, k, stride = 16, 3, 1
    hout, wout = h - k + 1, w - k + 1
    xp = rng.standard_normal((h, w, c))
    cols = rng.standard_normal((hout * wout, k * k * c))
    dw_w = rng.standard_normal((5, 5, c))
    g = rng.standard_normal((h, w, c))
    img = rng.uniform(0, 1, (256, 256))

    n = 100_000
    t = np.sort(rng.integers(0, 1_000_000, n))
    tstar = (t - t[0]) / (t[-1] - t[0]) * 31.0
    xs = rng.integers(0, w, n)
    ys = rng.integers(0, h, n)
    ps = rng.choice([-1.0, 1.0], n)

    return [
        ("im2col 128x128x16 k3", (K._im2col_np, K._im2col_nb),
         (xp, k, stride, hout, wout)),
        ("col2im 128x128x16 k3", (K._col2im_np, K._col2im_nb),
         (cols, k, stride, h, w, c, hout, wout)),
        ("dwconv fwd 128x128x16 k5", (K._dwconv_forward_np, K._dwconv_forward_nb),
         (np.pad(xp, ((2, 2), (2, 2), (0, 0))), dw_w)),
        ("dwconv grad_w 128x128x16 k5",
         (K._dwconv_grad_weight_np, K._dwconv_grad_weight_nb),
         (np.pad(xp, ((2, 2), (2, 2), (0, 0))), g, 5)),
        ("dwconv grad_x 128x128x16 k5",
         (K._dwconv_grad_input_np, K._dwconv_grad_input_nb), (g, dw_w)),
        ("voxel deposit 100k events", None,
         (tstar, xs, ys, ps, 32, h, w)),
        ("box filter 256x256 k5", (K._box_filter_np, K._box_filter_nb),
         (img, 5)),
    ]


def _run_voxel(fn, args):
    tstar, xs, ys, ps, bins, height, width = args
    flat = np.zeros(bins * height * width)
    fn(flat, tstar, xs, ys, ps, bins, height, width)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    if K.BACKEND != "numba":
        print("numba backend unavailable (EVLIGHT_BACKEND=numpy or numba not "
              "installed); nothing to compare")
        return 1

    rng = np.random.default_rng(0)
    rows = []
    for name, pair, case_args in _cases(rng):
        if pair is None:  # voxel deposit writes in place, needs a wrapper
            t_np = _time(lambda *a: _run_voxel(K._voxel_deposit_np, a),
                         case_args, args.repeat)
            t_nb = _time(lambda *a: _run_voxel(K._voxel_deposit_nb, a),
                         case_args, args.repeat)
        else:
            fn_np, fn_nb = pair
            t_np = _time(fn_np, case_args, args.repeat)
            t_nb = _time(fn_nb, case_args, args.repeat)
        rows.append((name, t_np, t_nb))

    width_name = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width_name}}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}")
    for name, t_np, t_nb in rows:
        print(f"{name:<{width_name}}  {t_np * 1e3:>8.2f}ms  {t_nb * 1e3:>8.2f}ms  "
              f"{t_np / t_nb:>7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
