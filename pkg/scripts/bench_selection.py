#!/usr/bin/env python3
"""Throughput of the grid-indexed selection against the exhaustive scan.

Builds a fitted-looking random set and times batch top-k queries over a
dense target grid, then the full bilateral renders on both paths.

    python3 scripts/bench_selection.py --side 64 --scale 4 --k 16
"""

import argparse
import time

import numpy as np

from splatsr import (RawGaussianParams, Vbgs, batch_brute_force, batch_top_k,
                     build_index, constrain, plan_for_scale, render_vbgs, resize)
from splatsr.synthetic import make_smooth_image


def timed(label, fn, *fn_args):
    t0 = time.perf_counter()
    out = fn(*fn_args)
    dt = time.perf_counter() - t0
    print(f"  {label:<28} {dt:8.3f}s")
    return out, dt


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--side", type=int, default=64, help="source grid side length")
    ap.add_argument("--bands", type=int, default=8)
    ap.add_argument("--scale", type=float, default=4.0)
    ap.add_argument("--k", type=int, default=16)
    ap.add_argument("--sigma-px", type=float, default=1.5, help="typical footprint, source pixels")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    side = args.side
    n = side * side
    source = make_smooth_image(side, side, args.bands, seed=args.seed)
    sigma = rng.uniform(0.7, 1.6, (2, n)) * args.sigma_px * (2.0 / side)
    raw = RawGaussianParams(
        x_off=rng.normal(0, 0.2, n), y_off=rng.normal(0, 0.2, n),
        sigma_x_raw=np.log(np.expm1(sigma[0])), sigma_y_raw=np.log(np.expm1(sigma[1])),
        rho_raw=rng.normal(0, 0.4, n), feat_off=rng.normal(0, 0.1, (n, args.bands)),
        gamma=0.5)
    gs = constrain(raw, source.meta, source)
    index = build_index(gs)

    plan = plan_for_scale(source.meta, args.scale, Vbgs(args.k))
    rh, rw = plan.grid_shape
    plan.reference = resize(source, rh, rw, kernel="bilinear")
    npix = rh * rw
    print(f"{n} gaussians, {npix} queries (x{args.scale}), k={args.k}")

    batch_top_k(index, gs, plan.coords[:8], args.k)  # compile outside timing
    print("selection only:")
    (ti, td), dt_idx = timed("grid index", batch_top_k, index, gs, plan.coords, args.k)
    (bi, bd), dt_brute = timed("exhaustive scan", batch_brute_force, gs, plan.coords, args.k)
    identical = np.array_equal(ti, bi) and np.array_equal(td, bd)
    print(f"  results identical: {identical}   speedup {dt_brute / dt_idx:.1f}x")

    print("full bilateral render:")
    img_i, rt_idx = timed("indexed", render_vbgs, gs, index, plan)
    img_b, rt_brute = timed("brute force", render_vbgs, gs, None, plan)
    print(f"  renders identical: {np.array_equal(img_i.data, img_b.data)}   "
          f"speedup {rt_brute / rt_idx:.1f}x")
    print(f"  indexed throughput {npix / rt_idx:,.0f} px/s")


if __name__ == "__main__":
    main()
