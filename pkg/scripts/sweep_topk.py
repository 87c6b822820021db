#!/usr/bin/env python3
"""Reconstruction quality as a function of the top-k selection size.

Fits a set to a synthetic image once, then re-renders with varying k.
Too few candidates miss relevant Gaussians; very large k floods the
weighted mean with irrelevant ones, so quality peaks at moderate k.

    python3 scripts/sweep_topk.py --ks 1,4,8,16,32,64,128,512,1024
"""

import argparse
import csv

from splatsr import FitConfig, Vbgs, build_index, fit, plan_for_scale, psnr, render_vbgs
from splatsr.synthetic import make_smooth_image


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--bands", type=int, default=8)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--fit-k", type=int, default=16)
    ap.add_argument("--ks", default="8,16,32,64,128,512,1024")
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--out", default="topk_sweep.csv")
    args = ap.parse_args()

    source = make_smooth_image(args.size, args.size, args.bands, seed=args.seed)
    result = fit(source, FitConfig(steps=args.steps, k=args.fit_k, seed=args.seed))
    print(f"fitted at k={args.fit_k}: {result.final_psnr:.2f} dB")

    gs = result.gaussians
    index = build_index(gs)
    rows = []
    for k in [int(s) for s in args.ks.split(",")]:
        k_eff = min(k, gs.count)
        plan = plan_for_scale(source.meta, 1.0, Vbgs(k_eff), reference=source)
        value = psnr(render_vbgs(gs, index, plan), source)
        rows.append((k, value))
        print(f"k={k:>5}  psnr {value:.2f} dB")

    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "psnr_db"])
        w.writerows(rows)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
