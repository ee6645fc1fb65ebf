"""Seeded Monte-Carlo of the alignment procedure with a short text summary."""
import argparse
import time

import numpy as np

from levnmr.align import run_campaign


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-n", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--noise", type=float, default=0.002, help="relative PL noise per read")
    ap.add_argument("--drift", type=float, default=1.5, help="drift on translation, degrees")
    ap.add_argument("--offset", type=float, default=5.0, help="target field below co-resonance, G")
    args = ap.parse_args()

    t0 = time.perf_counter()
    camp = run_campaign(args.n, args.seed, args.jobs, noise_sigma=args.noise, drift_deg=args.drift,
                        b_offset_g=args.offset)
    wall = time.perf_counter() - t0
    mis = camp.misalignments
    q = np.array([r.queries for r in camp.reports])
    print(f"success   {camp.n_success}/{args.n} below {camp.threshold_deg} deg")
    print(f"misalign  median {np.median(mis):.3f}  p95 {np.percentile(mis, 95):.3f}  max {mis.max():.3f} deg")
    print(f"queries   median {int(np.median(q))}  max {q.max()}")
    print(f"wall      {wall:.1f} s")
    for k, r in enumerate(camp.reports):
        if not r.success:
            print(f"  seed {args.seed + k}: {r.final_misalignment_deg:.2f} deg, {r.message}")


if __name__ == "__main__":
    main()
