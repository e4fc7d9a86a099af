"""Distance between normalized-sum clouds started at two points, as n grows.

The clouds differ by a deterministic offset sum_k (g(x_k) - g(y_k)) / sqrt(n)
accumulated before the chains forget their starts, so the bounded-Lipschitz
distance shrinks like n^(-1/2) rather than reaching the noise floor quickly.
"""

from __future__ import annotations

import argparse
import math

from perturbed_ifs import EmpiricalMeasure, bl_distance, cc_affine, center_g, rng_stream, stationary_estimate
from perturbed_ifs.climit import eta_checkpoints


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--replicas", type=int, default=4096)
    ap.add_argument("--ns", type=int, nargs="+", default=[128, 512, 2048, 8192])
    ap.add_argument("--x0", type=float, default=0.0)
    ap.add_argument("--y0", type=float, default=10.0)
    args = ap.parse_args()
    model = cc_affine()
    mu = stationary_estimate(model, 1000, 100_000, rng_stream(2024, 0))
    g = center_g(model, None, mu)
    ex = eta_checkpoints(model, g, args.ns, args.replicas, args.x0, rng_stream(809))
    ey = eta_checkpoints(model, g, args.ns, args.replicas, args.y0, rng_stream(810))
    print(f"{'n':>6} {'BL':>8} {'floor':>8} {'mean gap':>9} {'gap*sqrt(n)':>12}")
    for n in sorted(ex):
        a, b = EmpiricalMeasure(ex[n]), EmpiricalMeasure(ey[n])
        gap = float(ey[n].mean() - ex[n].mean())
        print(f"{n:6d} {bl_distance(a, b).value:8.4f} {bl_distance(*a.split_half()).value:8.4f} {gap:9.4f} {gap * math.sqrt(n):12.3f}")


if __name__ == "__main__":
    main()
