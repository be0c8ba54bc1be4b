#!/usr/bin/env python3
"""Power vs allocation frontier for one scenario as the failure weight varies.

Writes the data behind a frontier plot (power on x, mean allocation to the
better arm on y, one point per failure weight) with 90% confidence
half-widths. Rendering is left to whatever plots the CSV.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from blockrar.sim import Scenario, frontier_sweep, write_records


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--p-a", type=float, default=0.4)
    ap.add_argument("--p-b", type=float, default=0.1)
    ap.add_argument("--n", type=int, default=46)
    ap.add_argument("--lambda-f", type=float, nargs="+", default=[2.0, 3.0, 4.0, 5.0])
    ap.add_argument("--lambda-k", type=float, nargs="+", default=[0.01])
    ap.add_argument("--sims", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("results/frontier.csv"))
    args = ap.parse_args()

    scenario = Scenario(args.p_a, args.p_b, args.n, n_sims=args.sims, seed=args.seed)
    rows = frontier_sweep(args.lambda_f, args.lambda_k, [scenario],
                          progress=lambda r: print(
                              f"lf={r['lambda_f']:<4} lk={r['lambda_k']:<6} "
                              f"power={r['power']:.3f}+/-{r['power_ci90']:.3f} "
                              f"allocA={r['alloc_a_mean']:.2f}+/-{r['alloc_a_ci90']:.2f}"))
    write_records(rows, args.out, "csv")
    write_records(rows, args.out.with_suffix(".json"), "json")
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
