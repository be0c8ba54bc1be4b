#!/usr/bin/env python3
"""Type-I error of all four designs under p_a = p_b at N = 100."""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from blockrar.core import SolverConfig
from blockrar.sim import (
    BRAR, FIXED, MDP, RAR,
    DesignSpec, Scenario, metrics_record, run_scenario, utility_z, write_records,
)
from blockrar.solver import solve

NULL_RATES = (0.1, 0.3, 0.5, 0.6, 0.7, 0.9)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--sims", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--lambda-f", type=float, default=4.0)
    ap.add_argument("--lambda-k", type=float, default=0.01)
    ap.add_argument("--skip-rar", action="store_true")
    ap.add_argument("--out", type=Path, default=Path("results/null_scenarios.csv"))
    args = ap.parse_args()

    cfg = SolverConfig(args.n, args.lambda_f, args.lambda_k)
    print(f"solving N={args.n} ...")
    policy = solve(cfg)
    records = []
    for p in NULL_RATES:
        scenario = Scenario(p, p, args.n, n_sims=args.sims, seed=args.seed)
        designs = [DesignSpec(FIXED), DesignSpec(BRAR), DesignSpec(MDP, policy=policy)]
        if not args.skip_rar:
            designs.insert(1, DesignSpec(RAR))
        by_kind = {d.kind: run_scenario(d, scenario, cfg) for d in designs}
        for kind, metrics in by_kind.items():
            record = metrics_record(kind, scenario, metrics)
            record["z_vs_fixed"] = utility_z(metrics, by_kind[FIXED], args.sims)
            records.append(record)
            print(f"p={p}: {kind:16s} size={metrics.rejection_rate:.3f} "
                  f"alloc 5/95=({metrics.alloc_diff_p5:+.0f},{metrics.alloc_diff_p95:+.0f}) "
                  f"K={metrics.mean_blocks:5.2f}")
    write_records(records, args.out, "csv")
    write_records(records, args.out.with_suffix(".json"), "json")
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
