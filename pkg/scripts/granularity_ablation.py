"""Page size vs. quantized scoring vs. group size, with estimation load ratios.

Rows mirror the ablation layout: Quest at three page sizes, Quest with mean
quantized page scores, and token-level retrieval at three group sizes.

Usage:
    python scripts/granularity_ablation.py --trials 100
"""

from __future__ import annotations

import argparse

from fier.evalharness import WorkloadSpec, sweep
from fier.retrieval import make_policy


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--l", type=int, default=4096)
    parser.add_argument("--d", type=int, default=128)
    parser.add_argument("--outlier-channels", type=int, default=4)
    parser.add_argument("--outlier-scale", type=float, default=8.0)
    parser.add_argument("--drift", type=float, default=2.0)
    parser.add_argument("--budgets", default="64,128,256")
    parser.add_argument("--trials", type=int, default=100)
    parser.add_argument("--seed", type=int, default=8)
    args = parser.parse_args()

    spec = WorkloadSpec(l=args.l, d=args.d, generator="outlier_channels",
                        outlier_channel_count=args.outlier_channels, outlier_scale=args.outlier_scale,
                        drift=args.drift, history=0, seed=args.seed)
    policies = [
        make_policy("quest", L=32), make_policy("quest", L=16), make_policy("quest_quant", L=16, g=32),
        make_policy("quest", L=8), make_policy("fier", g=256), make_policy("fier", g=128), make_policy("fier", g=32),
    ]
    budgets = [int(b) for b in args.budgets.split(",")]
    report = sweep(spec, policies, budgets, trials=args.trials)

    print(f"{'method':<20}{'load R.':>10}" + "".join(f"{n:>10}" for n in budgets))
    for pol in policies:
        ratio = pol.load_ratio(args.l, args.d).ratio
        cells = "".join(f"{report.row(pol, n).recall_mean:>10.3f}" for n in budgets)
        print(f"{pol.label:<20}{str(ratio):>10}{cells}")


if __name__ == "__main__":
    main()
