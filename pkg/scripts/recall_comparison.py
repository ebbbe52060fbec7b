"""Token-level vs page-level recall on scattered important tokens.

Usage:
    python scripts/recall_comparison.py --trials 20 --out recall.csv
"""

from __future__ import annotations

import argparse
import sys

from fier.evalharness import WorkloadSpec, sweep
from fier.retrieval import make_policy


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--l", type=int, default=8192)
    parser.add_argument("--d", type=int, default=128)
    parser.add_argument("--spikes", type=int, default=64)
    parser.add_argument("--gain", type=float, default=8.0)
    parser.add_argument("--budgets", default="64,128,256")
    parser.add_argument("--trials", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", help="CSV path; stdout if omitted")
    args = parser.parse_args()

    spec = WorkloadSpec(l=args.l, d=args.d, generator="planted_spikes", spike_count=args.spikes,
                        spike_gain=args.gain, history=0, seed=args.seed)
    policies = [
        make_policy("quest", L=32), make_policy("quest", L=16), make_policy("quest", L=8),
        make_policy("quest_quant", L=16, g=32), make_policy("fier", g=32), make_policy("streaming_llm"),
    ]
    budgets = [int(b) for b in args.budgets.split(",")]
    report = sweep(spec, policies, budgets, trials=args.trials)
    for pol in policies:
        cells = "  ".join(f"n={n}: {report.row(pol, n).recall_mean:.3f}" for n in budgets)
        print(f"{pol.label:<20} load={float(pol.load_ratio(args.l, args.d).ratio):.4f}  {cells}", file=sys.stderr)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(report.to_csv())
    else:
        sys.stdout.write(report.to_csv())


if __name__ == "__main__":
    main()
