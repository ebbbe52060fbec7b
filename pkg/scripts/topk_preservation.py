"""How much of the exact Top-k survives 1-bit keys, next to the score error.

Prints, per group size, the Top-k overlap between exact and quantized
logits together with the k/k+1 margin, worst estimation error and the
squared-error and hinge diagnostics.

Usage:
    python scripts/topk_preservation.py --l 14000 --k 64
"""

from __future__ import annotations

import argparse

import numpy as np

from fier.evalharness import WorkloadSpec, generate, margin_and_errors
from fier.kvcore import exact_scores, topk_oracle
from fier.quant1bit import approx_scores, quantize


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--l", type=int, default=14000)
    parser.add_argument("--d", type=int, default=128)
    parser.add_argument("--k", type=int, default=64)
    parser.add_argument("--spikes", type=int, default=64)
    parser.add_argument("--queries", type=int, default=8)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    spec = WorkloadSpec(l=args.l, d=args.d, generator="planted_spikes", spike_count=args.spikes,
                        n_queries=args.queries, outlier_channel_count=4, outlier_scale=4.0, seed=args.seed)
    wl = generate(spec)
    print(f"{'g':>5}{'overlap':>10}{'margin':>10}{'max err':>10}{'l2':>14}{'hinge':>14}{'hinge|.|':>12}")
    for g in (1, 8, 32, 128, 256):
        pk = quantize(wl.K, g)
        rows = []
        for q in wl.queries:
            exact = topk_oracle(exact_scores(q, wl.K), args.k)
            est = topk_oracle(approx_scores(q, pk), args.k)
            m = margin_and_errors(q, wl.K, pk, args.k)
            rows.append((len(exact.as_set() & est.as_set()) / args.k, *m))
        r = np.mean(rows, axis=0)
        print(f"{g:>5}{r[0]:>10.3f}{r[1]:>10.3f}{r[2]:>10.3f}{r[4]:>14.1f}{r[3]:>14.1f}{r[5]:>12.1f}")


if __name__ == "__main__":
    main()
