"""Command-line front end.

    fier make-dump  --l 4096 --d 128 --out cache.kvd
    fier quantize   cache.kvd --g 32 --out cache.fier
    fier bench      --generator planted_spikes --policy fier:g=32 --policy quest:L=16 --budgets 64 --out report.csv
    fier posmap     --dump cache.kvd --policy fier:g=32 --budget 64 --out map.csv

Exit status: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from .dumpio import CacheDump, atomic_write, read_dump, write_dump
from .evalharness import WorkloadSpec, generate, position_map_csv, sweep, token_position_map
from .evalharness.sweep import eviction_history
from .quant1bit import HEADER_SIZE, FormatError, PackedKeys, dequantize, load_ratio_fier, quantize
from .retrieval import POLICY_NAMES, BudgetPolicy, SideState

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def split_policies(items) -> list[str]:
    """Flatten repeated and comma-joined policy arguments.

    ``fier,quest:L=8,variant=max`` yields ``["fier", "quest:L=8,variant=max"]``:
    a piece holding ``=`` but no ``:`` continues the previous policy.
    """
    out: list[str] = []
    for item in items:
        for piece in filter(None, item.split(",")):
            if out and "=" in piece and ":" not in piece:
                out[-1] += "," + piece
            else:
                out.append(piece)
    return out


def parse_policy(text: str, budget: int = 1) -> BudgetPolicy:
    """``name[:key=value,...]``, e.g. ``fier:g=32`` or ``quest:L=16,variant=max``."""
    name, _, rest = text.partition(":")
    if name not in POLICY_NAMES:
        raise UsageError(f"unknown policy {name!r}; valid names: {', '.join(POLICY_NAMES)}")
    params = {}
    for item in filter(None, rest.split(",")):
        key, eq, value = item.partition("=")
        if not eq:
            raise UsageError(f"bad policy parameter {item!r} in {text!r}")
        params[key] = value if key == "variant" else _int(value, key)
    try:
        return BudgetPolicy(name, budget, params)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _int(value: str, what: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise UsageError(f"{what} must be an integer, got {value!r}") from None


def _budgets(text: str) -> list[int]:
    out = [_int(b, "budget") for b in text.split(",") if b]
    if not out or min(out) < 1:
        raise UsageError("budgets must be a comma list of positive integers")
    return out


def _add_workload_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("workload")
    g.add_argument("--dump", help="read caches and queries from a dump instead of generating")
    g.add_argument("--generator", default="gaussian", help="gaussian | planted_spikes | outlier_channels")
    g.add_argument("--l", type=int, default=1024)
    g.add_argument("--d", type=int, default=64)
    g.add_argument("--queries", type=int, default=1)
    g.add_argument("--spike-count", type=int, default=0)
    g.add_argument("--spike-gain", type=float, default=8.0)
    g.add_argument("--spike-exclude-head", type=int, default=0)
    g.add_argument("--spike-exclude-tail", type=int, default=0)
    g.add_argument("--outlier-channels", type=int, default=0)
    g.add_argument("--outlier-scale", type=float, default=1.0)
    g.add_argument("--drift", type=float, default=0.0)
    g.add_argument("--history", type=int, default=8)
    g.add_argument("--seed", type=int, default=0)


def workload_from_args(args) -> WorkloadSpec:
    try:
        if args.dump:
            return WorkloadSpec(generator="from_dump", path=args.dump, seed=args.seed)
        return WorkloadSpec(
            l=args.l, d=args.d, generator=args.generator, n_queries=args.queries,
            spike_count=args.spike_count, spike_gain=args.spike_gain,
            spike_exclude_head=args.spike_exclude_head, spike_exclude_tail=args.spike_exclude_tail,
            outlier_channel_count=args.outlier_channels, outlier_scale=args.outlier_scale,
            drift=args.drift, history=args.history, seed=args.seed,
        )
    except ValueError as e:
        raise UsageError(str(e)) from None


def _emit(text: str, out: str | None) -> None:
    if out:
        atomic_write(out, text)
    else:
        sys.stdout.write(text)


def cmd_make_dump(args) -> int:
    spec = workload_from_args(args)
    if spec.generator == "from_dump":
        raise UsageError("make-dump generates a workload; --dump is not accepted")
    wl = generate(spec)
    write_dump(args.out, CacheDump(wl.K, wl.V, np.vstack([wl.history, wl.queries]), args.dtype))
    print(f"wrote {args.out}: l={spec.l} d={spec.d} queries={spec.history + spec.n_queries} dtype={args.dtype}")
    return EXIT_OK


def cmd_quantize(args) -> int:
    if args.g < 1:
        raise UsageError("--g must be >= 1")
    dump = read_dump(args.input)
    # parameters rounded to float16 up front so the file scores exactly like the in-memory index
    pk = quantize(dump.K, args.g, half_params=True)
    blob = pk.to_bytes()
    atomic_write(args.out, blob)
    l, d = dump.K.shape
    counted = Fraction(len(blob) - HEADER_SIZE, l * d * 2)
    formula = load_ratio_fier(l, args.g)
    kind = "formula" if formula.formula else "exact count (g does not divide l)"
    print(f"wrote {args.out}: l={l} d={d} g={args.g} bytes={len(blob)}")
    print(f"load ratio counted: {counted} = {float(counted)!r}")
    print(f"load ratio {kind}: {formula.ratio} = {float(formula.ratio)!r}")
    reread = PackedKeys.from_bytes(blob)
    same = all(np.array_equal(getattr(reread, f), getattr(pk, f)) for f in ("bits", "scales", "zeros"))
    print(f"file round trip: {'exact' if same else 'MISMATCH'}")
    err = float(np.abs(dequantize(pk) - dump.K).max())
    print("dequantization: lossless" if err == 0 else f"dequantization: max abs error {err!r}")
    return EXIT_OK


def cmd_bench(args) -> int:
    if not args.policy:
        raise UsageError("at least one --policy is required")
    policies = [parse_policy(p) for p in split_policies(args.policy)]
    budgets = _budgets(args.budgets)
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    spec = workload_from_args(args)
    report = sweep(spec, policies, budgets, trials=args.trials)
    fmt = args.format or ("json" if args.out and args.out.endswith(".json") else "csv")
    _emit(report.to_json() if fmt == "json" else report.to_csv(), args.out)
    return EXIT_OK


def cmd_posmap(args) -> int:
    if not args.policy:
        raise UsageError("at least one --policy is required")
    policies = [parse_policy(p, args.budget) for p in split_policies(args.policy)]
    spec = workload_from_args(args)
    if spec.generator == "from_dump":
        # dump queries before the chosen one become its decode history
        wl = generate(spec, trial=args.query)
        j = 0
    else:
        wl = generate(spec)
        j = args.query
    K = wl.K
    if not 1 <= args.budget <= K.shape[0]:
        raise UsageError(f"--budget must be in [1, {K.shape[0]}]")
    if not 0 <= j < len(wl.queries):
        raise UsageError(f"--query must be in [0, {len(wl.queries) - 1}]")
    q = wl.queries[j]
    history = list(wl.history) + list(wl.queries[:j])
    evict = eviction_history(K, history) if any(p.name == "h2o" for p in policies) else None
    state = SideState.for_policies(policies, K, evict)
    maps = token_position_map(q, K, policies, args.budget, state)
    _emit(position_map_csv(maps), args.out)
    oracle = maps["oracle"]
    for label, m in maps.items():
        print(f"{label}: recall {int((m & oracle).sum()) / args.budget!r}", file=sys.stderr if not args.out else sys.stdout)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fier", description="Token-level KV retrieval with 1-bit keys: tools and benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("make-dump", help="write a synthetic workload as a cache dump")
    _add_workload_flags(p)
    p.add_argument("--dtype", choices=("f16", "f32"), default="f16")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_dump)

    p = sub.add_parser("quantize", help="build a 1-bit packed key index from a dump")
    p.add_argument("input")
    p.add_argument("--g", type=int, default=32, help="tokens per quantization group")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("bench", help="recall/cost sweep over policies and budgets")
    _add_workload_flags(p)
    p.add_argument("--policy", action="append", default=[], help="name[:k=v,...]; repeatable")
    p.add_argument("--budgets", default="64")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("posmap", help="per-policy Top-n position maps for one query")
    _add_workload_flags(p)
    p.add_argument("--policy", "--policies", action="append", default=[], help="name[:k=v,...]; repeatable")
    p.add_argument("--budget", type=int, default=64)
    p.add_argument("--query", type=int, default=0, help="query index within the workload")
    p.add_argument("--out")
    p.set_defaults(func=cmd_posmap)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"fier: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OverflowError) as e:
        print(f"fier: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as e:
        print(f"fier: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
