"""Exit criteria. Each test records one PASS/FAIL line in the terminal summary."""

import time
from fractions import Fraction

import numpy as np
import pytest

from fier.baselines import build_page_summaries, quest_select, quest_select_quantized
from fier.cli import main
from fier.dumpio import CacheDump
from fier.evalharness import WorkloadSpec, generate, spike_recall, sweep
from fier.kvcore import exact_scores, relative_l2, topk_oracle
from fier.quant1bit import HEADER_SIZE, PackedKeys, approx_scores, dequantize, load_ratio_fier, printed_value_matches, quantize
from fier.retrieval import SideState, fier_attend, fier_select, make_policy, run_policy

from conftest import ACCEPTANCE_LINES


def record(number, title, ok, detail=""):
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {detail}")
    assert ok, detail


def plain_attention(q, K, V):
    logits = K @ q / np.sqrt(K.shape[1])
    w = np.exp(logits - logits.max())
    return (w / w.sum()) @ V


def test_1_load_ratio_bit_exact():
    t0 = time.perf_counter()
    l, d = 4096, 128
    K = np.random.default_rng(0).standard_normal((l, d))
    ok, parts = True, []
    for g, printed in [(32, "0.125"), (128, "0.08"), (256, "0.07")]:
        payload = len(quantize(K, g).to_bytes()) - HEADER_SIZE
        counted = Fraction(payload, l * d * 2)
        want = (1 + Fraction(32, g)) / 16
        ok &= counted == want == load_ratio_fier(l, g, d).ratio and printed_value_matches(counted, printed)
        parts.append(f"g{g}={counted}")
    for L, printed in [(8, "0.25"), (16, "0.125"), (32, "0.063")]:
        ps = build_page_summaries(K, L)
        counted = Fraction(ps.n_pages * d * 2 * 2, l * d * 2)
        ok &= counted == Fraction(2, L) and printed_value_matches(counted, printed)
        parts.append(f"p{L}={counted}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 1.0
    record(1, "load-ratio bit-exactness", ok, f"{' '.join(parts)} in {elapsed:.2f}s")


def test_2_full_budget_equals_exact_attention():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(200):
        l, d = int(rng.integers(1, 257)), int(rng.integers(1, 33))
        K, V, q = rng.standard_normal((l, d)), rng.standard_normal((l, d)), rng.standard_normal(d)
        g = int(rng.choice([1, 8, 32, 128]))
        res = fier_attend(q, K, V, quantize(K, g), l)
        worst = max(worst, relative_l2(res.output, plain_attention(q, K, V)))
    record(2, "oracle equivalence at n=l", worst <= 1e-6, f"max relative L2 {worst:.2e} over 200 instances")


def test_3_quantizer_bound():
    rng = np.random.default_rng(3)
    violations = g1_mismatch = 0
    for _ in range(200):
        l, d = int(rng.integers(1, 257)), int(rng.integers(1, 33))
        K = rng.standard_normal((l, d)) * rng.choice([1e-3, 1.0, 1e3])
        for g in (1, 8, 32):
            deq = dequantize(quantize(K, g))
            for start in range(0, l, g):
                block, rec = K[start:start + g], deq[start:start + g]
                half = (block.max(axis=0) - block.min(axis=0)) / 2
                violations += int((np.abs(rec - block) > half).sum())
            if g == 1:
                g1_mismatch += int((deq != K).sum())
    record(3, "quantizer half-range bound", violations == 0 and g1_mismatch == 0,
           f"{violations} bound violations, {g1_mismatch} g=1 mismatches")


def test_4_margin_preservation():
    rng = np.random.default_rng(4)
    pairs = qualifying = coarse_qualifying = counterexamples = 0
    while pairs < 1200:
        l, d = int(rng.integers(16, 513)), int(rng.integers(4, 65))
        g = int(rng.choice([1, 2, 4, 8, 16, 32]))
        q = rng.standard_normal(d)
        K = rng.standard_normal((l, d)) * rng.uniform(0.05, 1.0)
        n_spikes = int(rng.integers(1, 17))
        pos = rng.choice(l, n_spikes, replace=False)
        K[pos] += rng.uniform(0, 60) * q / np.linalg.norm(q)
        pk = quantize(K, g)
        exact, est = exact_scores(q, K), approx_scores(q, pk)
        max_err = np.abs(exact - est).max()
        order = np.sort(exact)[::-1]
        for k in {n_spikes, int(rng.integers(1, l))}:
            pairs += 1
            m = order[k - 1] - order[k]
            if max_err < m / 2:
                qualifying += 1
                coarse_qualifying += g > 1
                if fier_select(q, pk, k) != topk_oracle(exact, k):
                    counterexamples += 1
    ok = counterexamples == 0 and pairs >= 1000 and coarse_qualifying > 0
    record(4, "margin-preservation", ok,
           f"{pairs} pairs, {qualifying} qualifying ({coarse_qualifying} with g>1), {counterexamples} counterexamples")


SPIKES = WorkloadSpec(l=8192, d=128, generator="planted_spikes", spike_count=64, spike_gain=8.0, history=0, seed=2024)


def test_5_recall_superiority_at_matched_load():
    t0 = time.perf_counter()
    spikes_on_top = all(
        topk_oracle(exact_scores(wl.queries[0], wl.K), 64).indices.tolist() == wl.spikes[0].tolist()
        for wl in (generate(SPIKES, trial=t) for t in range(100))
    )
    fier, quest = make_policy("fier", g=32), make_policy("quest", L=16, variant="sum")
    assert fier.load_ratio(8192, 128).ratio == quest.load_ratio(8192, 128).ratio == Fraction(1, 8)
    rep = sweep(SPIKES, [fier, quest], [64], trials=100)
    rf, rq = rep.row(fier, 64).recall_mean, rep.row(quest, 64).recall_mean
    elapsed = time.perf_counter() - t0
    ok = spikes_on_top and rf >= rq + 0.05 and elapsed < 120
    record(5, "recall superiority at load ratio 1/8", ok,
           f"Fier-g32 {rf:.4f} vs Quest-p16 {rq:.4f} (spikes hold top-64: {spikes_on_top}) in {elapsed:.1f}s")


def test_6_eviction_misses_mid_context_spikes():
    sink, budget = 4, 64
    spec = WorkloadSpec(l=4096, d=128, generator="planted_spikes", spike_count=16, spike_gain=8.0,
                        spike_exclude_head=sink, spike_exclude_tail=budget - sink, history=0, seed=6)
    fier, stream = make_policy("fier", budget, g=32), make_policy("streaming_llm", budget, sink=sink)
    rs, rf = [], []
    for t in range(100):
        wl = generate(spec, trial=t)
        state = SideState.for_policies([fier], wl.K)
        q, spikes = wl.queries[0], wl.spikes[0]
        rs.append(spike_recall(run_policy(stream, q, wl.K, wl.V).selection, spikes))
        rf.append(spike_recall(run_policy(fier, q, wl.K, wl.V, state).selection, spikes))
    ms, mf = float(np.mean(rs)), float(np.mean(rf))
    record(6, "eviction failure mode", ms < 0.05 and mf > 0.9, f"StreamingLLM {ms:.4f}, Fier-g32 {mf:.4f}")


def test_7_degeneracy_bridges():
    rng = np.random.default_rng(7)
    mismatches = 0
    for _ in range(100):
        l, d = int(rng.integers(2, 300)), int(rng.integers(1, 33))
        K, q = rng.standard_normal((l, d)), rng.standard_normal(d)
        n = int(rng.integers(1, l + 1))
        g = int(rng.choice([2, 8, 32]))
        mismatches += quest_select(q, K, build_page_summaries(K, 1), n, "sum") != topk_oracle(exact_scores(q, K), n)
        pk = quantize(K, g)
        mismatches += quest_select_quantized(q, pk, 1, n) != fier_select(q, pk, n)
    record(7, "degeneracy bridges (L=1)", mismatches == 0, f"{mismatches} mismatches over 2 x 100 instances")


ABLATION = WorkloadSpec(l=4096, d=128, generator="outlier_channels", outlier_channel_count=4, outlier_scale=8.0,
                        drift=2.0, history=0, seed=8)


def test_8_ablation_monotonicity():
    quests = [make_policy("quest", L=L) for L in (32, 16, 8)]
    fiers = [make_policy("fier", g=g) for g in (256, 128, 32)]
    budgets = [64, 128]
    rep = sweep(ABLATION, quests + fiers, budgets, trials=100)
    ok, parts = True, []
    for n in budgets:
        rq = [rep.row(p, n).recall_mean for p in quests]
        rf = [rep.row(p, n).recall_mean for p in fiers]
        ok &= rq[0] < rq[1] < rq[2] and rf[0] < rf[1] < rf[2]
        parts.append(f"n={n} Quest p32/16/8 " + "/".join(f"{x:.3f}" for x in rq)
                     + " Fier g256/128/32 " + "/".join(f"{x:.3f}" for x in rf))
    record(8, "ablation monotonicity", ok, "; ".join(parts))


def test_9_determinism_and_round_trips(tmp_path, capsys):
    argv = ["bench", "--generator", "planted_spikes", "--l", "512", "--d", "32", "--spike-count", "8",
            "--policy", "fier:g=32", "--policy", "quest:L=16", "--policy", "h2o", "--policy", "streaming_llm",
            "--budgets", "8,32", "--trials", "20", "--seed", "99"]
    csvs = []
    for name in ("a.csv", "b.csv"):
        assert main(argv + ["--out", str(tmp_path / name)]) == 0
        csvs.append((tmp_path / name).read_bytes())
    same_csv = csvs[0] == csvs[1]

    r = np.random.default_rng(9)
    dump = CacheDump(r.standard_normal((300, 24)), r.standard_normal((300, 24)), r.standard_normal((3, 24)))
    blob = dump.to_bytes()
    dump_rt = CacheDump.from_bytes(blob).to_bytes() == blob
    packed = quantize(CacheDump.from_bytes(blob).K, 32, half_params=True).to_bytes()
    packed_rt = PackedKeys.from_bytes(packed).to_bytes() == packed

    src = tmp_path / "c.kvd"
    rejected = True
    for bad in (blob[:-1], blob + b"\x00", b"KVD0" + blob[4:], blob[:10]):
        src.write_bytes(bad)
        rejected &= main(["quantize", str(src), "--out", str(tmp_path / "p.fier")]) == 2
    capsys.readouterr()
    ok = same_csv and dump_rt and packed_rt and rejected
    record(9, "determinism and format round-trips", ok,
           f"csv identical={same_csv}, dump rt={dump_rt}, packed rt={packed_rt}, corrupt rejected={rejected}")
