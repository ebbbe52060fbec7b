"""Factorial policy x budget x trial sweeps and Top-n position maps."""

from __future__ import annotations

import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..baselines import EvictionState, h2o_accumulate
from ..kvcore import exact_scores, full_attention, relative_l2, softmax, topk_oracle
from ..quant1bit import approx_scores
from ..retrieval import BudgetPolicy, SideState, policy_selection, run_policy
from .workload import WorkloadSpec, generate

CSV_FIELDS = (
    "policy", "budget", "knob", "load_ratio", "recall_mean", "recall_std",
    "out_err_mean", "margin_mean", "maxerr_mean", "trials", "seed",
)


@dataclass(frozen=True)
class TrialRow:
    policy: str
    knob: str
    budget: int
    trial: int
    recall: float
    out_err: float
    est_bytes: int
    margin: float
    max_err: float


@dataclass(frozen=True)
class AggregateRow:
    policy: str
    budget: int
    knob: str
    load_ratio: float
    recall_mean: float
    recall_std: float
    out_err_mean: float
    margin_mean: float
    maxerr_mean: float
    trials: int
    seed: int


@dataclass
class RecallReport:
    rows: list[AggregateRow]
    trial_rows: list[TrialRow] = field(default_factory=list)
    seed: int = 0

    def row(self, policy: BudgetPolicy | str, budget: int, knob: str | None = None) -> AggregateRow:
        name = policy.name if isinstance(policy, BudgetPolicy) else policy
        if isinstance(policy, BudgetPolicy) and knob is None:
            knob = policy.knob
        for r in self.rows:
            if r.policy == name and r.budget == budget and (knob is None or r.knob == knob):
                return r
        raise KeyError((name, budget, knob))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(CSV_FIELDS) + "\n")
        for r in self.rows:
            vals = [r.policy, str(r.budget), r.knob]
            vals += [_fmt(getattr(r, f)) for f in CSV_FIELDS[3:9]]
            vals += [str(r.trials), str(r.seed)]
            buf.write(",".join(vals) + "\n")
        return buf.getvalue()

    def to_json(self) -> str:
        rows = [{k: _json_num(v) for k, v in asdict(r).items()} for r in self.rows]
        return json.dumps({"seed": self.seed, "fields": list(CSV_FIELDS), "rows": rows}, indent=2) + "\n"


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


def _json_num(v):
    if isinstance(v, float) and math.isnan(v):
        return None
    return v


def worker_count(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get("FIER_THREADS", "0") or 0)
    return workers if workers > 0 else min(8, os.cpu_count() or 1)


def eviction_history(K, queries, scaled: bool = True) -> EvictionState:
    """H2O state after attending ``queries`` over ``K`` in order."""
    state = EvictionState.empty(np.asarray(K).shape[0])
    for h in queries:
        state = h2o_accumulate(state, softmax(exact_scores(h, K, scaled=scaled)))
    return state


def _run_trial(spec: WorkloadSpec, policies: list[BudgetPolicy], budgets: list[int], t: int) -> list[TrialRow]:
    wl = generate(spec, trial=t)
    K, V = wl.K, wl.V
    l = K.shape[0]
    base = SideState.for_policies(policies, K)
    need_h2o = any(p.name == "h2o" for p in policies)
    history = list(wl.history)
    acc: dict[tuple[int, int], list] = {}
    for q in wl.queries:
        state = SideState(base.packed, base.pages, eviction_history(K, history) if need_h2o else None)
        history.append(q)
        exact = exact_scores(q, K)
        ref = full_attention(q, K, V)
        approx_by_g = {g: approx_scores(q, pk) for g, pk in base.packed.items()}
        order = np.sort(exact)[::-1]
        for bi, n in enumerate(budgets):
            n_eff = min(n, l)
            oracle = topk_oracle(exact, n_eff)
            margin = float(order[n_eff - 1] - order[n_eff]) if n_eff < l else math.nan
            for pi, pol in enumerate(policies):
                res = run_policy(pol.with_budget(n), q, K, V, state)
                hits = np.intersect1d(res.selection.indices, oracle.indices, assume_unique=True).size
                max_err = math.nan
                if pol.name in ("fier", "quest_quant"):
                    max_err = float(np.abs(exact - approx_by_g[pol.params["g"]]).max())
                acc.setdefault((pi, bi), []).append(
                    (hits / n_eff, relative_l2(res.output, ref), res.bytes_loaded_for_estimation, margin, max_err)
                )
    rows = []
    for (pi, bi), vals in sorted(acc.items()):
        v = np.array(vals, dtype=np.float64)
        pol = policies[pi]
        rows.append(TrialRow(pol.name, pol.knob, budgets[bi], t, *(float(x) for x in v[:, :2].mean(0)),
                             int(v[0, 2]), float(v[:, 3].mean()), float(v[:, 4].mean())))
    return rows


def _nanmean(x: np.ndarray) -> float:
    x = x[~np.isnan(x)]
    return float(x.mean()) if x.size else math.nan


def sweep(workload: WorkloadSpec, policies, budgets, trials: int = 100, workers: int | None = None) -> RecallReport:
    """Evaluate every (policy, budget) pair on ``trials`` seeded instances.

    Trial ``t`` draws its instance from the master seed split by ``t``, so
    results do not depend on scheduling or worker count.
    """
    policies = list(policies)
    budgets = [int(b) for b in budgets]
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not policies or not budgets:
        raise ValueError("need at least one policy and one budget")
    n_workers = worker_count(workers)
    if n_workers == 1:
        per_trial = [_run_trial(workload, policies, budgets, t) for t in range(trials)]
    else:
        with ThreadPoolExecutor(n_workers) as ex:
            per_trial = list(ex.map(lambda t: _run_trial(workload, policies, budgets, t), range(trials)))
    trial_rows = sorted((r for rows in per_trial for r in rows), key=lambda r: r.trial)

    probe = generate(workload, trial=0)
    l, d = probe.K.shape
    rows = []
    for pol in policies:
        for n in budgets:
            mine = [r for r in trial_rows if r.policy == pol.name and r.knob == pol.knob and r.budget == n]
            rec = np.array([r.recall for r in mine])
            rows.append(AggregateRow(
                pol.name, n, pol.knob,
                float(pol.load_ratio(l, d).ratio),
                float(rec.mean()),
                float(rec.std(ddof=1)) if rec.size > 1 else 0.0,
                float(np.mean([r.out_err for r in mine])),
                _nanmean(np.array([r.margin for r in mine])),
                _nanmean(np.array([r.max_err for r in mine])),
                len(mine),
                workload.seed,
            ))
    return RecallReport(rows, trial_rows, workload.seed)


def token_position_map(q, K, policies, n: int, side_state: SideState | None = None) -> dict[str, np.ndarray]:
    """0/1 masks of the positions each policy keeps, oracle first."""
    K = np.asarray(K, dtype=np.float64)
    l = K.shape[0]
    if not 1 <= n <= l:
        raise ValueError(f"budget {n} out of range [1, {l}]")
    policies = [p.with_budget(n) for p in policies]
    if side_state is None:
        side_state = SideState.for_policies(policies, K)
    maps = {"oracle": topk_oracle(exact_scores(q, K), n).mask(l)}
    for pol in policies:
        label = pol.label
        while label in maps:
            label += "'"
        maps[label] = policy_selection(pol, q, K, side_state)[0].mask(l)
    return maps


def position_map_csv(maps: dict[str, np.ndarray]) -> str:
    oracle = maps["oracle"]
    n = int(oracle.sum())
    l = oracle.size
    buf = io.StringIO()
    buf.write("policy,recall," + ",".join(f"t{i}" for i in range(l)) + "\n")
    for label, m in maps.items():
        rec = int((m & oracle).sum()) / n
        buf.write(f"{label},{rec!r}," + ",".join(map(str, m.tolist())) + "\n")
    return buf.getvalue()
