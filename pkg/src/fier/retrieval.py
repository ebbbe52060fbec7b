"""Token-level retrieval with 1-bit keys, and a uniform policy front end.

A query is scored against the packed keys, the ``n`` best tokens are kept,
and exact attention runs over that subset only. Every baseline is exposed
through :func:`run_policy` with the same result type so the harness can
treat them interchangeably.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

import numpy as np

from . import baselines
from .baselines import EvictionState, PageSummaries
from .kvcore import (
    Selection,
    as_keys,
    exact_scores,
    gather_attention,
    topk_oracle,
)
from .quant1bit import LoadRatio, PackedKeys, approx_scores, load_ratio_fier, load_ratio_quest, quantize

POLICY_NAMES = ("fier", "quest", "quest_quant", "streaming_llm", "h2o", "oracle", "full")

_DEFAULT_PARAMS: dict[str, dict[str, Any]] = {
    "fier": {"g": 32},
    "quest": {"L": 16, "variant": "sum"},
    "quest_quant": {"L": 16, "g": 32},
    "streaming_llm": {"sink": 4},
    "h2o": {"recent": 0},
    "oracle": {},
    "full": {},
}


class MissingStateError(ValueError):
    """The side state lacks the precomputed index a policy needs."""


@dataclass(frozen=True)
class BudgetPolicy:
    name: str
    budget: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in POLICY_NAMES:
            raise ValueError(f"unknown policy {self.name!r}; valid: {', '.join(POLICY_NAMES)}")
        if self.budget < 1:
            raise ValueError(f"budget must be >= 1, got {self.budget}")
        defaults = _DEFAULT_PARAMS[self.name]
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise ValueError(f"unknown parameter(s) {sorted(unknown)} for policy {self.name}")
        merged = {**defaults, **self.params}
        for key in ("g", "L", "sink", "recent"):
            if key in merged:
                v = merged[key]
                if not isinstance(v, (int, np.integer)) or v < (0 if key in ("sink", "recent") else 1):
                    raise ValueError(f"invalid {key}={v!r} for policy {self.name}")
                merged[key] = int(v)
        if merged.get("variant", "sum") not in baselines.PAGE_VARIANTS:
            raise ValueError(f"invalid variant {merged['variant']!r}")
        object.__setattr__(self, "params", merged)

    def with_budget(self, n: int) -> "BudgetPolicy":
        return BudgetPolicy(self.name, n, dict(self.params))

    @property
    def knob(self) -> str:
        p = self.params
        return {
            "fier": lambda: f"g={p['g']}",
            "quest": lambda: f"L={p['L']};{p['variant']}",
            "quest_quant": lambda: f"L={p['L']};g={p['g']}",
            "streaming_llm": lambda: f"sink={p['sink']}",
            "h2o": lambda: f"recent={p['recent']}",
            "oracle": lambda: "",
            "full": lambda: "",
        }[self.name]()

    @property
    def label(self) -> str:
        """Short display name, e.g. ``Fier-g32`` or ``Quest-p16-w/quant``."""
        p = self.params
        if self.name == "fier":
            return f"Fier-g{p['g']}"
        if self.name == "quest":
            return f"Quest-p{p['L']}" + ("" if p["variant"] == "sum" else "-max")
        if self.name == "quest_quant":
            return f"Quest-p{p['L']}-w/quant"
        return self.name

    def load_ratio(self, l: int, d: int) -> LoadRatio:
        """Estimation reads relative to the float16 key cache."""
        if self.name in ("fier", "quest_quant"):
            return load_ratio_fier(l, self.params["g"], d)
        if self.name == "quest":
            return load_ratio_quest(self.params["L"], l, d)
        if self.name == "oracle":
            return LoadRatio(l * d * 16, l * d * 16)
        return LoadRatio(0, l * d * 16)


@dataclass
class SideState:
    """Per-cache precomputation shared across queries.

    ``packed`` and ``pages`` are keyed by group size and page size. The
    eviction state is the only mutable piece and belongs to one sequence.
    """

    packed: dict[int, PackedKeys] = field(default_factory=dict)
    pages: dict[int, PageSummaries] = field(default_factory=dict)
    eviction: EvictionState | None = None

    @classmethod
    def for_policies(cls, policies, K, eviction: EvictionState | None = None) -> "SideState":
        K = as_keys(K)
        state = cls(eviction=eviction)
        for pol in policies:
            if pol.name in ("fier", "quest_quant"):
                g = pol.params["g"]
                if g not in state.packed:
                    state.packed[g] = quantize(K, g)
            if pol.name == "quest":
                L = pol.params["L"]
                if L not in state.pages:
                    state.pages[L] = baselines.build_page_summaries(K, L)
        return state


@dataclass(frozen=True, eq=False)
class RetrievalResult:
    selection: Selection
    output: np.ndarray
    est_scores: np.ndarray | None
    bytes_loaded_for_estimation: int
    key_cache_bytes: int

    @property
    def load_ratio(self) -> Fraction:
        return Fraction(self.bytes_loaded_for_estimation, self.key_cache_bytes)


def fier_select(q, pk: PackedKeys, n: int) -> Selection:
    if not 1 <= n <= pk.l:
        raise ValueError(f"budget {n} out of range [1, {pk.l}]")
    return topk_oracle(approx_scores(q, pk), n)


def fier_attend(q, K, V, pk: PackedKeys, n: int, scaled: bool = True) -> RetrievalResult:
    K = as_keys(K)
    if K.shape != (pk.l, pk.d):
        raise ValueError(f"packed keys {pk.l}x{pk.d} do not match cache {K.shape}")
    est = approx_scores(q, pk)
    if not 1 <= n <= pk.l:
        raise ValueError(f"budget {n} out of range [1, {pk.l}]")
    sel = topk_oracle(est, n)
    out = gather_attention(q, K, V, sel, scaled=scaled)
    return RetrievalResult(sel, out, est, pk.estimation_nbytes(), pk.l * pk.d * 2)


def _need(table: dict, key: int, what: str, policy: BudgetPolicy):
    try:
        return table[key]
    except KeyError:
        raise MissingStateError(f"policy {policy.label} needs {what} for {key} in side_state") from None


def policy_selection(policy: BudgetPolicy, q, K, side_state: SideState | None = None):
    """Run only the selection rule of ``policy``.

    Returns ``(selection, est_scores, estimation_bytes)``.
    """
    K = as_keys(K)
    l, d = K.shape
    n = min(policy.budget, l)
    p = policy.params
    side_state = side_state or SideState()
    est = None
    nbytes = 0
    if policy.name == "fier":
        pk = _need(side_state.packed, p["g"], "packed keys", policy)
        est = approx_scores(q, pk)
        sel = topk_oracle(est, n)
        nbytes = pk.estimation_nbytes()
    elif policy.name == "quest":
        ps = _need(side_state.pages, p["L"], "page summaries", policy)
        est = baselines.quest_page_scores(q, ps, p["variant"])
        sel = baselines.select_pages(est, l, p["L"], n)
        nbytes = ps.n_pages * d * 2 * 2
    elif policy.name == "quest_quant":
        pk = _need(side_state.packed, p["g"], "packed keys", policy)
        est = baselines.quantized_page_scores(q, pk, p["L"])
        sel = baselines.select_pages(est, l, p["L"], n)
        nbytes = pk.estimation_nbytes()
    elif policy.name == "streaming_llm":
        sel = baselines.streaming_llm_select(l, n, min(p["sink"], n))
    elif policy.name == "h2o":
        if side_state.eviction is None:
            raise MissingStateError("policy h2o needs an eviction state in side_state")
        est = side_state.eviction.cumulative_scores
        sel = baselines.h2o_select(side_state.eviction, n, min(p["recent"], n))
    elif policy.name == "oracle":
        est = exact_scores(q, K)
        sel = topk_oracle(est, n)
        nbytes = l * d * 2
    else:
        # pass-through: every token, regardless of budget
        sel = Selection(np.arange(l), l, l)
    return sel, est, nbytes


def run_policy(policy: BudgetPolicy, q, K, V, side_state: SideState | None = None, scaled: bool = True) -> RetrievalResult:
    """Select tokens under ``policy`` and attend over them exactly."""
    K = as_keys(K)
    sel, est, nbytes = policy_selection(policy, q, K, side_state)
    out = gather_attention(q, K, V, sel, scaled=scaled)
    return RetrievalResult(sel, out, est, nbytes, K.shape[0] * K.shape[1] * 2)


def make_policy(name: str, budget: int = 1, **params) -> BudgetPolicy:
    return BudgetPolicy(name, budget, params)
