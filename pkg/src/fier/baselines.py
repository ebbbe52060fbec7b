"""Page-level retrieval (Quest) and eviction baselines (StreamingLLM, H2O)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kvcore import DimensionError, Selection, as_keys, as_query, topk_oracle
from .quant1bit import PackedKeys, approx_scores

PAGE_VARIANTS = ("sum", "max")


@dataclass(frozen=True, eq=False)
class PageSummaries:
    """Channel-wise max/min key vectors of each page of ``L`` consecutive tokens."""

    L: int
    max_vecs: np.ndarray
    min_vecs: np.ndarray
    l: int
    d: int

    @property
    def n_pages(self) -> int:
        return self.max_vecs.shape[0]

    def page_bounds(self, p: int) -> tuple[int, int]:
        return p * self.L, min((p + 1) * self.L, self.l)


def build_page_summaries(K, L: int) -> PageSummaries:
    K = as_keys(K)
    if L < 1:
        raise ValueError(f"page size must be >= 1, got {L}")
    starts = np.arange(0, K.shape[0], L)
    return PageSummaries(
        L,
        np.maximum.reduceat(K, starts, axis=0),
        np.minimum.reduceat(K, starts, axis=0),
        K.shape[0],
        K.shape[1],
    )


def quest_page_scores(q, ps: PageSummaries, variant: str = "sum") -> np.ndarray:
    """Per-page importance from the elementwise products with max and min keys.

    ``"max"`` takes the largest product over all channels; ``"sum"`` adds the
    per-channel maxima and upper-bounds every member token's logit.
    """
    q = as_query(q, ps.d)
    upper = np.maximum(ps.max_vecs * q, ps.min_vecs * q)
    if variant == "max":
        return upper.max(axis=1)
    if variant == "sum":
        return upper.sum(axis=1)
    raise ValueError(f"unknown page score variant {variant!r}; expected one of {PAGE_VARIANTS}")


def select_pages(page_scores, l: int, L: int, n: int) -> Selection:
    """Take whole pages best-first, then top up from the next page's lowest indices."""
    page_scores = np.asarray(page_scores, dtype=np.float64)
    if not 1 <= n <= l:
        raise ValueError(f"budget {n} out of range [1, {l}]")
    n_pages = -(-l // L)
    if page_scores.shape != (n_pages,):
        raise DimensionError(f"expected {n_pages} page scores, got {page_scores.shape}")
    order = np.argsort(-page_scores, kind="stable")
    chosen = []
    remaining = n
    for p in order:
        start, stop = p * L, min((p + 1) * L, l)
        size = stop - start
        if size <= remaining:
            chosen.append(np.arange(start, stop))
            remaining -= size
        else:
            chosen.append(np.arange(start, start + remaining))
            remaining = 0
        if remaining == 0:
            break
    return Selection(np.sort(np.concatenate(chosen)), n, l)


def quest_select(q, K, ps: PageSummaries, n: int, variant: str = "sum") -> Selection:
    if np.asarray(K).shape[0] != ps.l:
        raise DimensionError("page summaries were built for a different cache")
    return select_pages(quest_page_scores(q, ps, variant), ps.l, ps.L, n)


def quantized_page_scores(q, pk: PackedKeys, L: int) -> np.ndarray:
    """Mean quantized logit over each page's members."""
    est = approx_scores(q, pk)
    starts = np.arange(0, pk.l, L)
    counts = np.diff(np.append(starts, pk.l))
    return np.add.reduceat(est, starts) / counts


def quest_select_quantized(q, pk: PackedKeys, L: int, n: int) -> Selection:
    if L < 1:
        raise ValueError(f"page size must be >= 1, got {L}")
    return select_pages(quantized_page_scores(q, pk, L), pk.l, L, n)


def streaming_llm_select(l: int, n: int, sink: int = 4) -> Selection:
    """Attention-sink prefix plus a recent window; ignores the query."""
    if not 0 <= sink <= n <= l:
        raise ValueError(f"need 0 <= sink <= n <= l, got sink={sink} n={n} l={l}")
    idx = np.concatenate([np.arange(sink), np.arange(l - (n - sink), l)])
    return Selection(idx, n, l)


@dataclass(frozen=True, eq=False)
class EvictionState:
    """Accumulated softmax mass per token. Owned by one decode sequence."""

    cumulative_scores: np.ndarray
    steps: int = 0

    @classmethod
    def empty(cls, l: int) -> "EvictionState":
        return cls(np.zeros(l))


def h2o_accumulate(state: EvictionState, softmax_scores) -> EvictionState:
    p = np.asarray(softmax_scores, dtype=np.float64)
    if p.shape != state.cumulative_scores.shape:
        raise DimensionError(f"score length {p.shape} != state length {state.cumulative_scores.shape}")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError("h2o_accumulate expects a softmax distribution")
    return EvictionState(state.cumulative_scores + p, state.steps + 1)


def h2o_select(state: EvictionState, n: int, recent: int = 0) -> Selection:
    """Heavy hitters by cumulative mass plus the ``recent`` newest tokens."""
    acc = state.cumulative_scores
    l = acc.size
    if not 0 <= recent <= n <= l:
        raise ValueError(f"need 0 <= recent <= n <= l, got recent={recent} n={n} l={l}")
    tail = np.arange(l - recent, l)
    heavy = n - recent
    if heavy == 0:
        return Selection(tail, n, l)
    head = topk_oracle(acc[: l - recent], heavy).indices
    return Selection(np.concatenate([head, tail]), n, l)
