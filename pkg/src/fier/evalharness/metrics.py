"""Retrieval-quality metrics."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..kvcore import Selection, exact_scores
from ..quant1bit import PackedKeys, approx_scores


def recall(selection: Selection, oracle_sel: Selection) -> float:
    """Fraction of the oracle's tokens that ``selection`` also kept."""
    if selection.budget != oracle_sel.budget:
        raise ValueError(f"budget mismatch: {selection.budget} vs {oracle_sel.budget}")
    hits = np.intersect1d(selection.indices, oracle_sel.indices, assume_unique=True).size
    return hits / oracle_sel.budget


def spike_recall(selection: Selection, spikes) -> float:
    spikes = np.asarray(spikes)
    if spikes.size == 0:
        raise ValueError("no planted positions to recall")
    return np.isin(spikes, selection.indices).mean().item()


class MarginReport(NamedTuple):
    margin: float
    max_err: float
    hinge_loss: float
    l2_loss: float
    hinge_symmetric: float


def margin_from_scores(exact, approx, k: int) -> MarginReport:
    """Gap between the k-th and (k+1)-th exact logit, plus estimation-error losses.

    ``hinge_loss`` penalizes ``m/2 - (exact - approx)`` one-sidedly as the
    objective is usually written; ``hinge_symmetric`` penalizes
    ``|exact - approx| - m/2``, which is zero exactly when every error is
    within half the margin.
    """
    exact = np.asarray(exact, dtype=np.float64)
    approx = np.asarray(approx, dtype=np.float64)
    if exact.shape != approx.shape or exact.ndim != 1:
        raise ValueError("exact and approx must be vectors of equal length")
    if not 1 <= k < exact.size:
        raise ValueError(f"k={k} must satisfy 1 <= k < l={exact.size}")
    top = np.sort(exact)[::-1]
    m = float(top[k - 1] - top[k])
    err = exact - approx
    return MarginReport(
        m,
        float(np.abs(err).max()),
        float(np.maximum(0.0, m / 2 - err).sum()),
        float((err**2).sum()),
        float(np.maximum(0.0, np.abs(err) - m / 2).sum()),
    )


def margin_and_errors(q, K, pk: PackedKeys, k: int) -> MarginReport:
    return margin_from_scores(exact_scores(q, K), approx_scores(q, pk), k)
