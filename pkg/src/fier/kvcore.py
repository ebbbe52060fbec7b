"""Single-head KV cache model and exact full-precision attention.

Everything here is a pure function over numpy arrays. Keys and values are
``(l, d)`` float64 matrices, a query is a length-``d`` vector. These routines
are the ground truth every approximate policy is checked against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Raised when array shapes disagree."""


def as_keys(K, name: str = "K") -> np.ndarray:
    """Validate and widen a key/value matrix to float64."""
    arr = np.asarray(K, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} must be a non-empty (l, d) matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_query(q, d: int | None = None) -> np.ndarray:
    arr = np.asarray(q, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"query must be a vector, got shape {arr.shape}")
    if d is not None and arr.shape[0] != d:
        raise DimensionError(f"query length {arr.shape[0]} != head dim {d}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("query contains non-finite entries")
    return arr


@dataclass(frozen=True)
class Selection:
    """Sorted, unique token positions kept under a cache budget."""

    indices: np.ndarray
    budget: int
    l: int | None = field(default=None, compare=False)

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1:
            raise DimensionError("selection indices must be one-dimensional")
        if idx.size and np.any(np.diff(idx) <= 0):
            raise ValueError("selection indices must be strictly increasing")
        if idx.size and idx[0] < 0:
            raise ValueError("selection indices must be non-negative")
        if self.l is not None and idx.size and idx[-1] >= self.l:
            raise ValueError(f"selection index {idx[-1]} out of range for l={self.l}")
        if idx.size > self.budget:
            raise ValueError(f"{idx.size} indices exceed budget {self.budget}")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @classmethod
    def from_positions(cls, positions, budget: int, l: int | None = None) -> "Selection":
        return cls(np.unique(np.asarray(positions, dtype=np.int64)), budget, l)

    def __len__(self) -> int:
        return int(self.indices.size)

    def __eq__(self, other):
        if not isinstance(other, Selection):
            return NotImplemented
        return self.budget == other.budget and np.array_equal(self.indices, other.indices)

    def __hash__(self):
        return hash((self.budget, self.indices.tobytes()))

    def as_set(self) -> set[int]:
        return set(self.indices.tolist())

    def mask(self, l: int) -> np.ndarray:
        m = np.zeros(l, dtype=np.uint8)
        m[self.indices] = 1
        return m


def exact_scores(q, K, scaled: bool = False) -> np.ndarray:
    """Attention logits ``q @ K.T``, optionally divided by ``sqrt(d)``."""
    K = as_keys(K)
    q = as_query(q, K.shape[1])
    logits = K @ q
    if scaled:
        logits = logits / np.sqrt(K.shape[1])
    return logits


def softmax(logits) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise DimensionError("softmax expects a non-empty vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("softmax expects finite logits")
    e = np.exp(x - x.max())
    return e / e.sum()


def topk_oracle(scores, k: int) -> Selection:
    """Indices of the ``k`` largest scores, lowest index winning ties."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1:
        raise DimensionError("scores must be a vector")
    l = s.size
    if not 1 <= k <= l:
        raise ValueError(f"k={k} out of range [1, {l}]")
    # stable sort on -s keeps lower indices first among equal scores
    order = np.argsort(-s, kind="stable")
    return Selection(np.sort(order[:k]), k, l)


def gather_attention(q, K, V, sel: Selection, scaled: bool = True) -> np.ndarray:
    """Full-precision attention restricted to the selected rows."""
    K = as_keys(K)
    V = as_keys(V, "V")
    if K.shape[0] != V.shape[0]:
        raise DimensionError(f"K has {K.shape[0]} rows but V has {V.shape[0]}")
    q = as_query(q, K.shape[1])
    idx = sel.indices
    if idx.size == 0:
        raise ValueError("cannot attend over an empty selection")
    if idx[-1] >= K.shape[0]:
        raise ValueError(f"selection index {idx[-1]} out of range for l={K.shape[0]}")
    w = softmax(exact_scores(q, K[idx], scaled=scaled))
    return w @ V[idx]


def full_attention(q, K, V, scaled: bool = True) -> np.ndarray:
    l = np.asarray(K).shape[0]
    return gather_attention(q, K, V, Selection(np.arange(l), l, l), scaled=scaled)


def relative_l2(a, b) -> float:
    """``|a - b| / |b|``; absolute norm when the reference is zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.linalg.norm(b)
    diff = np.linalg.norm(a - b)
    return float(diff / denom) if denom > 0 else float(diff)
