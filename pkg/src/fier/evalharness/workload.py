"""Seeded synthetic caches.

``gaussian``: i.i.d. standard-normal keys, values and queries.
``outlier_channels``: gaussian with a few key channels inflated.
Any generator can add ``drift``: slowly varying per-channel key offsets, the
kind of position-dependent structure real caches show.
``planted_spikes``: gaussian plus, for every query, ``spike_count`` keys
nudged toward that query at random positions, so each query has its own
scattered set of important tokens.
``from_dump``: caches and queries read from a dump file.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..dumpio import read_dump

GENERATORS = ("gaussian", "planted_spikes", "outlier_channels", "from_dump")


@dataclass(frozen=True)
class WorkloadSpec:
    l: int = 1024
    d: int = 64
    generator: str = "gaussian"
    n_queries: int = 1
    spike_count: int = 0
    spike_gain: float = 8.0
    # spikes are only planted in [spike_exclude_head, l - spike_exclude_tail)
    spike_exclude_head: int = 0
    spike_exclude_tail: int = 0
    outlier_channel_count: int = 0
    outlier_scale: float = 1.0
    # amplitude of a smooth per-channel offset that wanders along the sequence
    drift: float = 0.0
    # unspiked queries whose attention seeds the H2O history
    history: int = 8
    seed: int = 0
    path: str | None = None

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}; valid: {', '.join(GENERATORS)}")
        if self.generator == "from_dump":
            if not self.path:
                raise ValueError("from_dump workload needs a path")
            return
        if self.l < 1 or self.d < 1 or self.n_queries < 1 or self.history < 0:
            raise ValueError("l, d, n_queries must be >= 1 and history >= 0")
        if self.outlier_channel_count > self.d:
            raise ValueError("more outlier channels than channels")
        if self.generator == "planted_spikes":
            room = self.l - self.spike_exclude_head - self.spike_exclude_tail
            if self.spike_count < 1 or self.spike_count * self.n_queries > room:
                raise ValueError(f"cannot place {self.spike_count} spikes x {self.n_queries} queries in {room} slots")


@dataclass(frozen=True, eq=False)
class Workload:
    K: np.ndarray
    V: np.ndarray
    queries: np.ndarray
    history: np.ndarray
    spikes: list[np.ndarray] = field(default_factory=list)

    def __iter__(self):
        return iter((self.K, self.V, list(self.queries)))


def trial_seed(master: int, trial: int) -> np.random.SeedSequence:
    """Independent stream for ``trial`` split off the master seed."""
    return np.random.SeedSequence(master, spawn_key=(trial,))


def generate(spec: WorkloadSpec, trial: int | None = None) -> Workload:
    if spec.generator == "from_dump":
        dump = read_dump(spec.path)
        if dump.queries.shape[0] == 0:
            raise ValueError("dump carries no queries")
        m = dump.queries.shape[0]
        t = 0 if trial is None else trial % m
        # earlier queries of the dump act as decode history
        return Workload(dump.K, dump.V, dump.queries[t : t + 1], dump.queries[:t])

    ss = np.random.SeedSequence(spec.seed) if trial is None else trial_seed(spec.seed, trial)
    rng = np.random.default_rng(ss)
    l, d = spec.l, spec.d
    K = rng.standard_normal((l, d))
    V = rng.standard_normal((l, d))
    Q = rng.standard_normal((spec.n_queries, d))
    H = rng.standard_normal((spec.history, d))

    if spec.drift:
        K += spec.drift * _channel_drift(rng, l, d)

    if spec.outlier_channel_count:
        ch = rng.choice(d, spec.outlier_channel_count, replace=False)
        K[:, ch] *= spec.outlier_scale

    spikes = []
    if spec.generator == "planted_spikes":
        pool = np.arange(spec.spike_exclude_head, l - spec.spike_exclude_tail)
        picked = rng.choice(pool, spec.spike_count * spec.n_queries, replace=False)
        for j in range(spec.n_queries):
            pos = np.sort(picked[j * spec.spike_count : (j + 1) * spec.spike_count])
            qhat = Q[j] / np.linalg.norm(Q[j])
            # raises each spike's logit by spike_gain * |q|, i.e. spike_gain noise std devs
            K[pos] += spec.spike_gain * qhat
            spikes.append(pos)
    return Workload(K, V, Q, H, spikes)


def _channel_drift(rng: np.random.Generator, l: int, d: int, harmonics: int = 4) -> np.ndarray:
    """Unit-scale low-frequency offsets, one random waveform per channel."""
    t = np.arange(l)[:, None, None] / l
    f = np.arange(1, harmonics + 1)[None, None, :]
    amp = rng.standard_normal((1, d, harmonics)) / np.sqrt(harmonics)
    phase = rng.uniform(0, 2 * np.pi, (1, d, harmonics))
    return (amp * np.sin(2 * np.pi * f * t + phase)).sum(axis=2)


def with_seed(spec: WorkloadSpec, seed: int) -> WorkloadSpec:
    return replace(spec, seed=seed)
