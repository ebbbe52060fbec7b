import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def brute_topk(scores, k):
    """Sort (-score, index) pairs in pure Python."""
    pairs = sorted((-float(s), i) for i, s in enumerate(scores))
    return sorted(i for _, i in pairs[:k])


def brute_attention(q, K, V, idx, scaled=True):
    d = len(q)
    logits = [sum(q[c] * K[i][c] for c in range(d)) for i in idx]
    if scaled:
        logits = [x / d**0.5 for x in logits]
    mx = max(logits)
    w = [np.exp(x - mx) for x in logits]
    tot = sum(w)
    return np.array([sum(w[j] * V[i][c] for j, i in enumerate(idx)) / tot for c in range(d)])


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
