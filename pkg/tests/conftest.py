import numpy as np
import pytest

from ffattention.model import PoolingMode, SequenceBatch
from ffattention.verify import random_params


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_batch(rng, B, T):
    return SequenceBatch(rng.uniform(-1, 1, (B, T, 2)), rng.uniform(0, 1, B))


@pytest.fixture(params=list(PoolingMode), ids=lambda p: p.value)
def pooling(request):
    return request.param


@pytest.fixture
def small(rng, pooling):
    return random_params(4, pooling, rng, scale=0.5), make_batch(rng, 3, 5)


ACCEPTANCE_LINES = []


def record(criterion: str, passed, detail: str):
    status = {True: "PASS", False: "FAIL", None: "SKIP"}[passed]
    ACCEPTANCE_LINES.append(f"[{status}] {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
