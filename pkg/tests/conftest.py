import numpy as np
import pytest

from namegen.cli import RunConfig, preprocess_records
from namegen.toycorpus import generate_toy_corpus
from namegen.vocab import build_vocab


@pytest.fixture(scope="session")
def toy_corpus():
    return generate_toy_corpus(200, 11)


@pytest.fixture(scope="session")
def toy_splits(toy_corpus):
    return {s: [r for r in toy_corpus if r.split == s]
            for s in ("train", "valid", "test")}


@pytest.fixture(scope="session")
def toy_graphs(toy_splits):
    return {s: preprocess_records(rs) for s, rs in toy_splits.items()}


@pytest.fixture(scope="session")
def toy_vocab(toy_graphs):
    return build_vocab(toy_graphs["train"], min_freq=1)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def small_config():
    return RunConfig(hidden_dim=8, timesteps=2, min_freq=1)


# one PASS/FAIL line per acceptance criterion, shown after the run
ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
